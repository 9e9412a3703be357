use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

const EPS: f64 = 1e-5;

/// `|a − b| / max(1e-8, |a| + |b|)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1e-8, a.abs() + b.abs())
}

/// Maximum relative error between tape gradients and central differences of
/// a scalar function of one tensor.
pub fn grad_check<F>(f: F, point: &Tensor) -> Result<f64>
where
    F: for<'t> Fn(&Tape<'t>, Var) -> Result<Var>,
{
    grad_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(point),
        EPS,
    )
}

/// Same as [`grad_check`] over several input tensors at once, with an
/// explicit step size.
pub fn grad_check_many<F>(f: F, points: &[Tensor], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&Tape<'t>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf_owned(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = tape.item(out);
        if !v.is_finite() {
            return Err(Error::Numeric(format!("function value {v}")));
        }
        Ok(v)
    };

    for p in points {
        if let Some(bad) = p.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("input coordinate {bad}")));
        }
    }

    let tracked: Vec<Tensor> = points.iter().map(|p| p.clone().with_grad()).collect();
    let analytic: Vec<Vec<f64>> = {
        let tape = Tape::new();
        let vars: Vec<Var> = tracked.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter()
            .zip(points)
            .map(|(v, p)| {
                grads
                    .wrt(*v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; p.numel()])
            })
            .collect()
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = points.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        for (i, &g) in grad.iter().enumerate() {
            let orig = points[t].data()[i];
            work[t].data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work[t].data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work[t].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            if !g.is_finite() {
                return Err(Error::Numeric(format!("analytic gradient {g}")));
            }
            worst = worst.max(relative_error(g, numeric));
        }
    }
    Ok(worst)
}
