use crate::error::{Error, Result};
use crate::fgnn::ModelParams;

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Weight of the L2 term added to every gradient before the update.
    pub l2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2: 1e-5,
        }
    }
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|(_, t)| vec![0.0; t.numel()])
            .collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update of every parameter from its gradient
/// buffer. The buffers are left untouched.
pub fn adam_step(
    params: &mut ModelParams,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    let n = params.tensors().len();
    if state.m.len() != n || state.v.len() != n {
        return Err(Error::shape("adam_step", &[n], &[state.m.len()]));
    }
    for (name, t) in params.tensors() {
        let grad = t
            .grad()
            .ok_or_else(|| Error::Contract(format!("parameter {name} has no gradient buffer")))?;
        if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("gradient of {name} holds {bad}")));
        }
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for (k, (_, t)) in params.tensors_mut().iter_mut().enumerate() {
        let grad = t.grad().expect("checked above").to_vec();
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, theta) in t.data_mut().iter_mut().enumerate() {
            let g = grad[i] + cfg.l2 * *theta;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *theta -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
