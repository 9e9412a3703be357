use super::{Tape, Var};
use crate::error::{Error, Result};

/// Gate parameters of a gated recurrent unit, one matrix and bias per gate
/// for the input (`i`) and hidden (`h`) paths: reset `r`, update `z`,
/// candidate `n`. Input maps are `hidden × input`, hidden maps `hidden × hidden`.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_ir: Var,
    pub w_iz: Var,
    pub w_in: Var,
    pub w_hr: Var,
    pub w_hz: Var,
    pub w_hn: Var,
    pub b_ir: Var,
    pub b_iz: Var,
    pub b_in: Var,
    pub b_hr: Var,
    pub b_hz: Var,
    pub b_hn: Var,
}

fn affine(tape: &Tape<'_>, x: Var, w: Var, b: Var) -> Result<Var> {
    let wt = tape.transpose(w)?;
    tape.add_row(tape.matmul(x, wt)?, b)
}

/// One GRU step over a batch of rows:
///
/// ```text
/// r  = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z  = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
///
/// `input` is `B × input` (or a single vector), `hidden` is `B × hidden`.
pub fn gru_cell(tape: &Tape<'_>, input: Var, hidden: Var, p: &GruVars) -> Result<Var> {
    let in_shape = tape.shape(input);
    let h_shape = tape.shape(hidden);
    let (x, h, vector) = match (in_shape.as_slice(), h_shape.as_slice()) {
        ([a], [b]) => (
            tape.reshape(input, &[1, *a])?,
            tape.reshape(hidden, &[1, *b])?,
            true,
        ),
        ([ra, _], [rb, _]) if ra == rb => (input, hidden, false),
        _ => return Err(Error::shape("gru_cell", &in_shape, &h_shape)),
    };
    let wshape = tape.shape(p.w_ir);
    let hshape = tape.shape(p.w_hr);
    let in_dim = *tape.shape(x).last().unwrap();
    let hid_dim = *tape.shape(h).last().unwrap();
    if wshape != [hid_dim, in_dim] || hshape != [hid_dim, hid_dim] {
        return Err(Error::shape("gru_cell", &wshape, &[hid_dim, in_dim]));
    }

    let r = tape.sigmoid(tape.add(
        affine(tape, x, p.w_ir, p.b_ir)?,
        affine(tape, h, p.w_hr, p.b_hr)?,
    )?);
    let z = tape.sigmoid(tape.add(
        affine(tape, x, p.w_iz, p.b_iz)?,
        affine(tape, h, p.w_hz, p.b_hz)?,
    )?);
    let gated = tape.mul(r, affine(tape, h, p.w_hn, p.b_hn)?)?;
    let n = tape.tanh(tape.add(affine(tape, x, p.w_in, p.b_in)?, gated)?);
    // n + z ⊙ (h − n)
    let out = tape.add(n, tape.mul(z, tape.sub(h, n)?)?)?;
    if vector {
        tape.reshape(out, &[hid_dim])
    } else {
        Ok(out)
    }
}
