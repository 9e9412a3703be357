//! Dense double-precision tensors with a tape-based reverse-mode gradient engine.
//!
//! Parameters live in [`Tensor`]s. A forward pass borrows them onto a [`Tape`]
//! as leaves, records every primitive it applies, and [`Tape::backward`] walks
//! the record in reverse to produce [`Gradients`] for the tracked leaves. The
//! tape never writes into the tensors it borrows; gradients are folded back in
//! with [`Tensor::accumulate_grad`] once the tape is dropped.

mod archive;
mod gradcheck;
mod gru;
mod kernels;
mod tape;

pub use archive::{load_archive, save_archive, ArchiveEntry, ArchiveManifest};
pub use gradcheck::{grad_check, grad_check_many, relative_error};
pub use gru::{gru_cell, GruVars};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

/// Row-major dense array. `grad` is allocated exactly when the tensor requires
/// gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("tensor", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
            grad: None,
        }
    }

    /// Marks the tensor as a trainable leaf and allocates a zeroed gradient.
    pub fn with_grad(mut self) -> Self {
        self.set_requires_grad(true);
        self
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        match (requires_grad, self.grad.is_some()) {
            (true, false) => self.grad = Some(vec![0.0; self.data.len()]),
            (false, true) => self.grad = None,
            _ => {}
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Adds `delta` into the gradient buffer. No-op for untracked tensors.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<()> {
        let Some(g) = self.grad.as_mut() else {
            return Ok(());
        };
        if g.len() != delta.len() {
            return Err(Error::shape("accumulate_grad", &self.shape, &[delta.len()]));
        }
        g.iter_mut().zip(delta).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Value at a 2-d index.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        let cols = self.shape.get(1).copied().unwrap_or(1);
        self.data[row * cols + col]
    }
}

/// Interprets a shape as a matrix: 2-d as is, 1-d as a column, 0-d as 1x1.
pub(crate) fn as_matrix(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, 1),
        [r, c] => (*r, *c),
        _ => (shape[0], shape[1..].iter().product()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_buffer_follows_requires_grad() {
        let mut t = Tensor::zeros(&[2, 3]);
        assert!(t.grad().is_none());
        t.set_requires_grad(true);
        assert_eq!(t.grad().unwrap().len(), 6);
        t.set_requires_grad(false);
        assert!(t.grad().is_none());
    }

    #[test]
    fn new_rejects_wrong_length() {
        assert!(matches!(
            Tensor::new(&[2, 2], vec![1.0; 3]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn accumulate_is_additive() {
        let mut t = Tensor::zeros(&[2]).with_grad();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0, 4.0]);
    }
}
