//! Dense tensors, a reverse-mode tape, truncated SVD and Adam.
//!
//! Everything is `f64`. Learnable quantities live in [`Tensor`]s owned by the
//! model; a fresh [`Tape`] is built for each forward pass, parameters enter it
//! through [`Tape::leaf`], and [`Tape::backward`] returns [`Gradients`] that
//! are folded back into the tensors with [`Gradients::accumulate_into`].

mod adam;
pub mod gradcheck;
mod sparse;
mod svd;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use sparse::SparseMatrix;
pub use svd::{truncated_svd, Svd};
pub use tape::{Gradients, Tape, Var};

use ndarray::Array2;

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    data: Matrix,
    requires_grad: bool,
    grad: Option<Matrix>,
}

impl Tensor {
    pub fn new(data: Matrix, requires_grad: bool) -> Self {
        Self {
            data,
            requires_grad,
            grad: None,
        }
    }

    pub fn constant(data: Matrix) -> Self {
        Self::new(data, false)
    }

    pub fn param(data: Matrix) -> Self {
        Self::new(data, true)
    }

    /// A `1 × n` row vector.
    pub fn row(values: &[f64], requires_grad: bool) -> Self {
        let data = Matrix::from_shape_vec((1, values.len()), values.to_vec())
            .expect("row vector shape is always valid");
        Self::new(data, requires_grad)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Matrix {
        &mut self.data
    }

    pub fn into_data(self) -> Matrix {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Turning gradients off also drops any accumulated gradient.
    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
        if !requires_grad {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&Matrix> {
        self.grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, g: &Matrix) -> Result<()> {
        if g.dim() != self.data.dim() {
            return Err(Error::shape(
                "accumulate_grad",
                format!("gradient {:?} vs tensor {:?}", g.dim(), self.data.dim()),
            ));
        }
        match &mut self.grad {
            Some(acc) => *acc += g,
            None => self.grad = Some(g.clone()),
        }
        Ok(())
    }

    pub(crate) fn take_grad(&mut self) -> Option<Matrix> {
        self.grad.take()
    }
}

/// Row-major values of a matrix as a flat vector.
pub fn to_row_major(m: &Matrix) -> Vec<f64> {
    m.iter().copied().collect()
}

pub fn from_row_major(rows: usize, cols: usize, values: Vec<f64>) -> Result<Matrix> {
    let n = values.len();
    Matrix::from_shape_vec((rows, cols), values)
        .map_err(|_| Error::shape("from_row_major", format!("{n} values for {rows}x{cols}")))
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Cosine similarity of every row of `a` with every row of `b`
/// (`a.nrows() × b.nrows()`); zero rows score 0.
pub fn cosine_rows(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
        tape::cosine(a.row(i).iter().copied(), b.row(j).iter().copied())
    })
}
