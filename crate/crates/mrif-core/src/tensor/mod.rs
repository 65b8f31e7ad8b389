//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a define-by-run tape: every operation records its inputs
//! and a backward rule, and [`Graph::backward`] replays the tape in exact
//! reverse order, accumulating gradients into every tensor that was created
//! with `requires_grad`. Graphs are rebuilt per forward pass and confined to
//! one execution context; distinct graphs may run concurrently.
//!
//! All values are `f64`. Shapes are row-major.

mod graph;

pub use graph::{Graph, TensorId, LAYER_NORM_EPS};

use thiserror::Error;

/// Execution mode, consumed by stochastic ops (dropout).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dense row-major tensor node.
///
/// `grad` is populated by [`Graph::backward`] for nodes that participate in
/// gradient tracking; it always has the same length as `values`.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    DimensionMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected rank-{expected} tensor, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("shape {shape:?} implies {expected} values, got {actual}")]
    ShapeValueMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("softmax: row {row} is fully masked")]
    DegenerateRow { row: usize },

    #[error("embedding lookup: index {index} outside vocabulary of size {vocab}")]
    LookupOutOfRange { index: usize, vocab: usize },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("dropout keep probability must lie in (0, 1], got {keep}")]
    InvalidKeepProb { keep: f64 },

    #[error("{op}: index {index} out of bounds for {len} elements")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        len: usize,
    },

    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
}
