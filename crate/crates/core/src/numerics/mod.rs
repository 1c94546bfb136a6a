//! Dense tensors, forward kernels, a reverse-mode tape and a central
//! finite-difference checker.

mod gradcheck;
pub mod ops;
mod tape;
mod tensor;

use alloc::vec::Vec;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use ops::{elu, layer_norm, matmul, softmax_rows};
pub use tape::{sigmoid, softplus, Gradients, Tape, Var};
pub use tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("data length {actual} does not match shape volume {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{0}: nothing to reduce")]
    Empty(&'static str),
    #[error("backward already ran on this tape; record a new forward pass")]
    TapeConsumed,
}
