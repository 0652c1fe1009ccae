//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Only the primitives needed by the two model families exist here: 1-D
//! convolution, dense layers, pointwise activations, channel broadcasting,
//! time reductions and the two classification losses.

mod kernels;
pub mod layers;
mod tape;
mod tensor;

use thiserror::Error;

pub use kernels::ConvGeometry;
pub use tape::{Tape, Var};
pub use tensor::{Real, Tensor};

pub(crate) use tape::sigmoid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("invalid shape {shape:?}: dimensions must be non-empty and positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs {expected} values, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: {dim} mismatch (expected {expected}, got {actual})")]
    ShapeMismatch {
        op: &'static str,
        dim: String,
        expected: String,
        actual: String,
    },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward already ran on this tape; call reset_grads first")]
    BackwardAlreadyRun,
    #[error("class id {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("binary target must lie in [0, 1], got {0}")]
    InvalidTarget(f64),
    #[error("configuration error: {0}")]
    Config(String),
}
