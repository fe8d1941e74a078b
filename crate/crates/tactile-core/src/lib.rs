//! Deterministic f32 tensor kernel with hand-written reverse-mode gradients
//! and the attention building blocks used by the touch and slip classifiers.
//!
//! Everything here is single threaded and accumulation order is fixed, so a
//! given seed produces identical bytes on every run.

pub mod divided;
pub mod format;
pub mod grad;
pub mod grid;
pub mod layers;
pub mod ops;
pub mod param;
pub mod reference;
pub mod tensor;

pub use param::Param;
pub use tensor::Tensor;

/// Errors shared by tensor construction, shape checks, and serialized IO.
#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("invalid shape: {reason}")]
    InvalidShape { reason: String },

    #[error("shape mismatch in {op}: lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("malformed tensor data: {reason}")]
    Format { reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
