//! Touch and slip classifiers plus the training loop and checkpoint IO
//! shared by both.

pub mod checkpoint;
pub mod classify;
pub mod slip;
pub mod touch;
pub mod train;

use serde::{Deserialize, Serialize};
use tactile_core::ops::Activation;
use tactile_core::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("geometry mismatch: {reason}")]
    Geometry { reason: String },

    #[error("bad config: {reason}")]
    Config { reason: String },

    #[error("unknown variant {name:?}")]
    UnknownVariant { name: String },

    #[error("bad checkpoint: {reason}")]
    Checkpoint { reason: String },

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Serializable activation choice for model configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActKind {
    Silu,
    Gelu,
}

impl ActKind {
    pub fn op(self) -> Activation {
        match self {
            ActKind::Silu => Activation::Silu,
            ActKind::Gelu => Activation::Gelu,
        }
    }
}
