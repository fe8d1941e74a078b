//! Synthetic marker-gel tactile sensor.
//!
//! A camera-based tactile sensor images an elastomer pad printed with a grid
//! of dark markers. Shear load deforms the pad elastically; once the
//! tangential load beats Coulomb friction the contact slides and the marker
//! field shows coherent motion. This crate simulates that: contact dynamics
//! on a marker grid, deterministic frame rendering, and labeled dataset
//! generation for the touch and slip classifiers.

pub mod dataset;
pub mod objects;
pub mod pgm;
pub mod render;
pub mod scene;

pub use scene::{MarkerField, ObjectParams, SimScene};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene: {reason}")]
    Invalid { reason: String },
    #[error("non-finite value: {reason}")]
    NonFinite { reason: String },
    #[error(transparent)]
    Tensor(#[from] tactile_core::TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
