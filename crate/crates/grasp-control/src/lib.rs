//! Grasp sequencing and grip-force regulation.
//!
//! A state machine walks one grasp through approach, contact, hold and
//! release. While holding, a slip detector drives the only control action:
//! step the grip force up until the contact stops sliding. Episodes close the
//! loop against the synthetic sensor with either ground-truth oracles or the
//! trained classifiers as detectors.

pub mod config;
pub mod controller;
pub mod detectors;
pub mod scenario;
pub mod state;
pub mod trace;

pub use config::ControllerConfig;
pub use controller::{ControlInputs, Controller};
pub use state::{FailReason, GraspState};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraspError {
    #[error("invalid configuration: {reason}")]
    Invalid { reason: String },
    #[error("illegal transition {from} -> {to}")]
    IllegalTransition { from: String, to: String },
    #[error(transparent)]
    Sim(#[from] tactile_sim::SimError),
    #[error(transparent)]
    Model(#[from] tactile_models::ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
