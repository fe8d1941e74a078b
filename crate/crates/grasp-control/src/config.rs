//! Controller tuning knobs.

use serde::{Deserialize, Serialize};

use crate::GraspError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    /// Grip force applied on first contact, newtons.
    pub initial_force: f32,
    /// Force increment per tick while slip persists, newtons.
    pub force_step: f32,
    pub rate_hz: f32,
    pub max_force: f32,
    /// A touch probability at or above this starts the grasp.
    pub touch_threshold: f32,
    pub slip_threshold: f32,
    /// Consecutive contrary detections needed to flip the slip call.
    pub slip_debounce: usize,
    /// Finger speed toward the object, meters per second.
    pub approach_speed: f32,
    pub timeout_s: f32,
    /// Actuator first-order-lag time constant, seconds.
    pub actuator_tau: f32,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            initial_force: 1.0,
            force_step: 0.5,
            rate_hz: 30.0,
            max_force: 40.0,
            touch_threshold: 0.5,
            slip_threshold: 0.5,
            slip_debounce: 2,
            approach_speed: 0.05,
            timeout_s: 20.0,
            actuator_tau: 0.1,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), GraspError> {
        let bad = |reason: String| Err(GraspError::Invalid { reason });
        if !(self.force_step > 0.0) {
            return bad(format!("force step {} must be positive", self.force_step));
        }
        if !(self.max_force > self.force_step) {
            return bad(format!(
                "max force {} must exceed the step {}",
                self.max_force, self.force_step
            ));
        }
        if !(self.timeout_s > 0.0) {
            return bad(format!("timeout {} must be positive", self.timeout_s));
        }
        if !(self.rate_hz > 0.0) {
            return bad(format!("rate {} must be positive", self.rate_hz));
        }
        if !(self.initial_force > 0.0 && self.initial_force <= self.max_force) {
            return bad(format!("initial force {} outside (0, max]", self.initial_force));
        }
        for (name, v) in [
            ("touch threshold", self.touch_threshold),
            ("slip threshold", self.slip_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} {v} outside (0, 1)"));
            }
        }
        if self.slip_debounce == 0 {
            return bad("slip debounce must be at least 1".into());
        }
        if !(self.approach_speed > 0.0) {
            return bad(format!("approach speed {} must be positive", self.approach_speed));
        }
        if !(self.actuator_tau >= 0.0) {
            return bad(format!("actuator tau {} must be nonnegative", self.actuator_tau));
        }
        Ok(())
    }

    pub fn dt(&self) -> f32 {
        1.0 / self.rate_hz
    }

    /// Fraction of the command-to-force gap closed per tick.
    pub fn actuator_alpha(&self) -> f32 {
        let dt = self.dt();
        dt / (self.actuator_tau + dt)
    }
}
