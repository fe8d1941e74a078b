//! The per-tick control law.

use tactile_models::classify::{DebouncedClassifier, SlipLabel};

use crate::config::ControllerConfig;
use crate::state::{FailReason, GraspState};
use crate::GraspError;

/// Everything the controller reads on one tick.
#[derive(Debug, Clone, Copy)]
pub struct ControlInputs {
    /// Start signal; takes Idle to Approaching.
    pub trigger: bool,
    pub touch_prob: f32,
    pub slip_prob: f32,
    /// External release command.
    pub release: bool,
    /// Actual gripper force right now, newtons.
    pub measured_force: f32,
}

/// Force below which a releasing gripper counts as open.
const RELEASED_FORCE: f32 = 0.02;

pub struct Controller {
    cfg: ControllerConfig,
    state: GraspState,
    command: f32,
    slip_filter: DebouncedClassifier,
}

impl Controller {
    pub fn new(cfg: ControllerConfig) -> Result<Self, GraspError> {
        cfg.validate()?;
        let slip_filter = DebouncedClassifier::new(cfg.slip_threshold, cfg.slip_debounce);
        Ok(Self {
            cfg,
            state: GraspState::Idle,
            command: 0.0,
            slip_filter,
        })
    }

    pub fn state(&self) -> GraspState {
        self.state
    }

    /// Current force command, newtons.
    pub fn command(&self) -> f32 {
        self.command
    }

    fn set_state(&mut self, to: GraspState) -> Result<(), GraspError> {
        if !self.state.may_transition(to) {
            return Err(GraspError::IllegalTransition {
                from: self.state.label(),
                to: to.label(),
            });
        }
        self.state = to;
        Ok(())
    }

    fn fail(&mut self, reason: FailReason) -> Result<(), GraspError> {
        self.set_state(GraspState::Failed(reason))
    }

    /// Advance one tick at time `t` seconds. Returns the new state and the
    /// force command for the actuator.
    ///
    /// The force command never decreases between first contact and release,
    /// and never leaves [0, max_force].
    pub fn step(&mut self, inputs: &ControlInputs, t: f32) -> Result<(GraspState, f32), GraspError> {
        for (name, p) in [("touch", inputs.touch_prob), ("slip", inputs.slip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(GraspError::Invalid {
                    reason: format!("{name} probability {p} outside [0, 1]"),
                });
            }
        }
        if self.state.is_terminal() {
            return Ok((self.state, self.command));
        }
        if t >= self.cfg.timeout_s {
            self.fail(FailReason::Timeout)?;
            return Ok((self.state, self.command));
        }

        match self.state {
            GraspState::Idle => {
                if inputs.trigger {
                    self.set_state(GraspState::Approaching)?;
                }
            }
            GraspState::Approaching => {
                if inputs.touch_prob >= self.cfg.touch_threshold {
                    self.set_state(GraspState::Contact)?;
                    self.command = self.cfg.initial_force.min(self.cfg.max_force);
                }
            }
            GraspState::Contact => {
                self.slip_filter.reset();
                self.set_state(GraspState::Holding)?;
            }
            GraspState::Holding => {
                let call = self.slip_filter.update(inputs.slip_prob);
                if inputs.release {
                    self.set_state(GraspState::Releasing)?;
                    self.command = 0.0;
                } else if call == SlipLabel::Slip {
                    self.set_state(GraspState::Regulating)?;
                    self.raise_or_fail()?;
                }
            }
            GraspState::Regulating => {
                let call = self.slip_filter.update(inputs.slip_prob);
                if inputs.release {
                    self.set_state(GraspState::Releasing)?;
                    self.command = 0.0;
                } else if call == SlipLabel::Slip {
                    self.raise_or_fail()?;
                } else {
                    self.set_state(GraspState::Holding)?;
                }
            }
            GraspState::Releasing => {
                self.command = 0.0;
                if inputs.measured_force <= RELEASED_FORCE {
                    self.set_state(GraspState::Done)?;
                }
            }
            GraspState::Done | GraspState::Failed(_) => unreachable!("terminal handled above"),
        }
        Ok((self.state, self.command))
    }

    /// Force a failure from outside the control law (e.g. the episode
    /// harness observed the object dropping).
    pub fn abort(&mut self, reason: FailReason) -> Result<GraspState, GraspError> {
        if !self.state.is_terminal() {
            self.fail(reason)?;
        }
        Ok(self.state)
    }

    /// One regulation increment; hitting the cap with slip still present is
    /// the force-limit failure.
    fn raise_or_fail(&mut self) -> Result<(), GraspError> {
        if self.command >= self.cfg.max_force - 1e-6 {
            self.fail(FailReason::ForceLimit)?;
            return Ok(());
        }
        self.command = (self.command + self.cfg.force_step).min(self.cfg.max_force);
        Ok(())
    }
}
