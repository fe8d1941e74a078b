//! Grasp phases and the legal moves between them.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailReason {
    ForceLimit,
    Timeout,
    Dropped,
}

impl fmt::Display for FailReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FailReason::ForceLimit => "force limit",
            FailReason::Timeout => "timeout",
            FailReason::Dropped => "dropped",
        };
        f.write_str(s)
    }
}

/// One grasp walks Idle -> Approaching -> Contact -> Holding <-> Regulating
/// -> Releasing -> Done, with Failed reachable from every live state.
/// Contact is a one-tick transient entered only on a touch detection;
/// Regulating is entered only on a slip detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraspState {
    Idle,
    Approaching,
    Contact,
    Holding,
    Regulating,
    Releasing,
    Done,
    Failed(FailReason),
}

impl GraspState {
    pub fn is_terminal(self) -> bool {
        matches!(self, GraspState::Done | GraspState::Failed(_))
    }

    /// Whether moving from `self` to `to` is a legal edge of the sequence.
    pub fn may_transition(self, to: GraspState) -> bool {
        use GraspState::*;
        if self == to {
            return true;
        }
        match (self, to) {
            (_, Failed(_)) => !self.is_terminal(),
            (Idle, Approaching) => true,
            (Approaching, Contact) => true,
            (Contact, Holding) => true,
            (Holding, Regulating) | (Regulating, Holding) => true,
            (Holding, Releasing) | (Regulating, Releasing) => true,
            (Releasing, Done) => true,
            _ => false,
        }
    }

    /// Stable text form used in traces, e.g. `Holding` or `Failed(timeout)`.
    pub fn label(self) -> String {
        match self {
            GraspState::Failed(reason) => format!("Failed({reason})"),
            other => format!("{other:?}"),
        }
    }
}

impl fmt::Display for GraspState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}
