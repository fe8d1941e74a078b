//! Debounced two-state decision layer over a stream of slip probabilities.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlipLabel {
    Stable,
    Slip,
}

/// Flips between `Stable` and `Slip` only after `debounce` consecutive
/// evaluations of contrary evidence. A probability exactly at the threshold
/// counts as slip evidence (the comparison is `>=`).
#[derive(Debug, Clone)]
pub struct DebouncedClassifier {
    threshold: f32,
    debounce: usize,
    state: SlipLabel,
    streak: usize,
}

impl DebouncedClassifier {
    pub fn new(threshold: f32, debounce: usize) -> Self {
        assert!(
            threshold > 0.0 && threshold < 1.0,
            "threshold must be in (0, 1), got {threshold}"
        );
        assert!(debounce >= 1, "debounce must be at least 1");
        Self {
            threshold,
            debounce,
            state: SlipLabel::Stable,
            streak: 0,
        }
    }

    pub fn state(&self) -> SlipLabel {
        self.state
    }

    pub fn reset(&mut self) {
        self.state = SlipLabel::Stable;
        self.streak = 0;
    }

    /// Feed one P(slip) evaluation; returns the (possibly updated) label.
    pub fn update(&mut self, p_slip: f32) -> SlipLabel {
        let says_slip = p_slip >= self.threshold;
        let contrary = match self.state {
            SlipLabel::Stable => says_slip,
            SlipLabel::Slip => !says_slip,
        };
        if contrary {
            self.streak += 1;
            if self.streak >= self.debounce {
                self.state = match self.state {
                    SlipLabel::Stable => SlipLabel::Slip,
                    SlipLabel::Slip => SlipLabel::Stable,
                };
                self.streak = 0;
            }
        } else {
            self.streak = 0;
        }
        self.state
    }
}
