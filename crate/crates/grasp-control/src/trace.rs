//! Tick-by-tick episode records in JSON-lines form.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::GraspError;

/// One control tick. `f_n` is the actual gripper force after actuator lag,
/// `f_t` the tangential load on the contact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tick {
    pub t: f32,
    pub state: String,
    pub f_n: f32,
    pub f_t: f32,
    pub touch_prob: f32,
    pub slip_prob: f32,
    pub slipping: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// `done` or `failed`.
    pub outcome: String,
    pub fail_reason: Option<String>,
    /// Simulated seconds from start to the final tick.
    pub duration: f32,
    pub peak_force: f32,
    /// Actual force on the last holding or regulating tick.
    pub final_hold_force: f32,
    /// Number of Holding -> Regulating entries.
    pub regulating_phases: usize,
    /// Ground-truth sliding distance over the episode, pixels.
    pub accumulated_slip: f32,
}

/// Wire form: every line is a tagged record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TraceRecord {
    Tick(Tick),
    Summary(Summary),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub ticks: Vec<Tick>,
    pub summary: Summary,
}

impl EpisodeTrace {
    pub fn succeeded(&self) -> bool {
        self.summary.outcome == "done"
    }

    /// One JSON object per tick, summary record last.
    pub fn to_jsonl(&self) -> Result<String, GraspError> {
        let mut out = String::new();
        for tick in &self.ticks {
            out.push_str(&serde_json::to_string(&TraceRecord::Tick(tick.clone()))?);
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&TraceRecord::Summary(self.summary.clone()))?);
        out.push('\n');
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), GraspError> {
        let mut file = fs::File::create(path)?;
        file.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn from_jsonl(text: &str) -> Result<Self, GraspError> {
        let mut ticks = Vec::new();
        let mut summary = None;
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<TraceRecord>(line)? {
                TraceRecord::Tick(tick) => {
                    if summary.is_some() {
                        return Err(GraspError::Invalid {
                            reason: "tick record after the summary".into(),
                        });
                    }
                    ticks.push(tick);
                }
                TraceRecord::Summary(s) => {
                    if summary.replace(s).is_some() {
                        return Err(GraspError::Invalid {
                            reason: "more than one summary record".into(),
                        });
                    }
                }
            }
        }
        let summary = summary.ok_or_else(|| GraspError::Invalid {
            reason: "trace has no summary record".into(),
        })?;
        Ok(Self { ticks, summary })
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, GraspError> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EpisodeTrace {
        EpisodeTrace {
            ticks: vec![
                Tick {
                    t: 0.0,
                    state: "Idle".into(),
                    f_n: 0.0,
                    f_t: 0.0,
                    touch_prob: 0.0,
                    slip_prob: 0.0,
                    slipping: false,
                },
                Tick {
                    t: 1.0 / 30.0,
                    state: "Approaching".into(),
                    f_n: 0.0,
                    f_t: 0.0,
                    touch_prob: 0.0,
                    slip_prob: 0.0,
                    slipping: false,
                },
            ],
            summary: Summary {
                outcome: "done".into(),
                fail_reason: None,
                duration: 1.0 / 30.0,
                peak_force: 0.0,
                final_hold_force: 0.0,
                regulating_phases: 0,
                accumulated_slip: 0.0,
            },
        }
    }

    #[test]
    fn jsonl_round_trips() {
        let trace = sample();
        let text = trace.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().last().unwrap().contains("\"kind\":\"summary\""));
        let back = EpisodeTrace::from_jsonl(&text).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn every_line_is_tagged_json() {
        let text = sample().to_jsonl().unwrap();
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            let kind = v.get("kind").and_then(|k| k.as_str()).unwrap();
            assert!(kind == "tick" || kind == "summary");
        }
    }

    #[test]
    fn missing_summary_is_rejected() {
        let text = "{\"kind\":\"tick\",\"t\":0.0,\"state\":\"Idle\",\"f_n\":0.0,\"f_t\":0.0,\"touch_prob\":0.0,\"slip_prob\":0.0,\"slipping\":false}\n";
        assert!(EpisodeTrace::from_jsonl(text).is_err());
    }
}
