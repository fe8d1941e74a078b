//! Touch and slip estimation for the control loop.
//!
//! Both detector flavors answer the same two questions each tick: is the
//! gripper touching, and is the contact sliding. Oracles answer from
//! simulator ground truth; model detectors render the sensor view, keep a
//! sliding window of frames, and ask the trained classifiers.

use std::collections::VecDeque;
use std::path::Path;

use tactile_core::Tensor;
use tactile_models::checkpoint;
use tactile_models::slip::SlipNet;
use tactile_models::touch::TouchNet;
use tactile_models::train::pool_to_resolution;
use tactile_sim::dataset::Preset;
use tactile_sim::render::render_frame;
use tactile_sim::scene::{MarkerField, SimScene};

use crate::GraspError;

/// What a detector may look at on one tick.
pub struct SensorView<'a> {
    pub scene: &'a SimScene,
    pub field: &'a MarkerField,
    /// Ground truth: the gripper is touching the object.
    pub in_contact: bool,
    /// Ground truth: the contact slid this tick.
    pub slipping: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct DetectorReading {
    pub touch_prob: f32,
    pub slip_prob: f32,
}

pub trait Detectors {
    fn read(&mut self, view: &SensorView) -> Result<DetectorReading, GraspError>;

    /// Clear any history (e.g. between episodes).
    fn reset(&mut self) {}
}

/// Ground-truth passthrough: probabilities are exactly 0 or 1.
pub struct OracleDetectors;

impl Detectors for OracleDetectors {
    fn read(&mut self, view: &SensorView) -> Result<DetectorReading, GraspError> {
        Ok(DetectorReading {
            touch_prob: if view.in_contact { 1.0 } else { 0.0 },
            slip_prob: if view.slipping { 1.0 } else { 0.0 },
        })
    }
}

/// Trained classifiers reading rendered frames, exactly as in deployment.
///
/// Frames render at the preset's sensor resolution and are box-pooled to
/// each model's input size. The slip model sees the last `frames` renders
/// with stride one; until the window fills its probability reads 0.
pub struct ModelDetectors {
    touch: TouchNet,
    slip: SlipNet,
    preset: Preset,
    window: VecDeque<Tensor>,
}

impl ModelDetectors {
    pub fn new(touch: TouchNet, slip: SlipNet, preset: Preset) -> Self {
        Self {
            touch,
            slip,
            preset,
            window: VecDeque::new(),
        }
    }

    pub fn from_checkpoints(
        touch_path: &Path,
        slip_path: &Path,
        preset: Preset,
    ) -> Result<Self, GraspError> {
        let touch = checkpoint::load_touch(touch_path)?;
        let slip = checkpoint::load_slip(slip_path)?;
        Ok(Self::new(touch, slip, preset))
    }

    fn slip_window_clip(&self) -> Result<Tensor, GraspError> {
        let cfg = self.slip.config();
        let (f, c, r) = (cfg.frames, cfg.channels, cfg.image);
        let mut clip = Tensor::zeros(&[f, c, r, r]);
        let frame_len = c * r * r;
        for (k, frame) in self.window.iter().enumerate() {
            clip.data_mut()[k * frame_len..(k + 1) * frame_len].copy_from_slice(frame.data());
        }
        Ok(clip)
    }
}

impl Detectors for ModelDetectors {
    fn read(&mut self, view: &SensorView) -> Result<DetectorReading, GraspError> {
        let touch_res = self.preset.touch_resolution();
        let touch_frame = render_frame(view.scene, view.field, touch_res, touch_res)?;
        let touch_input = pool_to_resolution(&touch_frame, self.touch.config().image)?;
        let touch_prob = self.touch.predict(&touch_input)?.at(&[1]);

        let slip_res = self.preset.slip_resolution();
        let slip_frame = render_frame(view.scene, view.field, slip_res, slip_res)?;
        let slip_input = pool_to_resolution(&slip_frame, self.slip.config().image)?;
        let want = self.slip.config().frames;
        self.window.push_back(slip_input);
        while self.window.len() > want {
            self.window.pop_front();
        }
        let slip_prob = if self.window.len() == want {
            let clip = self.slip_window_clip()?;
            self.slip.predict(&clip)?.at(&[1])
        } else {
            0.0
        };
        Ok(DetectorReading {
            touch_prob,
            slip_prob,
        })
    }

    fn reset(&mut self) {
        self.window.clear();
    }
}
