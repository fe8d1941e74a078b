//! Labeled dataset synthesis: single-frame touch images and 8-frame slip
//! clips, written as one tensor file per sample plus a `manifest.jsonl`.
//!
//! Sample i is generated from the derived seed `seed ^ i`, so samples are
//! independent and the whole directory is byte-reproducible.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use tactile_core::format::{self, FILE_EXT};
use tactile_core::Tensor;

use crate::objects::sample_object;
use crate::render::render_frame;
use crate::scene::{step_contact_dynamics, MarkerField, SimScene};
use crate::SimError;

/// Frames per slip clip.
pub const SLIP_FRAMES: usize = 8;
/// Normal force range for touch-labeled images, newtons.
pub const TOUCH_FORCE_RANGE: (f32, f32) = (1.0, 8.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Toy,
    Paper,
}

impl Preset {
    pub fn touch_resolution(self) -> usize {
        match self {
            Preset::Toy => 64,
            Preset::Paper => 256,
        }
    }

    pub fn slip_resolution(self) -> usize {
        match self {
            Preset::Toy => 64,
            Preset::Paper => 224,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Toy => "toy",
            Preset::Paper => "paper",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "toy" => Some(Preset::Toy),
            "paper" => Some(Preset::Paper),
            _ => None,
        }
    }
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Tensor file path relative to the dataset directory.
    pub path: String,
    /// 0 = no-touch / stable, 1 = touch / slip.
    pub label: usize,
    pub frames: usize,
    /// Derived seed this sample was generated from.
    pub seed: u64,
}

pub fn sample_seed(dataset_seed: u64, index: usize) -> u64 {
    dataset_seed ^ index as u64
}

/// A touch image together with the scene that produced it.
pub struct TouchSample {
    pub image: Tensor,
    pub scene: SimScene,
}

/// Touch sample: a randomized object either pressed into the gel
/// (label 1, F_n in `TOUCH_FORCE_RANGE`) or absent (label 0).
pub fn synth_touch_sample(
    sample_seed: u64,
    label: usize,
    resolution: usize,
) -> Result<TouchSample, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let object = sample_object(&mut rng);
    let mut scene = SimScene::new(object, sample_seed);
    if label == 1 {
        scene.normal_force = rng.gen_range(TOUCH_FORCE_RANGE.0..=TOUCH_FORCE_RANGE.1);
    }
    let field = MarkerField::grid(resolution, resolution);
    let image = render_frame(&scene, &field, resolution, resolution)?;
    Ok(TouchSample { image, scene })
}

/// A slip clip plus its ground truth.
pub struct SlipClip {
    /// `[frames, 3, R, R]`.
    pub clip: Tensor,
    pub scene: SimScene,
    /// Accumulated slip after each frame, pixels.
    pub slip_per_frame: Vec<f32>,
    /// Friction limit mu * F_n for the clip's grip force, newtons.
    pub threshold: f32,
}

/// Slip clip: tangential load ramps while the grip force holds steady.
/// Label 1 crosses the friction limit at a frame in 3..=6 and keeps sliding;
/// label 0 stays at or below 85% of the limit throughout.
pub fn synth_slip_clip(
    sample_seed: u64,
    label: usize,
    resolution: usize,
) -> Result<SlipClip, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let object = sample_object(&mut rng);
    let mut scene = SimScene::new(object, sample_seed);
    scene.normal_force = rng.gen_range(2.0f32..=6.0);
    let threshold = scene.friction_limit();

    let load_at: Box<dyn Fn(usize) -> f32> = if label == 1 {
        let crossing = rng.gen_range(3usize..=6);
        Box::new(move |k| threshold * (0.25 + 0.80 * k as f32 / crossing as f32))
    } else {
        let peak = rng.gen_range(0.4f32..=0.85);
        Box::new(move |k| threshold * peak * k as f32 / (SLIP_FRAMES - 1) as f32)
    };

    let mut field = MarkerField::grid(resolution, resolution);
    let mut clip = Tensor::zeros(&[SLIP_FRAMES, 3, resolution, resolution]);
    let mut slip_per_frame = Vec::with_capacity(SLIP_FRAMES);
    let frame_len = 3 * resolution * resolution;
    for k in 0..SLIP_FRAMES {
        scene.tangential_force = load_at(k);
        let (next, _) = step_contact_dynamics(&scene, &field, scene.dt())?;
        field = next;
        let frame = render_frame(&scene, &field, resolution, resolution)?;
        clip.data_mut()[k * frame_len..(k + 1) * frame_len].copy_from_slice(frame.data());
        slip_per_frame.push(field.accumulated_slip());
    }
    Ok(SlipClip {
        clip,
        scene,
        slip_per_frame,
        threshold,
    })
}

fn write_manifest(dir: &Path, entries: &[ManifestEntry]) -> Result<(), SimError> {
    let mut out = fs::File::create(dir.join("manifest.jsonl"))?;
    for entry in entries {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn check_count(count: usize) -> Result<(), SimError> {
    if count < 2 {
        return Err(SimError::Invalid {
            reason: format!("dataset needs at least 2 samples, got {count}"),
        });
    }
    Ok(())
}

fn sample_file(index: usize) -> String {
    format!("sample_{index:05}.{FILE_EXT}")
}

/// Write `count` touch images, alternating no-touch / touch labels.
pub fn generate_touch_dataset(
    dir: &Path,
    count: usize,
    seed: u64,
    preset: Preset,
) -> Result<Vec<ManifestEntry>, SimError> {
    check_count(count)?;
    fs::create_dir_all(dir)?;
    let res = preset.touch_resolution();
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % 2;
        let s = sample_seed(seed, i);
        let sample = synth_touch_sample(s, label, res)?;
        let name = sample_file(i);
        format::save_tensor(&dir.join(&name), &sample.image)?;
        entries.push(ManifestEntry {
            path: name,
            label,
            frames: 1,
            seed: s,
        });
    }
    write_manifest(dir, &entries)?;
    Ok(entries)
}

/// Write `count` slip clips, alternating stable / slip labels.
pub fn generate_slip_dataset(
    dir: &Path,
    count: usize,
    seed: u64,
    preset: Preset,
) -> Result<Vec<ManifestEntry>, SimError> {
    check_count(count)?;
    fs::create_dir_all(dir)?;
    let res = preset.slip_resolution();
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % 2;
        let s = sample_seed(seed, i);
        let sample = synth_slip_clip(s, label, res)?;
        let name = sample_file(i);
        format::save_tensor(&dir.join(&name), &sample.clip)?;
        entries.push(ManifestEntry {
            path: name,
            label,
            frames: SLIP_FRAMES,
            seed: s,
        });
    }
    write_manifest(dir, &entries)?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>, SimError> {
    let text = fs::read_to_string(dir.join("manifest.jsonl"))?;
    let mut entries = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(line)?);
    }
    Ok(entries)
}

/// Load every sample listed in the manifest as `(tensor, label)`.
pub fn load_samples(dir: &Path) -> Result<Vec<(Tensor, usize)>, SimError> {
    let entries = read_manifest(dir)?;
    let mut out = Vec::with_capacity(entries.len());
    for entry in &entries {
        let tensor = format::load_tensor(&dir.join(&entry.path))?;
        out.push((tensor, entry.label));
    }
    Ok(out)
}
