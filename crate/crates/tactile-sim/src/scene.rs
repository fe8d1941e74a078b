//! Contact state and stick/slip marker dynamics.

use crate::SimError;

pub const MARKER_ROWS: usize = 7;
pub const MARKER_COLS: usize = 9;
/// Elastomer shear limit in pixels.
pub const D_MAX: f32 = 6.0;
/// Shear stiffness, newtons per pixel of marker displacement.
pub const K_S: f32 = 2.0;
/// Slip gain, pixels per second per newton of excess tangential load.
pub const K_V: f32 = 40.0;
pub const FRAME_RATE: f32 = 30.0;
pub const GRAVITY: f32 = 9.81;
/// Fraction of the elastic mismatch recovered per step while sliding.
pub const RELAXATION: f32 = 0.3;

/// Grasped object: what the gripper feels, not what it looks like.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectParams {
    pub mass: f32,
    pub friction: f32,
    /// Contact patch radius as a fraction of the image's short side.
    pub contact_radius: f32,
    /// Amplitude of the rendered surface noise.
    pub texture_amplitude: f32,
}

/// One sensor-object contact: forces, material constants, and the seed that
/// fixes every random draw downstream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimScene {
    pub object: ObjectParams,
    /// Grip normal force, newtons.
    pub normal_force: f32,
    /// Tangential load on the contact, newtons. Sign picks the direction
    /// along the image x axis.
    pub tangential_force: f32,
    pub gravity: f32,
    pub shear_stiffness: f32,
    pub slip_gain: f32,
    pub frame_rate: f32,
    pub seed: u64,
}

impl SimScene {
    pub fn new(object: ObjectParams, seed: u64) -> Self {
        Self {
            object,
            normal_force: 0.0,
            tangential_force: 0.0,
            gravity: GRAVITY,
            shear_stiffness: K_S,
            slip_gain: K_V,
            frame_rate: FRAME_RATE,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let o = &self.object;
        if !(o.friction > 0.0 && o.friction <= 2.0) {
            return Err(SimError::Invalid {
                reason: format!("friction {} outside (0, 2]", o.friction),
            });
        }
        if !(o.mass > 0.0) {
            return Err(SimError::Invalid {
                reason: format!("mass {} must be positive", o.mass),
            });
        }
        if !(self.normal_force >= 0.0) {
            return Err(SimError::Invalid {
                reason: format!("normal force {} must be nonnegative", self.normal_force),
            });
        }
        if !(self.shear_stiffness > 0.0 && self.slip_gain > 0.0 && self.frame_rate > 0.0) {
            return Err(SimError::Invalid {
                reason: "stiffness, slip gain and frame rate must be positive".into(),
            });
        }
        Ok(())
    }

    /// Largest tangential load the contact can hold without sliding.
    pub fn friction_limit(&self) -> f32 {
        self.object.friction * self.normal_force
    }

    pub fn dt(&self) -> f32 {
        1.0 / self.frame_rate
    }
}

/// Marker grid state: fixed rest positions plus a shared shear displacement.
///
/// Positions are in pixels, `(x, y)` with y down. The grid spans the image
/// with a one-cell margin so every dot renders fully inside the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerField {
    rows: usize,
    cols: usize,
    rest: Vec<(f32, f32)>,
    /// Displacement applied to every marker, pixels.
    disp: (f32, f32),
    /// Total sliding distance so far, pixels.
    accumulated_slip: f32,
}

impl MarkerField {
    /// Default 7x9 grid for a `width` x `height` image.
    pub fn grid(width: usize, height: usize) -> Self {
        Self::with_grid(MARKER_ROWS, MARKER_COLS, width, height)
    }

    pub fn with_grid(rows: usize, cols: usize, width: usize, height: usize) -> Self {
        let mut rest = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let x = (c + 1) as f32 * width as f32 / (cols + 1) as f32;
                let y = (r + 1) as f32 * height as f32 / (rows + 1) as f32;
                rest.push((x, y));
            }
        }
        Self {
            rows,
            cols,
            rest,
            disp: (0.0, 0.0),
            accumulated_slip: 0.0,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rest_positions(&self) -> &[(f32, f32)] {
        &self.rest
    }

    pub fn displacement(&self) -> (f32, f32) {
        self.disp
    }

    /// Current marker centers: rest plus displacement.
    pub fn positions(&self) -> Vec<(f32, f32)> {
        self.rest
            .iter()
            .map(|&(x, y)| (x + self.disp.0, y + self.disp.1))
            .collect()
    }

    pub fn accumulated_slip(&self) -> f32 {
        self.accumulated_slip
    }
}

/// Advance the contact by `dt` seconds. Returns the new field and whether the
/// contact slid this step.
///
/// Sticking (|F_t| <= mu * F_n): displacement is the elastic shear F_t / k_s,
/// saturated at the elastomer limit. Sliding: the whole field translates by
/// k_v * (|F_t| - mu * F_n) * dt along the load, then partially relaxes
/// toward the elastic displacement; the translation distance accrues as slip.
pub fn step_contact_dynamics(
    scene: &SimScene,
    field: &MarkerField,
    dt: f32,
) -> Result<(MarkerField, bool), SimError> {
    scene.validate()?;
    if !(dt > 0.0) {
        return Err(SimError::Invalid {
            reason: format!("dt {dt} must be positive"),
        });
    }
    let f_t = scene.tangential_force;
    let f_n = scene.normal_force;
    if !f_t.is_finite() || !f_n.is_finite() {
        return Err(SimError::NonFinite {
            reason: format!("forces F_t={f_t} F_n={f_n}"),
        });
    }

    let mut next = field.clone();
    let limit = scene.friction_limit();
    let elastic = (f_t / scene.shear_stiffness).clamp(-D_MAX, D_MAX);
    if f_t.abs() <= limit {
        next.disp = (elastic, 0.0);
        Ok((next, false))
    } else {
        let step = scene.slip_gain * (f_t.abs() - limit) * dt;
        let dir = if f_t >= 0.0 { 1.0 } else { -1.0 };
        let translated = (field.disp.0 + dir * step).clamp(-D_MAX, D_MAX);
        next.disp.0 = translated + RELAXATION * (elastic - translated);
        next.disp.1 = field.disp.1 * (1.0 - RELAXATION);
        next.accumulated_slip = field.accumulated_slip + step;
        Ok((next, true))
    }
}
