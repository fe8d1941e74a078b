//! Deterministic frame synthesis: gel background, contact blob, marker dots.
//!
//! Rendering uses only integer hashing, arithmetic and sqrt so frames are
//! bit-identical across runs and platforms for the same scene and field.

use tactile_core::Tensor;

use crate::scene::{MarkerField, SimScene};
use crate::SimError;

/// Unloaded gel color per channel.
pub const BASE_COLOR: [f32; 3] = [0.56, 0.60, 0.63];
/// Per-channel weighting of the contact blob highlight.
pub const BLOB_TINT: [f32; 3] = [1.0, 0.97, 0.94];
/// Peak blob brightness once the normal force saturates.
pub const BLOB_GAIN: f32 = 0.35;
/// Normal force at which the blob reaches full brightness, newtons.
pub const BLOB_SATURATION: f32 = 8.0;
pub const MARKER_COLOR: f32 = 0.18;
/// Marker dot radius as a fraction of the image's short side.
pub const MARKER_RADIUS_FRAC: f32 = 0.028;

/// Peak brightness the contact blob adds at a given normal force.
pub fn blob_peak_delta(normal_force: f32) -> f32 {
    BLOB_GAIN * (normal_force / BLOB_SATURATION).min(1.0)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-pixel texture noise in [-1, 1], a pure function of seed and position.
fn pixel_noise(seed: u64, x: usize, y: usize, width: usize) -> f32 {
    let h = splitmix(seed ^ (y * width + x) as u64);
    let unit = (h >> 40) as f32 * (1.0 / 16_777_216.0);
    2.0 * unit - 1.0
}

/// Render one `[3, height, width]` frame of the sensor.
///
/// Composition order: base color and seeded texture noise, then the radial
/// contact blob (absent at zero normal force), then dark marker dots at
/// rest-plus-displacement positions, then a clamp to [0, 1].
pub fn render_frame(
    scene: &SimScene,
    field: &MarkerField,
    width: usize,
    height: usize,
) -> Result<Tensor, SimError> {
    scene.validate()?;
    if width < 8 || height < 8 {
        return Err(SimError::Invalid {
            reason: format!("frame {width}x{height} too small to render"),
        });
    }
    let short = width.min(height) as f32;
    let amp = scene.object.texture_amplitude;
    let mut frame = Tensor::zeros(&[3, height, width]);

    let plane = height * width;
    let data = frame.data_mut();

    for ch in 0..3 {
        let base = BASE_COLOR[ch];
        for y in 0..height {
            let row = ch * plane + y * width;
            for x in 0..width {
                data[row + x] = base + amp * pixel_noise(scene.seed, x, y, width);
            }
        }
    }

    if scene.normal_force > 0.0 {
        let gain = blob_peak_delta(scene.normal_force);
        let cx = width as f32 * 0.5;
        let cy = height as f32 * 0.5;
        let radius = scene.object.contact_radius * short;
        let inv_r2 = 1.0 / (radius * radius);
        for ch in 0..3 {
            let tint = gain * BLOB_TINT[ch];
            for y in 0..height {
                let dy = y as f32 + 0.5 - cy;
                let row = ch * plane + y * width;
                for x in 0..width {
                    let dx = x as f32 + 0.5 - cx;
                    let r2 = (dx * dx + dy * dy) * inv_r2;
                    if r2 < 1.0 {
                        let fall = 1.0 - r2;
                        data[row + x] += tint * fall * fall;
                    }
                }
            }
        }
    }

    let marker_r = MARKER_RADIUS_FRAC * short;
    for (mx, my) in field.positions() {
        let x0 = (mx - marker_r - 1.0).floor().max(0.0) as usize;
        let x1 = ((mx + marker_r + 1.0).ceil() as usize).min(width.saturating_sub(1));
        let y0 = (my - marker_r - 1.0).floor().max(0.0) as usize;
        let y1 = ((my + marker_r + 1.0).ceil() as usize).min(height.saturating_sub(1));
        for y in y0..=y1 {
            let dy = y as f32 + 0.5 - my;
            for x in x0..=x1 {
                let dx = x as f32 + 0.5 - mx;
                let dist = (dx * dx + dy * dy).sqrt();
                let coverage = (marker_r + 0.5 - dist).clamp(0.0, 1.0);
                if coverage > 0.0 {
                    for ch in 0..3 {
                        let i = ch * plane + y * width + x;
                        data[i] = data[i] * (1.0 - coverage) + MARKER_COLOR * coverage;
                    }
                }
            }
        }
    }

    for v in data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(frame)
}

/// The no-contact reference frame for a scene: zero force, markers at rest.
pub fn background_frame(scene: &SimScene, width: usize, height: usize) -> Result<Tensor, SimError> {
    let mut unloaded = *scene;
    unloaded.normal_force = 0.0;
    unloaded.tangential_force = 0.0;
    let rest = MarkerField::grid(width, height);
    render_frame(&unloaded, &rest, width, height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{step_contact_dynamics, ObjectParams};

    fn test_scene(seed: u64) -> SimScene {
        SimScene::new(
            ObjectParams {
                mass: 0.2,
                friction: 0.5,
                contact_radius: 0.3,
                texture_amplitude: 0.01,
            },
            seed,
        )
    }

    fn bits(t: &Tensor) -> Vec<u32> {
        t.data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn zero_force_frame_is_exactly_the_background() {
        let scene = test_scene(11);
        let field = MarkerField::grid(64, 64);
        let frame = render_frame(&scene, &field, 64, 64).unwrap();
        let bg = background_frame(&scene, 64, 64).unwrap();
        assert_eq!(bits(&frame), bits(&bg));
    }

    #[test]
    fn same_inputs_render_bit_identical_frames() {
        let mut scene = test_scene(3);
        scene.normal_force = 5.0;
        scene.tangential_force = 1.5;
        let field = MarkerField::grid(64, 64);
        let (field, _) = step_contact_dynamics(&scene, &field, scene.dt()).unwrap();
        let a = render_frame(&scene, &field, 64, 64).unwrap();
        let b = render_frame(&scene, &field, 64, 64).unwrap();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn different_seed_changes_the_noise() {
        let a = background_frame(&test_scene(1), 64, 64).unwrap();
        let b = background_frame(&test_scene(2), 64, 64).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() > 0.0);
    }

    #[test]
    fn contact_blob_brightens_the_center() {
        let mut scene = test_scene(5);
        scene.normal_force = 5.0;
        let field = MarkerField::grid(64, 64);
        let frame = render_frame(&scene, &field, 64, 64).unwrap();
        let bg = background_frame(&scene, 64, 64).unwrap();
        // The exact center is under a marker dot; probe beside it.
        let probe = [0usize, 32, 36];
        let delta = frame.at(&probe) - bg.at(&probe);
        assert!(delta > 0.5 * blob_peak_delta(5.0), "delta {delta}");
        // Far corner is outside the blob.
        assert_eq!(frame.at(&[0, 2, 2]), bg.at(&[0, 2, 2]));
    }

    #[test]
    fn values_stay_in_unit_range() {
        let mut scene = test_scene(9);
        scene.normal_force = 40.0;
        scene.object.texture_amplitude = 0.05;
        let frame = render_frame(&scene, &MarkerField::grid(64, 64), 64, 64).unwrap();
        for &v in frame.data() {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn marker_centroids_match_field_positions() {
        let mut scene = test_scene(13);
        scene.normal_force = 5.0;
        scene.tangential_force = 2.3;
        let rest = MarkerField::grid(64, 64);
        let (field, slipping) = step_contact_dynamics(&scene, &rest, scene.dt()).unwrap();
        assert!(!slipping);
        assert!(field.displacement().0 > 1.0);
        let frame = render_frame(&scene, &field, 64, 64).unwrap();
        for (mx, my) in field.positions() {
            let (mut wsum, mut xsum, mut ysum) = (0.0f64, 0.0f64, 0.0f64);
            for y in (my as isize - 4).max(0) as usize..=(my as usize + 4).min(63) {
                for x in (mx as isize - 4).max(0) as usize..=(mx as usize + 4).min(63) {
                    let w = (0.45 - frame.at(&[0, y, x])).max(0.0) as f64;
                    wsum += w;
                    xsum += w * (x as f64 + 0.5);
                    ysum += w * (y as f64 + 0.5);
                }
            }
            assert!(wsum > 0.0, "no dark pixels near ({mx}, {my})");
            let ex = (xsum / wsum - mx as f64).abs();
            let ey = (ysum / wsum - my as f64).abs();
            assert!(ex < 0.5 && ey < 0.5, "centroid off by ({ex:.3}, {ey:.3})");
        }
    }

    #[test]
    fn tiny_frames_are_rejected() {
        let scene = test_scene(1);
        assert!(matches!(
            render_frame(&scene, &MarkerField::grid(4, 4), 4, 4),
            Err(SimError::Invalid { .. })
        ));
    }
}
