//! Household-object presets the dataset generator draws from.
//!
//! Nine everyday items spanning a spread of mass, friction, contact size and
//! surface texture. Each preset is a box of ranges; a concrete object is a
//! uniform draw from one preset.

use rand::Rng;

use crate::scene::ObjectParams;

#[derive(Debug, Clone, Copy)]
pub struct ObjectPreset {
    pub name: &'static str,
    pub mass: (f32, f32),
    pub friction: (f32, f32),
    /// Contact radius range, fraction of the image's short side.
    pub contact_radius: (f32, f32),
    pub texture_amplitude: (f32, f32),
}

pub const PRESETS: [ObjectPreset; 9] = [
    ObjectPreset {
        name: "apple",
        mass: (0.15, 0.25),
        friction: (0.5, 0.7),
        contact_radius: (0.25, 0.38),
        texture_amplitude: (0.004, 0.010),
    },
    ObjectPreset {
        name: "cup",
        mass: (0.20, 0.35),
        friction: (0.4, 0.6),
        contact_radius: (0.20, 0.30),
        texture_amplitude: (0.003, 0.008),
    },
    ObjectPreset {
        name: "capsicum",
        mass: (0.10, 0.20),
        friction: (0.5, 0.8),
        contact_radius: (0.28, 0.42),
        texture_amplitude: (0.004, 0.012),
    },
    ObjectPreset {
        name: "orange",
        mass: (0.15, 0.30),
        friction: (0.5, 0.7),
        contact_radius: (0.26, 0.40),
        texture_amplitude: (0.008, 0.018),
    },
    ObjectPreset {
        name: "tomato",
        mass: (0.10, 0.20),
        friction: (0.55, 0.8),
        contact_radius: (0.26, 0.38),
        texture_amplitude: (0.003, 0.009),
    },
    ObjectPreset {
        name: "bottle",
        mass: (0.30, 0.60),
        friction: (0.3, 0.5),
        contact_radius: (0.18, 0.28),
        texture_amplitude: (0.002, 0.006),
    },
    ObjectPreset {
        name: "gelatin-box",
        mass: (0.10, 0.30),
        friction: (0.4, 0.7),
        contact_radius: (0.30, 0.45),
        texture_amplitude: (0.005, 0.012),
    },
    ObjectPreset {
        name: "bread",
        mass: (0.05, 0.15),
        friction: (0.6, 0.9),
        contact_radius: (0.32, 0.45),
        texture_amplitude: (0.010, 0.020),
    },
    ObjectPreset {
        name: "jam-jar",
        mass: (0.30, 0.50),
        friction: (0.35, 0.55),
        contact_radius: (0.20, 0.32),
        texture_amplitude: (0.002, 0.007),
    },
];

/// Draw a concrete object: pick a preset uniformly, then each parameter
/// uniformly inside its range.
pub fn sample_object(rng: &mut impl Rng) -> ObjectParams {
    let preset = &PRESETS[rng.gen_range(0..PRESETS.len())];
    sample_from(preset, rng)
}

pub fn sample_from(preset: &ObjectPreset, rng: &mut impl Rng) -> ObjectParams {
    ObjectParams {
        mass: rng.gen_range(preset.mass.0..=preset.mass.1),
        friction: rng.gen_range(preset.friction.0..=preset.friction.1),
        contact_radius: rng.gen_range(preset.contact_radius.0..=preset.contact_radius.1),
        texture_amplitude: rng.gen_range(preset.texture_amplitude.0..=preset.texture_amplitude.1),
    }
}
