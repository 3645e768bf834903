//! Procedural 3x32x32 image classes for smoke tests and offline runs.
//!
//! Each class pairs a texture (horizontal, vertical or diagonal stripes,
//! checkerboard, ring) with a warm or cool foreground palette. Frequency,
//! phase, ring center, background colour, contrast and pixel noise vary
//! per image, so the classes overlap enough that a model has to learn
//! both texture and colour.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::nn::derive_seed;
use crate::Result;

const SIDE: usize = 32;
const WARM: [[f64; 3]; 2] = [[220.0, 90.0, 40.0], [200.0, 170.0, 40.0]];
const COOL: [[f64; 3]; 2] = [[40.0, 110.0, 210.0], [60.0, 190.0, 150.0]];

/// Knobs for [`generate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Standard deviation of per-pixel gaussian noise, in 0-255 units.
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { classes: 10, noise: 40.0 }
    }
}

fn texture(kind: usize, y: f64, x: f64, freq: f64, phase: f64, (cy, cx): (f64, f64)) -> f64 {
    let s = |t: f64| (t * freq + phase).sin();
    match kind {
        0 => s(y),
        1 => s(x),
        2 => s((x + y) * std::f64::consts::FRAC_1_SQRT_2),
        3 => s(x) * s(y + phase),
        _ => s(((y - cy).powi(2) + (x - cx).powi(2)).sqrt()),
    }
}

/// `n` images with labels cycling through `0..spec.classes`.
pub fn generate(n: usize, spec: SyntheticSpec, seed: u64) -> Result<Dataset> {
    let classes = spec.classes.clamp(1, 10);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("finite std");
    let mut pixels = Vec::with_capacity(n * 3 * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let kind = label % 5;
        let palette = if label < 5 { &WARM } else { &COOL };
        let fg = palette[rng.random_range(0..2)];
        let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(40.0..200.0));
        let freq = rng.random_range(0.35..0.9);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let center = (rng.random_range(8.0..24.0), rng.random_range(8.0..24.0));
        let contrast = rng.random_range(0.35..0.8);
        let mut img = [0u8; 3 * SIDE * SIDE];
        for c in 0..3 {
            for y in 0..SIDE {
                for x in 0..SIDE {
                    let t = 0.5 + 0.5 * texture(kind, y as f64, x as f64, freq, phase, center);
                    let mix = contrast * t;
                    let v = bg[c] * (1.0 - mix) + fg[c] * mix + noise.sample(&mut rng);
                    img[(c * SIDE + y) * SIDE + x] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        pixels.extend_from_slice(&img);
        labels.push(label as u8);
    }
    let mut d = Dataset::new((3, SIDE, SIDE), pixels, labels, classes)?;
    d.class_names = Some(
        ["h-warm", "v-warm", "d-warm", "check-warm", "ring-warm", "h-cool", "v-cool", "d-cool", "check-cool", "ring-cool"]
            [..classes]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    Ok(d)
}
