//! Procedural HDR test scenes: smooth log-domain textures spanning a chosen
//! radiance range, and an optional textured disc foreground.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::{Plane, RadianceImage};
use crate::rng;
use crate::scenesim::Foreground;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticScene {
    /// Size of the rendered (cropped) frames.
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub min_radiance: f64,
    pub max_radiance: f64,
    /// Number of sinusoids summed in the log domain.
    pub waves: usize,
    pub min_wavelength: f64,
    pub max_wavelength: f64,
    pub foreground: bool,
    pub foreground_radius: f64,
}

impl Default for SyntheticScene {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            channels: 3,
            min_radiance: 0.002,
            max_radiance: 40.0,
            waves: 12,
            min_wavelength: 12.0,
            max_wavelength: 48.0,
            foreground: false,
            foreground_radius: 12.0,
        }
    }
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.width >= 1 && self.height >= 1, "synthetic scene size must be positive");
        ensure!(
            self.channels == 1 || self.channels == 3,
            "synthetic scene needs 1 or 3 channels, got {}",
            self.channels
        );
        ensure!(
            self.min_radiance > 0.0 && self.max_radiance > self.min_radiance && self.max_radiance.is_finite(),
            "radiance range [{}, {}] is invalid",
            self.min_radiance,
            self.max_radiance
        );
        ensure!(self.waves >= 1, "synthetic scene needs at least one wave");
        ensure!(
            self.min_wavelength > 0.0 && self.max_wavelength >= self.min_wavelength,
            "wavelength range is invalid"
        );
        ensure!(self.foreground_radius > 0.0, "foreground radius must be positive");
        Ok(())
    }
}

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amplitude: f64,
}

fn waves<R: Rng>(count: usize, min_wl: f64, max_wl: f64, rng: &mut R) -> Vec<Wave> {
    (0..count)
        .map(|_| {
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let wl = rng.gen_range(min_wl..=max_wl);
            let k = std::f64::consts::TAU / wl;
            Wave {
                kx: k * theta.cos(),
                ky: k * theta.sin(),
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
                amplitude: rng.gen_range(0.5..1.0),
            }
        })
        .collect()
}

fn field(ws: &[Wave], x: f64, y: f64) -> f64 {
    ws.iter().map(|w| w.amplitude * (w.kx * x + w.ky * y + w.phase).sin()).sum()
}

/// Texture of size `width × height`, log-uniformly spanning the radiance range.
/// Colour channels share the luminance texture and carry a mild tint of their own.
pub fn texture(
    scene: &SyntheticScene,
    width: usize,
    height: usize,
    seed: u64,
    tag: u64,
) -> Result<RadianceImage> {
    scene.validate()?;
    let mut r = rng::stream(seed, tag);
    let base = waves(scene.waves, scene.min_wavelength, scene.max_wavelength, &mut r);
    let tints: Vec<Vec<Wave>> = (0..scene.channels)
        .map(|_| waves(3, scene.max_wavelength, 2.0 * scene.max_wavelength, &mut r))
        .collect();
    let bound: f64 = base.iter().map(|w| w.amplitude).sum();
    let (lo, hi) = (scene.min_radiance.ln(), scene.max_radiance.ln());
    let tint_bound = 0.15 * (hi - lo);
    RadianceImage::from_fn(width, height, scene.channels, |x, y, c| {
        let (xf, yf) = (x as f64, y as f64);
        // normalized to [0, 1] by the amplitude bound, independent of size
        let t = 0.5 + 0.5 * field(&base, xf, yf) / bound;
        let tint = if scene.channels == 1 {
            0.0
        } else {
            tint_bound * field(&tints[c], xf, yf) / 3.0
        };
        (lo + t * (hi - lo) + tint).clamp(lo, hi).exp() as f32
    })
}

/// Textured disc with a one-pixel soft edge.
pub fn disc_foreground(scene: &SyntheticScene, seed: u64) -> Result<Foreground> {
    let r = scene.foreground_radius;
    let side = (2.0 * r).ceil() as usize + 2;
    let image = texture(scene, side, side, seed, 0xF0_0000)?;
    let centre = (side as f64 - 1.0) / 2.0;
    let matte = (0..side * side)
        .map(|i| {
            let (x, y) = ((i % side) as f64 - centre, (i / side) as f64 - centre);
            (r + 0.5 - (x * x + y * y).sqrt()).clamp(0.0, 1.0) as f32
        })
        .collect();
    Ok(Foreground {
        image,
        matte: Plane::new(side, side, matte),
    })
}
