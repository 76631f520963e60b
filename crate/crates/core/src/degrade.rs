//! Bracketed LDR capture from a high-rate HDR sequence.
//!
//! The sensor is modelled in linear light: exposure is scene radiance times
//! exposure time, motion blur is the mean of the HDR frames the exposure
//! spans, noise is heteroscedastic Gaussian with variance `a·e + b`, and the
//! result is clipped, gamma encoded and quantized to 8 bits.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::{LdrFrame, RadianceImage};
use crate::rng;
use crate::transfer::{gamma_encode_value, DEFAULT_GAMMA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BracketSpec {
    pub evs: Vec<f64>,
    /// Exposure time at 0 EV, seconds.
    pub base_exposure: f64,
    /// Sensor gain: radiance × base_exposure × anchor is the 0 EV linear exposure.
    pub anchor: f64,
    pub frame_interval_ns: u64,
    pub noise_a: f64,
    pub noise_b: f64,
    pub seed: u64,
    pub readout_gap_ns: u64,
    pub gamma: f64,
}

impl Default for BracketSpec {
    fn default() -> Self {
        Self {
            evs: vec![-6.0, -3.0, 0.0, 3.0, 6.0],
            base_exposure: 0.032,
            anchor: 31.25,
            frame_interval_ns: 1_000_000,
            noise_a: 1e-3,
            noise_b: 1e-5,
            seed: 0,
            readout_gap_ns: 0,
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl BracketSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.evs.is_empty(), "bracket needs at least one EV");
        ensure!(
            self.evs.iter().all(|e| e.is_finite()),
            "EV values must be finite"
        );
        ensure!(
            self.evs.windows(2).all(|w| w[0] < w[1]),
            "EV values must be strictly increasing: {:?}",
            self.evs
        );
        ensure!(
            self.evs.contains(&0.0),
            "bracket must contain the 0 EV reference: {:?}",
            self.evs
        );
        ensure!(
            self.base_exposure.is_finite() && self.base_exposure > 0.0,
            "base_exposure must be positive"
        );
        ensure!(self.anchor.is_finite() && self.anchor > 0.0, "anchor must be positive");
        ensure!(self.frame_interval_ns > 0, "frame_interval_ns must be positive");
        ensure!(
            self.noise_a >= 0.0 && self.noise_b >= 0.0,
            "noise coefficients must be non-negative"
        );
        ensure!(
            self.readout_gap_ns.is_multiple_of(self.frame_interval_ns),
            "readout gap {} ns is not a multiple of the frame interval {} ns",
            self.readout_gap_ns,
            self.frame_interval_ns
        );
        ensure!(self.gamma > 0.0, "gamma must be positive");
        for &ev in &self.evs {
            self.samples_for(ev)?;
        }
        Ok(())
    }

    /// Nominal exposure time in seconds.
    pub fn exposure_time(&self, ev: f64) -> f64 {
        self.base_exposure * ev.exp2()
    }

    /// Number of high-rate frames the exposure integrates, `round(τ / Δ)`.
    pub fn samples_for(&self, ev: f64) -> Result<usize> {
        let k = (self.exposure_time(ev) * 1e9 / self.frame_interval_ns as f64).round();
        ensure!(
            k >= 1.0,
            "exposure at {ev} EV ({} s) is shorter than half a frame interval",
            self.exposure_time(ev)
        );
        Ok(k as usize)
    }
}

/// Linear sensor exposure; unclipped, may exceed 1 or (after noise) go negative.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorExposure {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl SensorExposure {
    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }
}

/// Average the first `K` frames and scale to sensor exposure at `ev`.
pub fn expose(hdr_frames: &[RadianceImage], ev: f64, spec: &BracketSpec) -> Result<SensorExposure> {
    let k = spec.samples_for(ev)?;
    ensure!(
        hdr_frames.len() >= k,
        "exposure at {ev} EV spans {k} frames but only {} are available",
        hdr_frames.len()
    );
    let first = &hdr_frames[0];
    ensure!(
        hdr_frames[..k].iter().all(|f| f.same_shape(first)),
        "HDR frames differ in shape"
    );
    let gain = spec.anchor * spec.exposure_time(ev);
    let mut sum = vec![0f64; first.data().len()];
    for f in &hdr_frames[..k] {
        for (s, &v) in sum.iter_mut().zip(f.data()) {
            *s += v as f64;
        }
    }
    let data = sum.into_iter().map(|s| gain * (s / k as f64)).collect();
    Ok(SensorExposure {
        width: first.width(),
        height: first.height(),
        channels: first.channels(),
        data,
    })
}

/// Heteroscedastic Gaussian noise, `σ² = a·e + b`. The generator is keyed by
/// `(seed, frame_index, pixel)`, so the result does not depend on evaluation order.
pub fn add_noise(e: &SensorExposure, spec: &BracketSpec, frame_index: u64) -> SensorExposure {
    if spec.noise_a == 0.0 && spec.noise_b == 0.0 {
        return e.clone();
    }
    let ch = e.channels;
    let data = e
        .data
        .par_chunks(ch)
        .enumerate()
        .flat_map_iter(|(pixel, px)| {
            let mut rng = rng::keyed(spec.seed, 0xD0_15E0_0000 + frame_index, pixel as u64);
            px.iter()
                .map(|&v| {
                    let var = (spec.noise_a * v.max(0.0) + spec.noise_b).max(0.0);
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + var.sqrt() * z
                })
                .collect::<Vec<_>>()
        })
        .collect();
    SensorExposure {
        data,
        ..e.clone()
    }
}

/// Clip to `[0, 1]`, gamma encode, round half away from zero to 8 bits.
pub fn quantize_value(e: f64, gamma: f64) -> u8 {
    let v = gamma_encode_value(e.clamp(0.0, 1.0), gamma);
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn quantize(
    e: &SensorExposure,
    ev: f64,
    exposure_time: f64,
    timestamp: u64,
    gamma: f64,
) -> Result<LdrFrame> {
    let data = e.data.iter().map(|&v| quantize_value(v, gamma)).collect();
    LdrFrame::new(
        e.width,
        e.height,
        e.channels,
        data,
        ev,
        exposure_time,
        timestamp,
    )
}

/// One exposure of the bracket, in units of the high-rate sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureSlot {
    pub ev: f64,
    pub start_index: usize,
    pub samples: usize,
    pub timestamp: u64,
    pub exposure_time: f64,
}

impl CaptureSlot {
    /// Sequence index of the sample nearest the exposure midpoint (`start + K/2`).
    pub fn mid_index(&self) -> usize {
        self.start_index + self.samples / 2
    }

    pub fn end_index(&self) -> usize {
        self.start_index + self.samples
    }
}

/// Sequential capture in ascending EV order, each exposure starting when the
/// previous one ends plus the readout gap.
pub fn schedule(spec: &BracketSpec) -> Result<Vec<CaptureSlot>> {
    spec.validate()?;
    let gap = (spec.readout_gap_ns / spec.frame_interval_ns) as usize;
    let mut start = 0usize;
    let mut slots = Vec::with_capacity(spec.evs.len());
    for &ev in &spec.evs {
        let samples = spec.samples_for(ev)?;
        slots.push(CaptureSlot {
            ev,
            start_index: start,
            samples,
            timestamp: start as u64 * spec.frame_interval_ns,
            exposure_time: spec.exposure_time(ev),
        });
        start += samples + gap;
    }
    Ok(slots)
}

/// Sequence length needed to capture the whole bracket.
pub fn required_frames(spec: &BracketSpec) -> Result<usize> {
    Ok(schedule(spec)?.last().map(|s| s.end_index()).unwrap_or(0))
}

pub fn reference_slot(slots: &[CaptureSlot]) -> &CaptureSlot {
    slots
        .iter()
        .find(|s| s.ev == 0.0)
        .expect("validated bracket contains 0 EV")
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Noise- and blur-free LDR at every EV, exposed from the reference-instant frame.
    pub clean_ldr: Vec<LdrFrame>,
    pub reference_hdr: RadianceImage,
    pub reference_index: usize,
    pub reference_timestamp: u64,
}

#[derive(Debug, Clone)]
pub struct DegradedBracket {
    pub frames: Vec<LdrFrame>,
    pub schedule: Vec<CaptureSlot>,
    pub ground_truth: GroundTruth,
}

pub fn degrade_bracket(hdr_frames: &[RadianceImage], spec: &BracketSpec) -> Result<DegradedBracket> {
    let slots = schedule(spec)?;
    let needed = slots.last().map(|s| s.end_index()).unwrap_or(0);
    ensure!(
        hdr_frames.len() >= needed,
        "bracket capture needs {needed} HDR frames, sequence has {}",
        hdr_frames.len()
    );
    let frames = slots
        .iter()
        .enumerate()
        .map(|(n, slot)| {
            let e = expose(&hdr_frames[slot.start_index..], slot.ev, spec)?;
            let noisy = add_noise(&e, spec, n as u64);
            quantize(&noisy, slot.ev, slot.exposure_time, slot.timestamp, spec.gamma)
        })
        .collect::<Result<Vec<_>>>()?;

    let reference = *reference_slot(&slots);
    let reference_index = reference.mid_index();
    let reference_hdr = hdr_frames[reference_index].clone();
    let reference_timestamp = reference_index as u64 * spec.frame_interval_ns;
    let sharp_spec = BracketSpec {
        frame_interval_ns: 1,
        ..spec.clone()
    };
    let clean_ldr = slots
        .iter()
        .map(|slot| {
            let gain = sharp_spec.anchor * sharp_spec.exposure_time(slot.ev);
            let e = SensorExposure {
                width: reference_hdr.width(),
                height: reference_hdr.height(),
                channels: reference_hdr.channels(),
                data: reference_hdr.data().iter().map(|&v| gain * v as f64).collect(),
            };
            quantize(&e, slot.ev, slot.exposure_time, reference_timestamp, spec.gamma)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(DegradedBracket {
        frames,
        schedule: slots,
        ground_truth: GroundTruth {
            clean_ldr,
            reference_hdr,
            reference_index,
            reference_timestamp,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless() -> BracketSpec {
        BracketSpec {
            noise_a: 0.0,
            noise_b: 0.0,
            ..BracketSpec::default()
        }
    }

    fn constant_frames(n: usize, v: f32) -> Vec<RadianceImage> {
        vec![RadianceImage::new(4, 3, 1, vec![v; 12]).unwrap(); n]
    }

    #[test]
    fn default_schedule_is_sequential() {
        let slots = schedule(&BracketSpec::default()).unwrap();
        let samples: Vec<usize> = slots.iter().map(|s| s.samples).collect();
        assert_eq!(samples, vec![1, 4, 32, 256, 2048]);
        for w in slots.windows(2) {
            assert!(w[1].timestamp > w[0].timestamp);
            assert_eq!(w[1].start_index, w[0].end_index());
        }
        assert_eq!(required_frames(&BracketSpec::default()).unwrap(), 2341);
    }

    #[test]
    fn readout_gap_must_align_to_frames() {
        let spec = BracketSpec {
            readout_gap_ns: 1500,
            ..BracketSpec::default()
        };
        assert!(spec.validate().is_err());
        let spec = BracketSpec {
            readout_gap_ns: 2_000_000,
            ..BracketSpec::default()
        };
        let slots = schedule(&spec).unwrap();
        assert_eq!(slots[1].start_index, slots[0].end_index() + 2);
    }

    #[test]
    fn expose_static_and_ev_linearity() {
        let spec = noiseless();
        let frames = constant_frames(64, 0.3);
        let e0 = expose(&frames, 0.0, &spec).unwrap();
        assert!((e0.data[0] - 31.25 * 0.032 * 0.3f32 as f64).abs() < 1e-15);
        let e1 = expose(&frames, 1.0, &spec).unwrap();
        assert!((e1.data[0] - 2.0 * e0.data[0]).abs() < 1e-15);
        assert!(expose(&frames[..10], 0.0, &spec).is_err());
    }

    #[test]
    fn moving_edge_blurs_into_linear_ramp() {
        // Step edge moving one pixel per frame; eight frames average into an 8-step ramp.
        let spec = BracketSpec {
            evs: vec![0.0],
            base_exposure: 8e-6,
            anchor: 1.0 / 8e-6,
            frame_interval_ns: 1000,
            ..noiseless()
        };
        let frames: Vec<RadianceImage> = (0..8)
            .map(|k| {
                RadianceImage::from_fn(24, 1, 1, |x, _, _| if x >= 8 + k { 0.0 } else { 1.0 })
                    .unwrap()
            })
            .collect();
        let e = expose(&frames, 0.0, &spec).unwrap();
        for x in 0..24 {
            // pixel x is bright in frames k with x < 8 + k
            let bright = (0..8).filter(|&k| x < 8 + k).count();
            assert!((e.data[x] - bright as f64 / 8.0).abs() < 1e-15);
        }
        for x in 8..16 {
            assert!((e.data[x] - (15 - x) as f64 / 8.0).abs() < 1e-15);
        }
    }

    #[test]
    fn noise_free_is_identity_and_noise_is_keyed() {
        let e = SensorExposure::constant(8, 8, 3, 0.25);
        assert_eq!(add_noise(&e, &noiseless(), 0), e);
        let spec = BracketSpec::default();
        let a = add_noise(&e, &spec, 3);
        assert_eq!(a, add_noise(&e, &spec, 3));
        assert_ne!(a, add_noise(&e, &spec, 4));
    }

    #[test]
    fn noise_variance_matches_model() {
        let spec = BracketSpec {
            noise_a: 0.01,
            noise_b: 1e-4,
            seed: 11,
            ..BracketSpec::default()
        };
        for (level, want) in [(0.25, 0.0026), (0.0, 1e-4)] {
            let e = SensorExposure::constant(1000, 100, 1, level);
            let n = add_noise(&e, &spec, 0);
            let mean = n.data.iter().sum::<f64>() / n.data.len() as f64;
            let var = n.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (n.data.len() - 1) as f64;
            assert!((var / want - 1.0).abs() < 0.05, "level {level}: {var} vs {want}");
        }
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_value(2.0, 2.4), 255);
        assert_eq!(quantize_value(-0.1, 2.4), 0);
        assert_eq!(quantize_value(0.189465, 2.4), 128);
        // bound on the gamma-domain quantization error
        for i in 0..=1000 {
            let e = i as f64 / 1000.0;
            let v = gamma_encode_value(e, 2.4);
            let code = quantize_value(e, 2.4) as f64 / 255.0;
            assert!((code - v).abs() <= 1.0 / 510.0 + 1e-15);
        }
    }

    #[test]
    fn static_noiseless_bracket_matches_ground_truth() {
        let n = required_frames(&BracketSpec::default()).unwrap();
        let img = RadianceImage::from_fn(6, 5, 3, |x, y, c| {
            (0.002 * (1.0 + x as f32) * (1.0 + y as f32) * (1.0 + c as f32)).powf(1.5) * 40.0
        })
        .unwrap();
        let frames = vec![img; n];
        let out = degrade_bracket(&frames, &noiseless()).unwrap();
        assert_eq!(out.frames.len(), 5);
        for (d, g) in out.frames.iter().zip(&out.ground_truth.clean_ldr) {
            assert_eq!(d.data(), g.data());
        }
        // non-decreasing codes in EV
        for w in out.frames.windows(2) {
            assert!(w[0].data().iter().zip(w[1].data()).all(|(a, b)| a <= b));
        }
        assert_eq!(out.ground_truth.reference_index, 5 + 16);
    }

    #[test]
    fn clipped_at_zero_ev_is_resolved_at_minus_six() {
        let n = required_frames(&BracketSpec::default()).unwrap();
        let radiance = 12.0f32;
        let frames = vec![RadianceImage::new(1, 1, 1, vec![radiance]).unwrap(); n];
        let spec = noiseless();
        let out = degrade_bracket(&frames, &spec).unwrap();
        assert_eq!(out.frames[2].data()[0], 255);
        let lin = 31.25 * 0.032 * radiance as f64 / 64.0;
        let want = (lin.powf(1.0 / 2.4) * 255.0).round() as u8;
        assert_eq!(out.frames[0].data()[0], want);
    }

    #[test]
    fn blur_preserves_mean_exposure() {
        let spec = noiseless();
        let frames: Vec<RadianceImage> = (0..32)
            .map(|k| RadianceImage::from_fn(8, 8, 1, |x, y, _| ((x + y + k) % 5) as f32 * 0.1).unwrap())
            .collect();
        let e = expose(&frames, 0.0, &spec).unwrap();
        let mean_blur = e.data.iter().sum::<f64>() / 64.0;
        let gain = spec.anchor * spec.base_exposure;
        let mean_frames = frames
            .iter()
            .map(|f| f.data().iter().map(|&v| gain * v as f64).sum::<f64>() / 64.0)
            .sum::<f64>()
            / 32.0;
        assert!((mean_blur - mean_frames).abs() < 1e-12);
    }
}
