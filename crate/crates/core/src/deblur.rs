//! Event double integral deblurring.
//!
//! A blurred exposure is the mean of the latent frames sampled during the
//! exposure; events give each sample relative to the latent frame at the
//! target time, `L(t_k) ≈ L(target)·exp(c·N(target → t_k))`. Hence
//! `L(target) = B / mean_k exp(c·N(target → t_k))`.

use rayon::prelude::*;

use crate::error::{ensure, Result};
use crate::eventsim::EventStream;
use crate::image::{Domain, LdrFrame, NormalizedImage, Plane};
use crate::transfer::{gamma_decode_value, gamma_encode_value};

/// The high-rate samples an exposure integrated over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExposureWindow {
    pub start: u64,
    pub frame_interval_ns: u64,
    pub samples: usize,
}

impl ExposureWindow {
    pub fn of_frame(frame: &LdrFrame, frame_interval_ns: u64) -> Result<Self> {
        ensure!(frame_interval_ns > 0, "frame interval must be positive");
        let samples = (frame.exposure_ns() / frame_interval_ns as f64).round();
        ensure!(
            samples >= 1.0,
            "exposure of {} s is shorter than half a frame interval",
            frame.exposure_time
        );
        Ok(Self {
            start: frame.timestamp,
            frame_interval_ns,
            samples: samples as usize,
        })
    }

    pub fn sample_time(&self, k: usize) -> u64 {
        self.start + k as u64 * self.frame_interval_ns
    }

    pub fn last_sample(&self) -> u64 {
        self.sample_time(self.samples - 1)
    }

    pub fn end(&self) -> u64 {
        self.sample_time(self.samples)
    }

    /// Sample instant at `start + ⌊K/2⌋·Δ`.
    pub fn midpoint(&self) -> u64 {
        self.sample_time(self.samples / 2)
    }

    pub fn contains(&self, t: u64) -> bool {
        t >= self.start && t <= self.end()
    }
}

/// `mean_k exp(c · N(target → t_k))` for one pixel's time-ordered events.
pub fn edi_denominator(events: &[(u64, i8)], c: f64, window: &ExposureWindow, target: u64) -> f64 {
    let at_target: i64 = events
        .iter()
        .take_while(|(t, _)| *t <= target)
        .map(|&(_, p)| p as i64)
        .sum();
    let mut cumulative: i64 = 0;
    let mut next = 0;
    let mut sum = 0.0;
    for k in 0..window.samples {
        let tk = window.sample_time(k);
        while next < events.len() && events[next].0 <= tk {
            cumulative += events[next].1 as i64;
            next += 1;
        }
        sum += (c * (cumulative - at_target) as f64).exp();
    }
    sum / window.samples as f64
}

/// Per-pixel denominators for a whole frame.
pub fn edi_denominators(stream: &EventStream, window: &ExposureWindow, target: u64) -> Plane<f64> {
    // only events that can influence the samples or the target level matter
    let lo = window.start.min(target);
    let hi = window.last_sample().max(target);
    let slice = stream.slice(lo, hi);
    let mut per_pixel = vec![Vec::new(); stream.width * stream.height];
    for e in slice {
        per_pixel[e.y as usize * stream.width + e.x as usize].push((e.t, e.polarity));
    }
    // counts are relative to the target, so events at or before `lo` cancel
    let data = per_pixel
        .par_iter()
        .map(|ev| edi_denominator(ev, stream.contrast_threshold, window, target))
        .collect();
    Plane::new(stream.width, stream.height, data)
}

#[derive(Debug, Clone)]
pub struct Deblurred {
    pub image: NormalizedImage,
    /// False where the input was saturated (code 0 or 255) and passed through.
    pub valid: Plane<bool>,
    pub target_t: u64,
}

/// Recover the sharp frame at `target_t` (default: exposure midpoint).
pub fn edi_deblur(
    blurred: &LdrFrame,
    stream: &EventStream,
    frame_interval_ns: u64,
    target_t: Option<u64>,
    gamma: f64,
) -> Result<Deblurred> {
    ensure!(
        stream.width == blurred.width() && stream.height == blurred.height(),
        "event sensor {}x{} does not match frame {}x{}",
        stream.width,
        stream.height,
        blurred.width(),
        blurred.height()
    );
    let window = ExposureWindow::of_frame(blurred, frame_interval_ns)?;
    let target = target_t.unwrap_or_else(|| window.midpoint());
    ensure!(
        window.contains(target),
        "target time {target} ns lies outside the exposure window [{}, {}] ns",
        window.start,
        window.end()
    );
    stream.check_window(window.start, window.last_sample())?;

    let denominators = edi_denominators(stream, &window, target);
    let ch = blurred.channels();
    let codes = blurred.data();
    let mut data = Vec::with_capacity(codes.len());
    let mut valid = Vec::with_capacity(codes.len() / ch);
    for (i, px) in codes.chunks_exact(ch).enumerate() {
        let d = denominators.data[i];
        let saturated = px.iter().any(|&c| c == 0 || c == 255);
        valid.push(!saturated);
        for &code in px {
            let v = code as f64 / 255.0;
            // no events between the sample instants and the target: nothing to undo
            if saturated || d == 1.0 {
                data.push(v);
            } else {
                let latent = (gamma_decode_value(v, gamma) / d).clamp(0.0, 1.0);
                data.push(gamma_encode_value(latent, gamma));
            }
        }
    }
    Ok(Deblurred {
        image: NormalizedImage::from_raw(
            blurred.width(),
            blurred.height(),
            ch,
            Domain::GammaEncoded,
            data,
        ),
        valid: Plane::new(blurred.width(), blurred.height(), valid),
        target_t: target,
    })
}
