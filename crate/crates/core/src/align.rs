//! Inter-exposure alignment.
//!
//! Each frame is described by two channels: log intensity (after the
//! reference has been brought to the frame's exposure) and an event edge map
//! (absolute event count during the frame's own exposure, normalized by its
//! 99th percentile). Events keep firing where the LDR frame is clipped, so the
//! second channel carries motion information the first one lacks.
//!
//! Flow is estimated coarse to fine with per-pixel iterative Lucas–Kanade on
//! both channels and applied by backward warping: `out(p) = src(p + flow(p))`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::eventsim::{accumulate_count, EventStream};
use crate::image::{bilinear, Domain, NormalizedImage, Plane};
use crate::io::pfm::FloatMap;
use crate::transfer::gamma_decode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowParams {
    /// Maximum number of pyramid levels; `None` halves until the smaller side is ≤ `min_size`.
    pub pyramid_levels: Option<usize>,
    pub min_size: usize,
    /// Side of the square least-squares window (odd).
    pub window: usize,
    pub iterations: usize,
    /// Weight of the event channel relative to the intensity channel.
    pub lambda_ev: f64,
    /// Tikhonov damping added to the normal equations.
    pub damping: f64,
    /// Smallest structure-tensor eigenvalue for a pixel to count as valid.
    pub min_eigenvalue: f64,
    /// Radius of the median filter applied to the flow after each level; 0 disables it.
    pub median_radius: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            pyramid_levels: None,
            min_size: 16,
            window: 7,
            iterations: 10,
            lambda_ev: 1.0,
            damping: 1e-4,
            min_eigenvalue: 1e-6,
            median_radius: 2,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.window % 2 == 1, "flow window must be odd, got {}", self.window);
        ensure!(self.min_size >= 1, "min_size must be at least 1");
        ensure!(self.pyramid_levels != Some(0), "pyramid_levels must be at least 1");
        ensure!(
            self.lambda_ev.is_finite() && self.lambda_ev >= 0.0,
            "lambda_ev must be non-negative"
        );
        ensure!(self.damping >= 0.0, "damping must be non-negative");
        Ok(())
    }
}

/// Backward flow: reference pixel `p` corresponds to source position `p + (u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn constant(width: usize, height: usize, u: f64, v: f64) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            u: vec![u; n],
            v: vec![v; n],
            valid: vec![true; n],
        }
    }

    pub fn to_float_map(&self) -> FloatMap {
        let mut data = Vec::with_capacity(3 * self.u.len());
        for i in 0..self.u.len() {
            data.push(self.u[i] as f32);
            data.push(self.v[i] as f32);
            data.push(if self.valid[i] { 1.0 } else { 0.0 });
        }
        FloatMap {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    pub fn from_float_map(map: &FloatMap) -> Result<Self> {
        ensure!(map.channels == 3, "flow files carry 3 channels (u, v, validity)");
        ensure!(
            map.data.iter().all(|v| v.is_finite()),
            "flow components must be finite"
        );
        let px = map.data.chunks_exact(3);
        Ok(Self {
            width: map.width,
            height: map.height,
            u: px.clone().map(|p| p[0] as f64).collect(),
            v: px.clone().map(|p| p[1] as f64).collect(),
            valid: px.map(|p| p[2] >= 0.5).collect(),
        })
    }
}

/// Two-channel alignment representation of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentChannels {
    pub intensity: Plane<f64>,
    pub events: Plane<f64>,
    /// Per-pixel trust in `intensity`, 0 where the frame is clipped or crushed.
    pub confidence: Plane<f64>,
    /// Event count the edge map was normalized by. Maps built from only a
    /// few events are mostly noise and get proportionally less weight.
    pub event_support: f64,
}

impl AlignmentChannels {
    /// Channels with full intensity confidence everywhere.
    pub fn new(intensity: Plane<f64>, events: Plane<f64>) -> Self {
        let confidence = Plane::filled(intensity.width, intensity.height, 1.0);
        Self {
            intensity,
            events,
            confidence,
            event_support: f64::INFINITY,
        }
    }
}

/// Trust in an encoded value: ramps to zero near the clip limits.
pub fn code_confidence(v: f64) -> f64 {
    let low = ((v - 0.01) / 0.04).clamp(0.0, 1.0);
    let high = ((0.99 - v) / 0.04).clamp(0.0, 1.0);
    low * high
}

fn confidence_plane(frame: &NormalizedImage, f: impl Fn(f64) -> f64) -> Plane<f64> {
    let ch = frame.channels();
    Plane::new(
        frame.width(),
        frame.height(),
        frame
            .data()
            .chunks_exact(ch)
            .map(|px| px.iter().map(|&v| f(v)).product())
            .collect(),
    )
}

/// Nearest-rank percentile of non-negative values.
fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Event count at which an edge map gets the full channel weight.
pub const FULL_EVENT_SUPPORT: f64 = 4.0;

/// Event edge map over `(t0, t1]`, normalized by its 99th percentile.
pub fn event_edge_map(stream: &EventStream, t0: u64, t1: u64) -> Plane<f64> {
    edge_map_with_scale(stream, t0, t1).0
}

fn edge_map_with_scale(stream: &EventStream, t0: u64, t1: u64) -> (Plane<f64>, f64) {
    let counts = accumulate_count(stream, t0, t1).map(|c| c as f64);
    let mut scale = percentile(&counts.data, 0.99);
    if scale <= 0.0 {
        scale = counts.data.iter().copied().fold(0.0, f64::max);
    }
    if scale <= 0.0 {
        return (counts, 0.0);
    }
    (counts.map(|c| c / scale), scale)
}

fn log_intensity(frame: &NormalizedImage, gamma: f64, log_floor: f64) -> Result<Plane<f64>> {
    let linear = gamma_decode(frame, gamma)?;
    Ok(linear.gray().map(|v| v.max(log_floor).ln()))
}

/// Exposure window of a frame, `(start, end)` in nanoseconds.
pub type TimeWindow = (u64, u64);

/// When a frame was exposed and for how long.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTiming {
    pub window: TimeWindow,
    /// Seconds.
    pub exposure_time: f64,
}

/// Channels for a frame and for the reference already brought to the frame's
/// exposure. The reference's confidence accounts for clipping in its original
/// exposure, which exposure alignment hides when scaling down.
pub fn build_alignment_channels(
    frame_n: &NormalizedImage,
    frame_ref_aligned: &NormalizedImage,
    stream: &EventStream,
    timing_n: FrameTiming,
    timing_ref: FrameTiming,
    gamma: f64,
    log_floor: f64,
) -> Result<(AlignmentChannels, AlignmentChannels)> {
    frame_n.expect_domain(Domain::GammaEncoded)?;
    frame_ref_aligned.expect_domain(Domain::GammaEncoded)?;
    ensure!(
        frame_n.width() == frame_ref_aligned.width()
            && frame_n.height() == frame_ref_aligned.height(),
        "frames differ in size"
    );
    ensure!(
        stream.width == frame_n.width() && stream.height == frame_n.height(),
        "event sensor does not match frame size"
    );
    for t in [&timing_n, &timing_ref] {
        let (t0, t1) = t.window;
        ensure!(t0 <= t1, "exposure window [{t0}, {t1}] is reversed");
        ensure!(
            t.exposure_time.is_finite() && t.exposure_time > 0.0,
            "exposure time must be positive"
        );
        stream.check_window(t0, t1)?;
    }
    // encoded-domain factor the reference was scaled by
    let k = (timing_n.exposure_time / timing_ref.exposure_time).powf(1.0 / gamma);
    let (events_n, support_n) = edge_map_with_scale(stream, timing_n.window.0, timing_n.window.1);
    let (events_r, support_r) = edge_map_with_scale(stream, timing_ref.window.0, timing_ref.window.1);
    let n = AlignmentChannels {
        intensity: log_intensity(frame_n, gamma, log_floor)?,
        events: events_n,
        confidence: confidence_plane(frame_n, code_confidence),
        event_support: support_n,
    };
    let r = AlignmentChannels {
        intensity: log_intensity(frame_ref_aligned, gamma, log_floor)?,
        events: events_r,
        confidence: confidence_plane(frame_ref_aligned, |v| {
            code_confidence(v) * code_confidence((v / k).min(1.0))
        }),
        event_support: support_r,
    };
    Ok((n, r))
}

const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Binomial blur then keep every other pixel.
fn downsample(p: &Plane<f64>) -> Plane<f64> {
    let (w, h) = (p.width, p.height);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = BINOMIAL
                .iter()
                .enumerate()
                .map(|(k, c)| c * p.data[y * w + clamp(x as isize + k as isize - 2, w)])
                .sum();
        }
    }
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = Vec::with_capacity(nw * nh);
    for y in 0..nh {
        for x in 0..nw {
            let (sx, sy) = (2 * x, 2 * y);
            out.push(
                BINOMIAL
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * tmp[clamp(sy as isize + k as isize - 2, h) * w + sx])
                    .sum(),
            );
        }
    }
    Plane::new(nw, nh, out)
}

fn gradients(p: &Plane<f64>) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (p.width, p.height);
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(h - 1);
            gx[y * w + x] = (p.get(xp, y) - p.get(xm, y)) * 0.5;
            gy[y * w + x] = (p.get(x, yp) - p.get(x, ym)) * 0.5;
        }
    }
    (gx, gy)
}

/// 3×3 minimum filter.
fn erode(p: &Plane<f64>) -> Vec<f64> {
    let (w, h) = (p.width, p.height);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut m = f64::INFINITY;
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    m = m.min(p.data[yy * w + xx]);
                }
            }
            out[y * w + x] = m;
        }
    }
    out
}

struct Level {
    planes_ref: Vec<Plane<f64>>,
    planes_src: Vec<Plane<f64>>,
    conf_ref: Plane<f64>,
    conf_src: Plane<f64>,
}

impl Level {
    fn downsample(&self) -> Level {
        Level {
            planes_ref: self.planes_ref.iter().map(downsample).collect(),
            planes_src: self.planes_src.iter().map(downsample).collect(),
            conf_ref: downsample(&self.conf_ref),
            conf_src: downsample(&self.conf_src),
        }
    }
}

fn smaller_eigenvalue(a: f64, b: f64, c: f64) -> f64 {
    // eigenvalues of [[a, b], [b, c]]
    let mean = 0.5 * (a + c);
    let diff = 0.5 * (a - c);
    mean - (diff * diff + b * b).sqrt()
}

/// Largest update per Gauss–Newton iteration, pixels of the current level.
const MAX_STEP: f64 = 1.0;

/// Refine the flow of every pixel on one pyramid level.
///
/// Each iteration solves the damped normal equations of the window; intensity
/// samples are weighted by the confidence of both frames. Pixels whose
/// structure tensor falls below the eigenvalue floor keep their flow.
fn refine_level(
    level: &Level,
    weights: &[f64],
    init: &FlowField,
    params: &FlowParams,
) -> (FlowField, Vec<f64>) {
    let w = level.planes_ref[0].width;
    let h = level.planes_ref[0].height;
    let r = (params.window / 2) as isize;
    let grads: Vec<(Vec<f64>, Vec<f64>)> = level.planes_ref.iter().map(gradients).collect();
    // a gradient is only as trustworthy as the worst sample it differences
    let conf_ref = erode(&level.conf_ref);

    let results: Vec<(f64, f64, f64)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (px, py) = ((i % w) as isize, (i / w) as isize);
            let mut window = Vec::with_capacity(params.window * params.window);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (qx, qy) = (px + dx, py + dy);
                    if qx >= 0 && qy >= 0 && qx < w as isize && qy < h as isize {
                        window.push((qx as usize, qy as usize));
                    }
                }
            }
            let (mut du, mut dv) = (init.u[i], init.v[i]);
            let mut eig = 0.0;
            for it in 0..=params.iterations {
                let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (ch, (gx, gy)) in grads.iter().enumerate() {
                    if weights[ch] == 0.0 {
                        continue;
                    }
                    let rf = &level.planes_ref[ch];
                    let sr = &level.planes_src[ch];
                    for &(qx, qy) in &window {
                        let j = qy * w + qx;
                        let (sx, sy) = (qx as f64 + du, qy as f64 + dv);
                        let wt = if ch == 0 {
                            weights[0] * conf_ref[j] * level.conf_src.sample(sx, sy)
                        } else {
                            weights[ch]
                        };
                        if wt == 0.0 {
                            continue;
                        }
                        let e = rf.data[j] - sr.sample(sx, sy);
                        a11 += wt * gx[j] * gx[j];
                        a12 += wt * gx[j] * gy[j];
                        a22 += wt * gy[j] * gy[j];
                        b1 += wt * gx[j] * e;
                        b2 += wt * gy[j] * e;
                    }
                }
                eig = smaller_eigenvalue(a11, a12, a22);
                // the last pass only measures the tensor at the final flow
                if it == params.iterations || eig < params.min_eigenvalue {
                    break;
                }
                let m11 = a11 + params.damping;
                let m22 = a22 + params.damping;
                let det = m11 * m22 - a12 * a12;
                let mut step_u = (m22 * b1 - a12 * b2) / det;
                let mut step_v = (m11 * b2 - a12 * b1) / det;
                let len = step_u.hypot(step_v);
                if len > MAX_STEP {
                    step_u *= MAX_STEP / len;
                    step_v *= MAX_STEP / len;
                }
                du += step_u;
                dv += step_v;
                if len < 1e-5 {
                    break;
                }
            }
            (du, dv, eig)
        })
        .collect();

    let mut flow = FlowField::constant(w, h, 0.0, 0.0);
    let mut eig = Vec::with_capacity(w * h);
    for (i, (u, v, e)) in results.into_iter().enumerate() {
        flow.u[i] = u;
        flow.v[i] = v;
        eig.push(e);
    }
    (flow, eig)
}

/// Component-wise median over a `(2r+1)²` window, edge-clamped.
fn median_filter(flow: &FlowField, r: usize) -> FlowField {
    if r == 0 {
        return flow.clone();
    }
    let (w, h) = (flow.width, flow.height);
    let r = r as isize;
    let median = |data: &[f64], x: usize, y: usize| -> f64 {
        let mut win = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
        for dy in -r..=r {
            for dx in -r..=r {
                let xc = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                let yc = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                win.push(data[yc * w + xc]);
            }
        }
        win.sort_by(|a, b| a.total_cmp(b));
        win[win.len() / 2]
    };
    let mut out = flow.clone();
    for i in 0..w * h {
        out.u[i] = median(&flow.u, i % w, i / w);
        out.v[i] = median(&flow.v, i % w, i / w);
    }
    out
}

fn upsample_flow(coarse: &FlowField, width: usize, height: usize) -> FlowField {
    let mut out = FlowField::constant(width, height, 0.0, 0.0);
    for y in 0..height {
        for x in 0..width {
            let (cx, cy) = (x as f64 / 2.0, y as f64 / 2.0);
            let i = y * width + x;
            out.u[i] = 2.0 * bilinear(&coarse.u, coarse.width, coarse.height, 1, 0, cx, cy);
            out.v[i] = 2.0 * bilinear(&coarse.v, coarse.width, coarse.height, 1, 0, cx, cy);
        }
    }
    out
}

/// Dense backward flow from `channels_ref` to `channels_n`.
pub fn estimate_flow(
    channels_n: &AlignmentChannels,
    channels_ref: &AlignmentChannels,
    params: &FlowParams,
) -> Result<FlowField> {
    params.validate()?;
    let (w, h) = (channels_ref.intensity.width, channels_ref.intensity.height);
    for p in [
        &channels_ref.events,
        &channels_ref.confidence,
        &channels_n.intensity,
        &channels_n.events,
        &channels_n.confidence,
    ] {
        ensure!(p.width == w && p.height == h, "alignment channels differ in size");
    }
    let support = channels_n.event_support.min(channels_ref.event_support);
    let weights = [1.0, params.lambda_ev * (support / FULL_EVENT_SUPPORT).min(1.0)];

    let mut levels = vec![Level {
        planes_ref: vec![channels_ref.intensity.clone(), channels_ref.events.clone()],
        planes_src: vec![channels_n.intensity.clone(), channels_n.events.clone()],
        conf_ref: channels_ref.confidence.clone(),
        conf_src: channels_n.confidence.clone(),
    }];
    let max_levels = params.pyramid_levels.unwrap_or(usize::MAX);
    loop {
        let last = levels.last().unwrap();
        let (lw, lh) = (last.planes_ref[0].width, last.planes_ref[0].height);
        if levels.len() >= max_levels || lw.min(lh) <= params.min_size || lw.min(lh) < 2 {
            break;
        }
        let next = last.downsample();
        levels.push(next);
    }

    let coarsest = &levels.last().unwrap().planes_ref[0];
    let mut flow = FlowField::constant(coarsest.width, coarsest.height, 0.0, 0.0);
    let mut eig = Vec::new();
    for (li, level) in levels.iter().enumerate().rev() {
        let (lw, lh) = (level.planes_ref[0].width, level.planes_ref[0].height);
        if li + 1 < levels.len() {
            flow = upsample_flow(&flow, lw, lh);
        }
        let (refined, e) = refine_level(level, &weights, &flow, params);
        flow = median_filter(&refined, params.median_radius);
        eig = e;
    }

    for (i, &e) in eig.iter().enumerate() {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        let (sx, sy) = (x + flow.u[i], y + flow.v[i]);
        let inside = sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (h - 1) as f64;
        flow.valid[i] = e >= params.min_eigenvalue && inside && flow.u[i].is_finite();
    }
    Ok(flow)
}

#[derive(Debug, Clone)]
pub struct Warped {
    pub image: NormalizedImage,
    pub valid: Plane<bool>,
}

/// `out(p) = img(p + flow(p))`; pixels with invalid flow are copied unchanged.
pub fn backward_warp(img: &NormalizedImage, flow: &FlowField) -> Result<Warped> {
    ensure!(
        img.width() == flow.width && img.height() == flow.height,
        "flow {}x{} does not match image {}x{}",
        flow.width,
        flow.height,
        img.width(),
        img.height()
    );
    let (w, ch) = (img.width(), img.channels());
    let data: Vec<f64> = (0..w * img.height())
        .into_par_iter()
        .flat_map_iter(|i| {
            let (x, y) = (i % w, i / w);
            let mut px = vec![0.0; ch];
            if flow.valid[i] {
                img.sample(x as f64 + flow.u[i], y as f64 + flow.v[i], &mut px);
            } else {
                for (c, p) in px.iter_mut().enumerate() {
                    *p = img.get(x, y, c);
                }
            }
            px.into_iter().map(|v| v.clamp(0.0, 1.0))
        })
        .collect();
    Ok(Warped {
        image: NormalizedImage::from_raw(w, img.height(), ch, img.domain(), data),
        valid: Plane::new(w, img.height(), flow.valid.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(w: usize, h: usize, dx: f64, dy: f64) -> Plane<f64> {
        let data = (0..w * h)
            .map(|i| {
                let x = (i % w) as f64 - dx;
                let y = (i / w) as f64 - dy;
                (0.3 * (x * 0.31).sin() + 0.25 * (y * 0.23 + 1.0).cos() + 0.2 * ((x + y) * 0.17).sin())
                    * 1.5
            })
            .collect();
        Plane::new(w, h, data)
    }

    fn channels(p: Plane<f64>) -> AlignmentChannels {
        let events = Plane::filled(p.width, p.height, 0.0);
        AlignmentChannels::new(p, events)
    }

    #[test]
    fn identical_inputs_give_zero_flow() {
        let c = channels(texture(48, 40, 0.0, 0.0));
        let flow = estimate_flow(&c, &c, &FlowParams::default()).unwrap();
        assert!(flow.u.iter().chain(&flow.v).all(|&d| d == 0.0));
        assert!(flow.valid.iter().all(|&v| v));
    }

    #[test]
    fn constant_channels_are_invalid() {
        let c = channels(Plane::filled(32, 32, 0.5));
        let flow = estimate_flow(&c, &c, &FlowParams::default()).unwrap();
        assert!(flow.valid.iter().all(|&v| !v));
        assert!(flow.u.iter().chain(&flow.v).all(|&d| d == 0.0));
    }

    #[test]
    fn recovers_small_translation() {
        let reference = channels(texture(64, 64, 0.0, 0.0));
        // source content sits at p + (2, -1)
        let source = channels(texture(64, 64, 2.0, -1.0));
        let flow = estimate_flow(&source, &reference, &FlowParams::default()).unwrap();
        let (mut err, mut n) = (0.0, 0);
        // borders see content entering from outside the frame
        for i in 0..flow.u.len() {
            let (x, y) = (i % 64, i / 64);
            if flow.valid[i] && (4..60).contains(&x) && (4..60).contains(&y) {
                err += ((flow.u[i] - 2.0).powi(2) + (flow.v[i] + 1.0).powi(2)).sqrt();
                n += 1;
            }
        }
        assert!(n > 2800);
        assert!(err / (n as f64) < 0.1, "mean EPE {}", err / n as f64);
    }

    #[test]
    fn warp_identity_and_unit_shift() {
        let img = NormalizedImage::from_fn(5, 2, 1, Domain::GammaEncoded, |x, _, _| x as f64 / 4.0)
            .unwrap();
        let same = backward_warp(&img, &FlowField::constant(5, 2, 0.0, 0.0)).unwrap();
        assert_eq!(same.image, img);
        let shifted = backward_warp(&img, &FlowField::constant(5, 2, 1.0, 0.0)).unwrap();
        let row: Vec<f64> = (0..5).map(|x| shifted.image.get(x, 0, 0)).collect();
        assert_eq!(row, vec![0.25, 0.5, 0.75, 1.0, 1.0]);
    }

    #[test]
    fn invalid_flow_copies_source_pixel() {
        let img = NormalizedImage::from_fn(3, 1, 1, Domain::Linear, |x, _, _| x as f64 / 2.0).unwrap();
        let mut flow = FlowField::constant(3, 1, 1.0, 0.0);
        flow.valid[0] = false;
        let out = backward_warp(&img, &flow).unwrap();
        assert_eq!(out.image.data(), &[0.0, 1.0, 1.0]);
        assert_eq!(out.valid.data, vec![false, true, true]);
    }

    #[test]
    fn warp_is_linear_in_scale() {
        let img = NormalizedImage::from_fn(6, 6, 3, Domain::Linear, |x, y, c| {
            ((x * 7 + y * 3 + c) % 11) as f64 / 10.0
        })
        .unwrap();
        let mut flow = FlowField::constant(6, 6, 0.3, -0.7);
        flow.valid[4] = false;
        let a = 0.37;
        let lhs = backward_warp(&img.scaled(a).unwrap(), &flow).unwrap();
        let rhs = backward_warp(&img, &flow).unwrap().image.scaled(a).unwrap();
        for (l, r) in lhs.image.data().iter().zip(rhs.data()) {
            assert!((l - r).abs() < 1e-15);
        }
    }

    #[test]
    fn flow_pfm_round_trip() {
        let mut flow = FlowField::constant(3, 2, 1.5, -0.25);
        flow.valid[2] = false;
        let back = FlowField::from_float_map(&flow.to_float_map()).unwrap();
        assert_eq!(back, flow);
    }

    #[test]
    fn median_filter_removes_isolated_outlier() {
        let mut flow = FlowField::constant(7, 7, 0.5, -0.25);
        flow.u[3 * 7 + 3] = 9.0;
        flow.v[0] = -6.0;
        let out = median_filter(&flow, 2);
        assert!(out.u.iter().all(|&u| u == 0.5));
        assert!(out.v.iter().all(|&v| v == -0.25));
        assert_eq!(median_filter(&flow, 0), flow);
    }

    #[test]
    fn event_channel_needs_support_on_both_sides() {
        let flat = Plane::filled(32, 32, 0.0);
        let edges = texture(32, 32, 0.0, 0.0).map(|v| v.abs());
        let mut reference = AlignmentChannels::new(flat.clone(), edges.clone());
        let mut source = AlignmentChannels::new(flat, edges);
        let p = FlowParams::default();
        assert!(estimate_flow(&source, &reference, &p).unwrap().valid.iter().all(|&v| v));
        // a source window that saw no events carries no motion information
        source.event_support = 0.0;
        let flow = estimate_flow(&source, &reference, &p).unwrap();
        assert!(flow.valid.iter().all(|&v| !v));
        reference.event_support = FULL_EVENT_SUPPORT / 2.0;
        source.event_support = FULL_EVENT_SUPPORT;
        assert!(estimate_flow(&source, &reference, &p).unwrap().valid.iter().all(|&v| v));
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(percentile(&v, 0.99), 99.0);
        assert_eq!(percentile(&[0.0, 0.0, 5.0], 0.99), 5.0);
    }
}
