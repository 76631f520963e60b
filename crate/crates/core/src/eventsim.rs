//! Ideal event sensor driven by a high-rate radiance sequence.
//!
//! Every pixel keeps a reference log level. Log luminance is interpolated
//! linearly in time between frames; each time it moves a full contrast
//! threshold `c` away from the reference, an event is emitted at the
//! interpolated crossing time and the reference moves by exactly `±c`.
//!
//! Time slices are half-open on the left: a slice `(t0, t1]` contains the
//! events that separate the sensor state at `t0` from the state at `t1`.

use rayon::prelude::*;

use crate::error::{ensure, Result};
use crate::image::{Plane, RadianceImage};

pub const DEFAULT_CONTRAST_THRESHOLD: f64 = 0.2;
pub const DEFAULT_LOG_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: i8,
}

impl Event {
    fn order_key(&self) -> (u64, u16, u16, i8) {
        (self.t, self.y, self.x, self.polarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub width: usize,
    pub height: usize,
    pub contrast_threshold: f64,
    pub log_floor: f64,
    /// Sorted by `t`, ties by `(y, x, polarity)`.
    pub events: Vec<Event>,
    /// Time range of the frames the stream was simulated from, when known.
    pub span: Option<(u64, u64)>,
}

impl EventStream {
    pub fn new(
        width: usize,
        height: usize,
        contrast_threshold: f64,
        log_floor: f64,
        mut events: Vec<Event>,
    ) -> Result<Self> {
        ensure!(
            contrast_threshold.is_finite() && contrast_threshold > 0.0,
            "contrast threshold must be positive, got {contrast_threshold}"
        );
        ensure!(
            log_floor.is_finite() && log_floor > 0.0,
            "log floor must be positive, got {log_floor}"
        );
        ensure!(
            width <= u16::MAX as usize + 1 && height <= u16::MAX as usize + 1,
            "sensor {width}x{height} exceeds 16-bit coordinates"
        );
        for e in &events {
            ensure!(
                (e.x as usize) < width && (e.y as usize) < height,
                "event at ({}, {}) outside {width}x{height} sensor",
                e.x,
                e.y
            );
            ensure!(e.polarity == 1 || e.polarity == -1, "polarity must be ±1");
        }
        events.sort_unstable_by_key(Event::order_key);
        Ok(Self {
            width,
            height,
            contrast_threshold,
            log_floor,
            events,
            span: None,
        })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events with `t0 < t <= t1`.
    pub fn slice(&self, t0: u64, t1: u64) -> &[Event] {
        let lo = self.events.partition_point(|e| e.t <= t0);
        let hi = self.events.partition_point(|e| e.t <= t1);
        &self.events[lo..hi.max(lo)]
    }

    /// Check a time window against the simulated span, when one is recorded.
    pub fn check_window(&self, t0: u64, t1: u64) -> Result<()> {
        if let Some((s0, s1)) = self.span {
            ensure!(
                t0 >= s0 && t1 <= s1,
                "window [{t0}, {t1}] ns lies outside the event stream span [{s0}, {s1}] ns"
            );
        }
        Ok(())
    }

    /// Per-pixel event lists `(t, polarity)`, time ordered.
    pub fn per_pixel(&self) -> Vec<Vec<(u64, i8)>> {
        let mut out = vec![Vec::new(); self.width * self.height];
        for e in &self.events {
            out[e.y as usize * self.width + e.x as usize].push((e.t, e.polarity));
        }
        out
    }
}

/// Log luminance (mean of channels) with the floor applied.
pub fn log_luminance(frame: &RadianceImage, log_floor: f64) -> Vec<f64> {
    (0..frame.width() * frame.height())
        .map(|i| frame.luminance(i).max(log_floor).ln())
        .collect()
}

/// Crossing time of `level` on the segment `(t0, l0) → (t1, l1)`, rounded to
/// the nearest nanosecond and kept inside `(t0, t1]`.
fn crossing_time(t0: u64, t1: u64, l0: f64, l1: f64, level: f64) -> u64 {
    let f = ((level - l0) / (l1 - l0)).clamp(0.0, 1.0);
    let t = t0 as f64 + f * (t1 - t0) as f64;
    (t.round() as u64).clamp(t0 + 1, t1)
}

/// Events for one pixel from its log-luminance samples.
fn pixel_events(x: u16, y: u16, levels: &[f64], times: &[u64], c: f64, out: &mut Vec<Event>) {
    let base = levels[0];
    let mut n: i64 = 0;
    for k in 0..levels.len() - 1 {
        let (l0, l1) = (levels[k], levels[k + 1]);
        let (t0, t1) = (times[k], times[k + 1]);
        if l1 > l0 {
            loop {
                let level = base + (n + 1) as f64 * c;
                if l1 < level {
                    break;
                }
                n += 1;
                out.push(Event {
                    t: crossing_time(t0, t1, l0, l1, level),
                    x,
                    y,
                    polarity: 1,
                });
            }
        } else if l1 < l0 {
            loop {
                let level = base + (n - 1) as f64 * c;
                if l1 > level {
                    break;
                }
                n -= 1;
                out.push(Event {
                    t: crossing_time(t0, t1, l0, l1, level),
                    x,
                    y,
                    polarity: -1,
                });
            }
        }
    }
}

/// Simulate events from frames with strictly increasing timestamps.
pub fn simulate_events(
    frames: &[RadianceImage],
    timestamps: &[u64],
    contrast_threshold: f64,
    log_floor: f64,
) -> Result<EventStream> {
    ensure!(frames.len() >= 2, "event simulation needs at least two frames");
    ensure!(
        frames.len() == timestamps.len(),
        "{} frames but {} timestamps",
        frames.len(),
        timestamps.len()
    );
    ensure!(
        timestamps.windows(2).all(|w| w[0] < w[1]),
        "frame timestamps must be strictly increasing"
    );
    let (w, h) = (frames[0].width(), frames[0].height());
    ensure!(
        frames.iter().all(|f| f.width() == w && f.height() == h),
        "frames differ in size"
    );
    let mut stream = EventStream::new(w, h, contrast_threshold, log_floor, Vec::new())?;

    let logs: Vec<Vec<f64>> = frames
        .par_iter()
        .map(|f| log_luminance(f, log_floor))
        .collect();
    let mut events: Vec<Event> = (0..w * h)
        .into_par_iter()
        .flat_map_iter(|i| {
            let levels: Vec<f64> = logs.iter().map(|l| l[i]).collect();
            let mut out = Vec::new();
            pixel_events(
                (i % w) as u16,
                (i / w) as u16,
                &levels,
                timestamps,
                contrast_threshold,
                &mut out,
            );
            out
        })
        .collect();
    events.par_sort_unstable_by_key(Event::order_key);
    stream.events = events;
    stream.span = Some((timestamps[0], *timestamps.last().unwrap()));
    Ok(stream)
}

/// Signed polarity sum per pixel over `(t0, t1]`; a reversed interval negates
/// the sum over `(t1, t0]`.
pub fn accumulate_polarity(stream: &EventStream, t0: u64, t1: u64) -> Plane<i32> {
    let mut plane = Plane::filled(stream.width, stream.height, 0i32);
    let (lo, hi, sign) = if t0 <= t1 { (t0, t1, 1) } else { (t1, t0, -1) };
    for e in stream.slice(lo, hi) {
        plane.data[e.y as usize * stream.width + e.x as usize] += sign * e.polarity as i32;
    }
    plane
}

/// Unsigned event count per pixel over `(t0, t1]`.
pub fn accumulate_count(stream: &EventStream, t0: u64, t1: u64) -> Plane<u32> {
    let mut plane = Plane::filled(stream.width, stream.height, 0u32);
    for e in stream.slice(t0.min(t1), t0.max(t1)) {
        plane.data[e.y as usize * stream.width + e.x as usize] += 1;
    }
    plane
}

/// `c · Σ polarity`, the event estimate of `ln I(t1) − ln I(t0)`.
pub fn predict_log_change(stream: &EventStream, t0: u64, t1: u64) -> Plane<f64> {
    let c = stream.contrast_threshold;
    accumulate_polarity(stream, t0, t1).map(|n| c * n as f64)
}

/// CSV debug dump: `t_ns,x,y,p`.
pub fn to_csv(stream: &EventStream) -> String {
    let mut s = String::with_capacity(16 * stream.len() + 16);
    s.push_str("t_ns,x,y,p\n");
    for e in &stream.events {
        s.push_str(&format!("{},{},{},{}\n", e.t, e.x, e.y, e.polarity));
    }
    s
}
