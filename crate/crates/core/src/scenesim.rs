//! Dynamic HDR sequences from still HDR layers.
//!
//! Each layer (background and optional foreground) follows its own smoothed
//! random velocity `s_{t+1} = α s_t + (1 − α) u`, with `u` uniform on the
//! square `[−bound, bound]²`. A layer's displacement at frame `k` is the sum
//! of its velocities up to `k`; frames are rendered by translating the layers
//! and compositing the foreground over the background with its alpha matte.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::{bilinear, Plane, RadianceImage};
use crate::rng;

pub type Vec2 = [f64; 2];

/// Per-frame velocity of one layer, pixels per frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MotionState {
    pub shift: Vec2,
}

impl MotionState {
    pub fn step_with_draw(self, alpha_smooth: f64, draw: Vec2) -> MotionState {
        MotionState {
            shift: [
                alpha_smooth * self.shift[0] + (1.0 - alpha_smooth) * draw[0],
                alpha_smooth * self.shift[1] + (1.0 - alpha_smooth) * draw[1],
            ],
        }
    }

    pub fn step<R: Rng>(self, alpha_smooth: f64, motion_bound: f64, rng: &mut R) -> MotionState {
        let mut draw = || {
            if motion_bound > 0.0 {
                rng.gen_range(-motion_bound..=motion_bound)
            } else {
                0.0
            }
        };
        let u = [draw(), draw()];
        self.step_with_draw(alpha_smooth, u)
    }
}

#[derive(Debug, Clone)]
pub struct Foreground {
    pub image: RadianceImage,
    /// Coverage in `[0, 1]`, same size as `image`.
    pub matte: Plane<f32>,
}

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub background: RadianceImage,
    pub foreground: Option<Foreground>,
    pub alpha_smooth: f64,
    /// Support of the uniform velocity draw, pixels per frame.
    pub motion_bound: f64,
    pub frame_count: usize,
    pub frame_interval_ns: u64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..=1.0).contains(&self.alpha_smooth),
            "alpha_smooth must be in [0, 1], got {}",
            self.alpha_smooth
        );
        ensure!(
            self.motion_bound.is_finite() && self.motion_bound >= 0.0,
            "motion_bound must be non-negative, got {}",
            self.motion_bound
        );
        ensure!(self.frame_count >= 2, "frame_count must be at least 2");
        ensure!(self.frame_interval_ns > 0, "frame_interval_ns must be positive");
        if let Some(fg) = &self.foreground {
            ensure!(
                fg.matte.width == fg.image.width() && fg.matte.height == fg.image.height(),
                "alpha matte is {}x{} but foreground is {}x{}",
                fg.matte.width,
                fg.matte.height,
                fg.image.width(),
                fg.image.height()
            );
            ensure!(
                fg.matte.data.iter().all(|a| (0.0..=1.0).contains(a)),
                "alpha matte values must lie in [0, 1]"
            );
            ensure!(
                fg.image.channels() == self.background.channels(),
                "foreground and background channel counts differ"
            );
        }
        let (w, h) = self.crop_size();
        ensure!(
            w >= 1 && h >= 1,
            "background {}x{} is too small for a margin of {} px per side",
            self.background.width(),
            self.background.height(),
            self.margin()
        );
        Ok(())
    }

    /// Crop inset per side; covers the largest possible displacement.
    pub fn margin(&self) -> usize {
        (self.motion_bound * self.frame_count as f64).ceil() as usize
    }

    pub fn crop_size(&self) -> (isize, isize) {
        let m = 2 * self.margin() as isize;
        (
            self.background.width() as isize - m,
            self.background.height() as isize - m,
        )
    }
}

/// Velocities and accumulated displacements of one layer, one entry per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub shifts: Vec<Vec2>,
    pub positions: Vec<Vec2>,
}

impl Trajectory {
    pub fn from_shifts(shifts: Vec<Vec2>) -> Self {
        let mut positions = Vec::with_capacity(shifts.len());
        let mut p = [0.0, 0.0];
        for (k, s) in shifts.iter().enumerate() {
            if k > 0 {
                p = [p[0] + s[0], p[1] + s[1]];
            }
            positions.push(p);
        }
        Self { shifts, positions }
    }

    pub fn static_layer(frames: usize) -> Self {
        Self::from_shifts(vec![[0.0, 0.0]; frames])
    }
}

/// Layer index 0 is the background, 1 the foreground.
pub fn generate_trajectory(spec: &SceneSpec, layer: u64) -> Trajectory {
    let mut rng = rng::stream(spec.seed, 0x5CE0_0000 + layer);
    let mut state = MotionState::default();
    let mut shifts = Vec::with_capacity(spec.frame_count);
    shifts.push(state.shift);
    for _ in 1..spec.frame_count {
        state = state.step(spec.alpha_smooth, spec.motion_bound, &mut rng);
        shifts.push(state.shift);
    }
    Trajectory::from_shifts(shifts)
}

#[derive(Debug, Clone)]
pub struct RenderedSequence {
    pub frames: Vec<RadianceImage>,
    pub timestamps: Vec<u64>,
    pub background: Trajectory,
    pub foreground: Option<Trajectory>,
}

pub fn render_sequence(spec: &SceneSpec) -> Result<RenderedSequence> {
    spec.validate()?;
    let bg = generate_trajectory(spec, 0);
    let fg = spec.foreground.as_ref().map(|_| generate_trajectory(spec, 1));
    render_with_trajectories(spec, bg, fg)
}

/// Render with externally supplied trajectories (e.g. a forced constant motion).
pub fn render_with_trajectories(
    spec: &SceneSpec,
    background: Trajectory,
    foreground: Option<Trajectory>,
) -> Result<RenderedSequence> {
    spec.validate()?;
    ensure!(
        background.positions.len() == spec.frame_count,
        "background trajectory has {} entries, expected {}",
        background.positions.len(),
        spec.frame_count
    );
    if let Some(fg) = &foreground {
        ensure!(
            fg.positions.len() == spec.frame_count,
            "foreground trajectory has {} entries, expected {}",
            fg.positions.len(),
            spec.frame_count
        );
    }
    let frames = (0..spec.frame_count)
        .into_par_iter()
        .map(|k| {
            render_frame(
                spec,
                background.positions[k],
                foreground.as_ref().map(|t| t.positions[k]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let timestamps = (0..spec.frame_count as u64)
        .map(|k| k * spec.frame_interval_ns)
        .collect();
    Ok(RenderedSequence {
        frames,
        timestamps,
        background,
        foreground,
    })
}

/// Bilinear sample treating everything outside the grid as zero.
fn bilinear_zero(data: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let at = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= width as f64 || yi >= height as f64 {
            0.0
        } else {
            data[yi as usize * width + xi as usize]
        }
    };
    (at(x0, y0) * (1.0 - fx) + at(x0 + 1.0, y0) * fx) * (1.0 - fy)
        + (at(x0, y0 + 1.0) * (1.0 - fx) + at(x0 + 1.0, y0 + 1.0) * fx) * fy
}

fn render_frame(spec: &SceneSpec, bg_pos: Vec2, fg_pos: Option<Vec2>) -> Result<RadianceImage> {
    let bg = &spec.background;
    let ch = bg.channels();
    let (cw, chh) = spec.crop_size();
    let (cw, chh) = (cw as usize, chh as usize);
    let m = spec.margin() as f64;

    // Premultiplied foreground planes, one per channel, plus the matte.
    let fg_planes = spec.foreground.as_ref().map(|fg| {
        let n = fg.image.width() * fg.image.height();
        let matte: Vec<f64> = fg.matte.data.iter().map(|&a| a as f64).collect();
        let colours: Vec<Vec<f64>> = (0..ch)
            .map(|c| (0..n).map(|i| fg.image.data()[i * ch + c] as f64 * matte[i]).collect())
            .collect();
        let origin = [
            (cw as f64 - fg.image.width() as f64) / 2.0,
            (chh as f64 - fg.image.height() as f64) / 2.0,
        ];
        (fg.image.width(), fg.image.height(), matte, colours, origin)
    });

    let mut data = Vec::with_capacity(cw * chh * ch);
    for y in 0..chh {
        for x in 0..cw {
            let bx = x as f64 + m - bg_pos[0];
            let by = y as f64 + m - bg_pos[1];
            let (coverage, fg_sample) = match (&fg_planes, fg_pos) {
                (Some((fw, fh, matte, colours, origin)), Some(p)) => {
                    let fx = x as f64 - origin[0] - p[0];
                    let fy = y as f64 - origin[1] - p[1];
                    let a = bilinear_zero(matte, *fw, *fh, fx, fy).clamp(0.0, 1.0);
                    (a, Some((colours, *fw, *fh, fx, fy)))
                }
                _ => (0.0, None),
            };
            for c in 0..ch {
                let b = bilinear(bg.data(), bg.width(), bg.height(), ch, c, bx, by);
                let f = fg_sample
                    .as_ref()
                    .map(|(colours, fw, fh, fx, fy)| bilinear_zero(&colours[c], *fw, *fh, *fx, *fy))
                    .unwrap_or(0.0);
                data.push((f + (1.0 - coverage) * b).max(0.0) as f32);
            }
        }
    }
    RadianceImage::new(cw, chh, ch, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn textured(w: usize, h: usize) -> RadianceImage {
        RadianceImage::from_fn(w, h, 1, |x, y, _| {
            (1.0 + 0.5 * ((x as f32) * 0.7).sin() * ((y as f32) * 0.3).cos()) * 0.5
        })
        .unwrap()
    }

    fn spec(bg: RadianceImage, alpha: f64, bound: f64, frames: usize) -> SceneSpec {
        SceneSpec {
            background: bg,
            foreground: None,
            alpha_smooth: alpha,
            motion_bound: bound,
            frame_count: frames,
            frame_interval_ns: 1000,
            seed: 7,
        }
    }

    #[test]
    fn step_motion_examples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let s = MotionState { shift: [1.5, -2.0] };
        assert_eq!(s.step(1.0, 5.0, &mut rng), s);
        assert_eq!(s.step(0.0, 0.0, &mut rng).shift, [0.0, 0.0]);
        let forced = MotionState { shift: [2.0, 0.0] }.step_with_draw(0.5, [4.0, 2.0]);
        assert_eq!(forced.shift, [3.0, 1.0]);
    }

    #[test]
    fn draws_stay_within_bound() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut s = MotionState::default();
        for _ in 0..1000 {
            s = s.step(0.3, 0.25, &mut rng);
            assert!(s.shift[0].abs() <= 0.25 && s.shift[1].abs() <= 0.25);
        }
    }

    #[test]
    fn static_scene_when_bound_is_zero() {
        let seq = render_sequence(&spec(textured(16, 12), 0.4, 0.0, 5)).unwrap();
        for f in &seq.frames[1..] {
            assert_eq!(f, &seq.frames[0]);
        }
        assert_eq!(seq.timestamps, vec![0, 1000, 2000, 3000, 4000]);
    }

    #[test]
    fn full_smoothing_is_static() {
        let seq = render_sequence(&spec(textured(40, 40), 1.0, 1.0, 6)).unwrap();
        for f in &seq.frames[1..] {
            assert_eq!(f, &seq.frames[0]);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let s = spec(textured(60, 60), 0.5, 0.5, 8);
        let a = render_sequence(&s).unwrap();
        let b = render_sequence(&s).unwrap();
        assert_eq!(a.frames, b.frames);
        let mut s2 = s.clone();
        s2.seed = 8;
        assert_ne!(render_sequence(&s2).unwrap().background, a.background);
    }

    #[test]
    fn forced_shift_moves_edge_one_column_per_frame() {
        let bg = RadianceImage::from_fn(40, 20, 1, |x, _, _| if x < 20 { 0.1 } else { 1.0 }).unwrap();
        let s = spec(bg, 0.0, 1.0, 6);
        let traj = Trajectory::from_shifts(
            std::iter::once([0.0, 0.0]).chain(std::iter::repeat([1.0, 0.0]).take(5)).collect(),
        );
        let seq = render_with_trajectories(&s, traj, None).unwrap();
        let edge = |f: &RadianceImage| {
            (1..f.width())
                .max_by(|&a, &b| {
                    let ga = f.get(a, 4, 0) - f.get(a - 1, 4, 0);
                    let gb = f.get(b, 4, 0) - f.get(b - 1, 4, 0);
                    ga.partial_cmp(&gb).unwrap()
                })
                .unwrap()
        };
        let first = edge(&seq.frames[0]);
        for (k, f) in seq.frames.iter().enumerate() {
            assert_eq!(edge(f), first + k);
        }
    }

    #[test]
    fn zero_matte_shows_background_only() {
        let bg = textured(30, 30);
        let mut s = spec(bg.clone(), 0.2, 0.5, 4);
        s.foreground = Some(Foreground {
            image: RadianceImage::from_fn(8, 8, 1, |_, _, _| 50.0).unwrap(),
            matte: Plane::filled(8, 8, 0.0),
        });
        let with = render_sequence(&s).unwrap();
        s.foreground = None;
        let without = render_sequence(&s).unwrap();
        assert_eq!(with.frames, without.frames);
    }

    #[test]
    fn composite_is_bounded_and_nonnegative() {
        let bg = textured(50, 50);
        let mut s = spec(bg.clone(), 0.3, 0.4, 10);
        s.foreground = Some(Foreground {
            image: RadianceImage::from_fn(10, 10, 1, |x, _, _| 2.0 + x as f32 * 0.1).unwrap(),
            matte: Plane::new(10, 10, (0..100).map(|i| ((i % 7) as f32) / 6.0).collect()),
        });
        let seq = render_sequence(&s).unwrap();
        let limit = bg.peak().max(2.9) + 1e-5;
        for f in &seq.frames {
            assert!(f.data().iter().all(|&v| v >= 0.0 && v <= limit));
        }
    }

    #[test]
    fn rejects_too_small_background() {
        let s = spec(textured(10, 10), 0.5, 1.0, 10);
        assert!(render_sequence(&s).is_err());
    }
}
