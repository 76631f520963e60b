//! Multi-exposure fusion: a weighted linear radiance merge and Laplacian-pyramid
//! exposure fusion, plus μ-law tone mapping of merged radiance.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::image::{Domain, NormalizedImage, Plane, RadianceImage};
use crate::transfer::{gamma_decode_value, mu_law};

pub const LOW_CLIP: f64 = 0.01;
pub const HIGH_CLIP: f64 = 0.99;

/// Triangle weight on `v`, zero at and beyond the clip limits.
pub fn hat_weight_value(v: f64, low_clip: f64, high_clip: f64) -> f64 {
    if v <= low_clip || v >= high_clip {
        return 0.0;
    }
    (1.0 - (2.0 * v - 1.0).abs()).max(0.0)
}

pub fn hat_weight(code: u8, low_clip: f64, high_clip: f64) -> f64 {
    hat_weight_value(code as f64 / 255.0, low_clip, high_clip)
}

/// A gamma-encoded frame with its exposure in stops.
#[derive(Debug, Clone)]
pub struct ExposedFrame {
    pub image: NormalizedImage,
    pub ev: f64,
}

/// `H = Σ w·lin/2^ev / Σ w` per sample. Where every frame has zero weight
/// the frame whose value is closest to mid-grey supplies `lin/2^ev` alone.
/// The result is in units of the 0 EV linear exposure.
pub fn debevec_merge(frames: &[ExposedFrame], gamma: f64) -> Result<RadianceImage> {
    debevec_merge_masked(frames, &vec![None; frames.len()], gamma)
}

fn check_masks(first: &NormalizedImage, count: usize, masks: &[Option<&Plane<bool>>]) -> Result<()> {
    ensure!(masks.len() == count, "{} masks for {count} frames", masks.len());
    for m in masks.iter().flatten() {
        ensure!(
            m.width == first.width() && m.height == first.height(),
            "mask {}x{} does not match frames {}x{}",
            m.width,
            m.height,
            first.width(),
            first.height()
        );
    }
    Ok(())
}

/// Like [`debevec_merge`], but pixels whose mask is false take part only
/// where no unmasked pixel carries weight. `None` masks nothing.
pub fn debevec_merge_masked(
    frames: &[ExposedFrame],
    masks: &[Option<&Plane<bool>>],
    gamma: f64,
) -> Result<RadianceImage> {
    ensure!(!frames.is_empty(), "merge needs at least one frame");
    let first = &frames[0].image;
    for f in frames {
        f.image.expect_domain(Domain::GammaEncoded)?;
        ensure!(f.image.same_shape(first), "frames differ in shape");
        ensure!(f.ev.is_finite(), "EV must be finite");
    }
    check_masks(first, frames.len(), masks)?;
    let scales: Vec<f64> = frames.iter().map(|f| (-f.ev).exp2()).collect();
    let ch = first.channels();
    let n = first.data().len();
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let (mut num, mut den) = (0.0, 0.0);
        let (mut num_all, mut den_all) = (0.0, 0.0);
        let mut best = (f64::INFINITY, 0.0);
        for ((f, &s), m) in frames.iter().zip(&scales).zip(masks) {
            let v = f.image.data()[i];
            let lin = gamma_decode_value(v, gamma) * s;
            let w = hat_weight_value(v, LOW_CLIP, HIGH_CLIP);
            num_all += w * lin;
            den_all += w;
            if m.is_none_or(|m| m.data[i / ch]) {
                num += w * lin;
                den += w;
            }
            let dist = (v - 0.5).abs();
            if dist < best.0 {
                best = (dist, lin);
            }
        }
        let h = if den > 0.0 {
            num / den
        } else if den_all > 0.0 {
            num_all / den_all
        } else {
            best.1
        };
        data.push(h as f32);
    }
    RadianceImage::new(first.width(), first.height(), first.channels(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MertensParams {
    pub w_contrast: f64,
    pub w_saturation: f64,
    pub w_wellexp: f64,
    pub sigma_wellexp: f64,
}

impl Default for MertensParams {
    fn default() -> Self {
        Self {
            w_contrast: 1.0,
            w_saturation: 1.0,
            w_wellexp: 1.0,
            sigma_wellexp: 0.2,
        }
    }
}

/// Single-channel float plane used by the pyramids.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Layer {
    fn at(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }
}

const KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

fn reduce(l: &Layer) -> Layer {
    let (nw, nh) = (l.width.div_ceil(2), l.height.div_ceil(2));
    let mut data = Vec::with_capacity(nw * nh);
    for y in 0..nh {
        for x in 0..nw {
            let mut s = 0.0;
            for (j, ky) in KERNEL.iter().enumerate() {
                for (i, kx) in KERNEL.iter().enumerate() {
                    s += ky * kx * l.at(2 * x as isize + i as isize - 2, 2 * y as isize + j as isize - 2);
                }
            }
            data.push(s);
        }
    }
    Layer {
        width: nw,
        height: nh,
        data,
    }
}

/// Upsample to `width × height` by zero insertion and 4× binomial interpolation.
fn expand(l: &Layer, width: usize, height: usize) -> Layer {
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let mut s = 0.0;
            for (j, ky) in KERNEL.iter().enumerate() {
                let yy = y as isize + j as isize - 2;
                if yy % 2 != 0 {
                    continue;
                }
                for (i, kx) in KERNEL.iter().enumerate() {
                    let xx = x as isize + i as isize - 2;
                    if xx % 2 != 0 {
                        continue;
                    }
                    s += 4.0 * ky * kx * l.at(xx / 2, yy / 2);
                }
            }
            data.push(s);
        }
    }
    Layer {
        width,
        height,
        data,
    }
}

pub fn gaussian_pyramid(base: &Layer, levels: usize) -> Vec<Layer> {
    let mut pyr = vec![base.clone()];
    for _ in 1..levels {
        let next = reduce(pyr.last().unwrap());
        pyr.push(next);
    }
    pyr
}

pub fn laplacian_pyramid(base: &Layer, levels: usize) -> Vec<Layer> {
    let g = gaussian_pyramid(base, levels);
    let mut lap = Vec::with_capacity(levels);
    for i in 0..levels - 1 {
        let up = expand(&g[i + 1], g[i].width, g[i].height);
        lap.push(Layer {
            width: g[i].width,
            height: g[i].height,
            data: g[i].data.iter().zip(&up.data).map(|(a, b)| a - b).collect(),
        });
    }
    lap.push(g[levels - 1].clone());
    lap
}

pub fn collapse(pyr: &[Layer]) -> Layer {
    let mut cur = pyr.last().unwrap().clone();
    for l in pyr.iter().rev().skip(1) {
        let up = expand(&cur, l.width, l.height);
        cur = Layer {
            width: l.width,
            height: l.height,
            data: l.data.iter().zip(&up.data).map(|(a, b)| a + b).collect(),
        };
    }
    cur
}

/// `floor(log2(min dim)) − 1`, at least 1.
pub fn pyramid_levels(width: usize, height: usize) -> usize {
    let m = width.min(height).max(1);
    let log2 = usize::BITS - 1 - m.leading_zeros();
    (log2 as usize).saturating_sub(1).max(1)
}

fn quality_weights(img: &NormalizedImage, p: &MertensParams) -> Vec<f64> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let gray = img.gray();
    let g = |x: isize, y: isize| -> f64 {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        gray.data[yc * w + xc]
    };
    let two_sigma_sq = 2.0 * p.sigma_wellexp * p.sigma_wellexp;
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let lap = g(x - 1, y) + g(x + 1, y) + g(x, y - 1) + g(x, y + 1) - 4.0 * g(x, y);
            let contrast = lap.abs();
            let i = (y as usize * w + x as usize) * ch;
            let px = &img.data()[i..i + ch];
            // saturation is undefined for a single channel; it then has no say
            let saturation = if ch == 1 {
                1.0
            } else {
                let mean = px.iter().sum::<f64>() / ch as f64;
                (px.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ch as f64).sqrt()
            };
            let wellexp: f64 = px
                .iter()
                .map(|v| (-(v - 0.5).powi(2) / two_sigma_sq).exp())
                .product();
            out.push(
                contrast.powf(p.w_contrast)
                    * saturation.powf(p.w_saturation)
                    * wellexp.powf(p.w_wellexp),
            );
        }
    }
    out
}

/// Exposure fusion of gamma-encoded frames into a gamma-encoded result.
pub fn mertens_fuse(frames: &[NormalizedImage], params: &MertensParams) -> Result<NormalizedImage> {
    mertens_fuse_masked(frames, &vec![None; frames.len()], params)
}

/// Like [`mertens_fuse`], but masked-out pixels get no weight unless every
/// frame is masked out there.
pub fn mertens_fuse_masked(
    frames: &[NormalizedImage],
    masks: &[Option<&Plane<bool>>],
    params: &MertensParams,
) -> Result<NormalizedImage> {
    ensure!(!frames.is_empty(), "fusion needs at least one frame");
    let first = &frames[0];
    for f in frames {
        f.expect_domain(Domain::GammaEncoded)?;
        ensure!(f.same_shape(first), "frames differ in shape");
    }
    check_masks(first, frames.len(), masks)?;
    let (w, h, ch) = (first.width(), first.height(), first.channels());
    let levels = pyramid_levels(w, h);

    let mut raw: Vec<Vec<f64>> = frames.iter().map(|f| quality_weights(f, params)).collect();
    for i in 0..w * h {
        let kept = |k: usize| masks[k].is_none_or(|m| m.data[i]);
        if (0..frames.len()).any(kept) {
            for (k, r) in raw.iter_mut().enumerate() {
                if !kept(k) {
                    r[i] = 0.0;
                }
            }
        }
    }
    let mut weights: Vec<Vec<f64>> = raw
        .iter()
        .map(|r| r.iter().map(|v| v + 1e-12).collect())
        .collect();
    for i in 0..w * h {
        let total: f64 = weights.iter().map(|wk| wk[i]).sum();
        for wk in weights.iter_mut() {
            wk[i] /= total;
        }
    }
    let weight_pyrs: Vec<Vec<Layer>> = weights
        .into_iter()
        .map(|data| {
            gaussian_pyramid(
                &Layer {
                    width: w,
                    height: h,
                    data,
                },
                levels,
            )
        })
        .collect();

    let mut out = vec![0.0; w * h * ch];
    for c in 0..ch {
        let mut blended: Option<Vec<Layer>> = None;
        for (f, wp) in frames.iter().zip(&weight_pyrs) {
            let plane = Layer {
                width: w,
                height: h,
                data: f.data().iter().skip(c).step_by(ch).copied().collect(),
            };
            let lap = laplacian_pyramid(&plane, levels);
            let acc = blended.get_or_insert_with(|| {
                lap.iter()
                    .map(|l| Layer {
                        width: l.width,
                        height: l.height,
                        data: vec![0.0; l.data.len()],
                    })
                    .collect()
            });
            for ((a, l), wl) in acc.iter_mut().zip(&lap).zip(wp) {
                for ((dst, &v), &wt) in a.data.iter_mut().zip(&l.data).zip(&wl.data) {
                    *dst += wt * v;
                }
            }
        }
        let result = collapse(&blended.expect("at least one frame"));
        for (i, v) in result.data.into_iter().enumerate() {
            out[i * ch + c] = v.clamp(0.0, 1.0);
        }
    }
    Ok(NormalizedImage::from_raw(w, h, ch, Domain::GammaEncoded, out))
}

/// μ-law tone map after dividing by `peak` (default: the image maximum).
/// Returns the tone-mapped image and the peak used.
pub fn tonemap_output(h: &RadianceImage, peak: Option<f64>, mu: f64) -> Result<(NormalizedImage, f64)> {
    let peak = peak.unwrap_or_else(|| h.peak() as f64);
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::Numeric(format!(
            "tone mapping needs a positive finite peak, got {peak}"
        )));
    }
    let normalized = RadianceImage::new(
        h.width(),
        h.height(),
        h.channels(),
        h.data()
            .iter()
            .map(|&v| ((v as f64) / peak).min(1.0) as f32)
            .collect(),
    )?;
    Ok((mu_law(&normalized, mu)?, peak))
}
