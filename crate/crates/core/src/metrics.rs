//! Image quality metrics and flow error.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::align::FlowField;
use crate::error::{ensure, Result};
use crate::image::{NormalizedImage, RadianceImage};
use crate::transfer::mu_law;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
pub const CHARBONNIER_EPS: f64 = 1e-3;

fn check_pair(a: &NormalizedImage, b: &NormalizedImage) -> Result<()> {
    ensure!(
        a.same_shape(b),
        "images differ in shape: {}x{}x{} vs {}x{}x{}",
        a.width(),
        a.height(),
        a.channels(),
        b.width(),
        b.height(),
        b.channels()
    );
    if a.domain() != b.domain() {
        return Err(crate::Error::DomainMismatch {
            expected: a.domain(),
            found: b.domain(),
        });
    }
    Ok(())
}

pub fn mse(a: &NormalizedImage, b: &NormalizedImage) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n)
}

/// PSNR with unit peak; identical images give `+∞`.
pub fn psnr(a: &NormalizedImage, b: &NormalizedImage) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * m.log10()
    })
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "valid" filtering: output is `(w−10) × (h−10)`.
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * data[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|j| k[j] * rows[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over valid windows, averaged across channels.
pub fn ssim(a: &NormalizedImage, b: &NormalizedImage) -> Result<f64> {
    check_pair(a, b)?;
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    ensure!(
        w >= SSIM_WINDOW && h >= SSIM_WINDOW,
        "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
    );
    let k = gaussian_kernel();
    let mut total = 0.0;
    for c in 0..ch {
        let x: Vec<f64> = a.data().iter().skip(c).step_by(ch).copied().collect();
        let y: Vec<f64> = b.data().iter().skip(c).step_by(ch).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, w, h, &k);
        let my = filter_valid(&y, w, h, &k);
        let sxx = filter_valid(&xx, w, h, &k);
        let syy = filter_valid(&yy, w, h, &k);
        let sxy = filter_valid(&xy, w, h, &k);
        let mut s = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            s += ((2.0 * ux * uy + C1) * (2.0 * cxy + C2))
                / ((ux * ux + uy * uy + C1) * (vx + vy + C2));
        }
        total += s / mx.len() as f64;
    }
    Ok(total / ch as f64)
}

/// Both maps divided by the peak of the reference `b`, clipped at 1, then μ-law mapped.
fn tonemapped_pair(
    a: &RadianceImage,
    b: &RadianceImage,
    mu: f64,
) -> Result<(NormalizedImage, NormalizedImage)> {
    ensure!(a.same_shape(b), "HDR images differ in shape");
    let peak = b.peak() as f64;
    ensure!(peak > 0.0, "reference HDR image is entirely black");
    let norm = |img: &RadianceImage| {
        RadianceImage::new(
            img.width(),
            img.height(),
            img.channels(),
            img.data().iter().map(|&v| ((v as f64 / peak).min(1.0)) as f32).collect(),
        )
    };
    Ok((mu_law(&norm(a)?, mu)?, mu_law(&norm(b)?, mu)?))
}

/// PSNR after normalizing both images by the peak of the reference `b` and μ-law mapping.
pub fn mu_psnr(a: &RadianceImage, b: &RadianceImage, mu: f64) -> Result<f64> {
    let (ta, tb) = tonemapped_pair(a, b, mu)?;
    psnr(&ta, &tb)
}

pub fn mu_ssim(a: &RadianceImage, b: &RadianceImage, mu: f64) -> Result<f64> {
    let (ta, tb) = tonemapped_pair(a, b, mu)?;
    ssim(&ta, &tb)
}

/// Mean `sqrt(d² + ε²)` over all samples.
pub fn charbonnier(a: &NormalizedImage, b: &NormalizedImage, eps: f64) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.data().len() as f64;
    Ok(a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| ((x - y).powi(2) + eps * eps).sqrt())
        .sum::<f64>()
        / n)
}

/// Mean end-point error over pixels where `mask` (if given) is true.
pub fn flow_epe(estimated: &FlowField, truth: &FlowField, mask: Option<&[bool]>) -> Result<f64> {
    ensure!(
        estimated.width == truth.width && estimated.height == truth.height,
        "flow fields differ in size"
    );
    let n = estimated.u.len();
    if let Some(m) = mask {
        ensure!(m.len() == n, "mask size does not match flow");
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        sum += ((estimated.u[i] - truth.u[i]).powi(2) + (estimated.v[i] - truth.v[i]).powi(2)).sqrt();
        count += 1;
    }
    ensure!(count > 0, "no pixels selected for EPE");
    Ok(sum / count as f64)
}

/// Named metric values; infinities serialize as the string `"inf"`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub values: BTreeMap<String, f64>,
}

impl Report {
    pub fn insert(&mut self, key: &str, value: f64) {
        self.values.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn to_text(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k}: {}\n", fmt_value(*v)))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, JsonValue> = self
            .values
            .iter()
            .map(|(k, &v)| (k.as_str(), JsonValue::from(v)))
            .collect();
        serde_json::to_string_pretty(&map).expect("metric map serializes")
    }
}

fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.6}")
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum JsonValue {
    Number(f64),
    Text(String),
}

impl From<f64> for JsonValue {
    fn from(v: f64) -> Self {
        if v.is_finite() {
            JsonValue::Number(v)
        } else {
            JsonValue::Text(fmt_value(v))
        }
    }
}

/// Standard comparison of two LDR images in the same domain.
pub fn compare_ldr(a: &NormalizedImage, b: &NormalizedImage) -> Result<Report> {
    let mut r = Report::default();
    r.insert("psnr", psnr(a, b)?);
    if a.width() >= SSIM_WINDOW && a.height() >= SSIM_WINDOW {
        r.insert("ssim", ssim(a, b)?);
    }
    r.insert("charbonnier", charbonnier(a, b, CHARBONNIER_EPS)?);
    Ok(r)
}

/// Standard comparison of a radiance map against the reference `b`.
pub fn compare_hdr(a: &RadianceImage, b: &RadianceImage, mu: f64) -> Result<Report> {
    let mut r = Report::default();
    r.insert("mu", mu);
    r.insert("peak", b.peak() as f64);
    r.insert("mu_psnr", mu_psnr(a, b, mu)?);
    if a.width() >= SSIM_WINDOW && a.height() >= SSIM_WINDOW {
        r.insert("mu_ssim", mu_ssim(a, b, mu)?);
    }
    let (ta, tb) = tonemapped_pair(a, b, mu)?;
    r.insert("charbonnier", charbonnier(&ta, &tb, CHARBONNIER_EPS)?);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Domain;

    fn img(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> NormalizedImage {
        NormalizedImage::from_fn(w, h, 1, Domain::GammaEncoded, |x, y, _| f(x, y)).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = img(4, 4, |_, _| 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = img(4, 4, |_, _| 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c = NormalizedImage::new(4, 4, 1, Domain::Linear, vec![0.5; 16]).unwrap();
        assert!(matches!(psnr(&a, &c), Err(crate::Error::DomainMismatch { .. })));
    }

    // Direct double loop over every 11×11 window, no separability.
    fn ssim_oracle(a: &NormalizedImage, b: &NormalizedImage) -> f64 {
        let r = 5usize;
        let mut g = [[0.0f64; 11]; 11];
        let mut s = 0.0;
        for (j, row) in g.iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                let d2 = (i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2);
                *v = (-d2 / 4.5).exp();
                s += *v;
            }
        }
        let (w, h) = (a.width(), a.height());
        let mut total = 0.0;
        let mut n = 0.0;
        for cy in r..h - r {
            for cx in r..w - r {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let wgt = g[j][i] / s;
                        let p = a.get(cx + i - r, cy + j - r, 0);
                        let q = b.get(cx + i - r, cy + j - r, 0);
                        mx += wgt * p;
                        my += wgt * q;
                        xx += wgt * p * p;
                        yy += wgt * q * q;
                        xy += wgt * p * q;
                    }
                }
                let vx = xx - mx * mx;
                let vy = yy - my * my;
                let c = xy - mx * my;
                total += ((2.0 * mx * my + C1) * (2.0 * c + C2))
                    / ((mx * mx + my * my + C1) * (vx + vy + C2));
                n += 1.0;
            }
        }
        total / n
    }

    #[test]
    fn ssim_matches_brute_force() {
        let a = img(16, 16, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0);
        let b = img(16, 16, |x, y| ((x * 5 + y * 9 + 2) % 13) as f64 / 12.0);
        let got = ssim(&a, &b).unwrap();
        let want = ssim_oracle(&a, &b);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&img(10, 16, |_, _| 0.0), &img(10, 16, |_, _| 0.0)).is_err());
    }

    #[test]
    fn charbonnier_floor() {
        let a = img(3, 3, |_, _| 0.2);
        assert!((charbonnier(&a, &a, 1e-3).unwrap() - 1e-3).abs() < 1e-15);
        let b = img(3, 3, |_, _| 0.5);
        let want = (0.09f64 + 1e-6).sqrt();
        assert!((charbonnier(&a, &b, 1e-3).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn mu_metrics_normalize_by_reference_peak() {
        let truth = RadianceImage::new(4, 1, 1, vec![0.5, 1.0, 2.0, 4.0]).unwrap();
        // a hot pixel far above the reference peak clips instead of rescaling the rest
        let est = RadianceImage::new(4, 1, 1, vec![0.5, 1.0, 2.0, 40.0]).unwrap();
        let tm = |v: f64| (1.0 + 5000.0 * (v / 4.0).min(1.0)).ln() / 5001f64.ln();
        assert_eq!(mu_psnr(&est, &truth, 5000.0).unwrap(), f64::INFINITY);
        let est = RadianceImage::new(4, 1, 1, vec![0.25, 1.0, 2.0, 4.0]).unwrap();
        let mse = (tm(0.25) - tm(0.5)).powi(2) / 4.0;
        let want = 10.0 * (1.0 / mse).log10();
        assert!((mu_psnr(&est, &truth, 5000.0).unwrap() - want).abs() < 1e-9);
        let r = compare_hdr(&est, &truth, 5000.0).unwrap();
        assert_eq!((r.get("mu"), r.get("peak")), (Some(5000.0), Some(4.0)));
    }

    #[test]
    fn mu_psnr_scale_invariant() {
        let a = RadianceImage::from_fn(16, 16, 1, |x, y, _| (x + y) as f32 * 0.1 + 0.01).unwrap();
        let b = RadianceImage::from_fn(16, 16, 1, |x, y, _| (x + y) as f32 * 0.1 + 0.02).unwrap();
        let a2 = RadianceImage::new(16, 16, 1, a.data().iter().map(|v| v * 8.0).collect()).unwrap();
        let b2 = RadianceImage::new(16, 16, 1, b.data().iter().map(|v| v * 8.0).collect()).unwrap();
        let p1 = mu_psnr(&a, &b, 5000.0).unwrap();
        let p2 = mu_psnr(&a2, &b2, 5000.0).unwrap();
        assert!((p1 - p2).abs() < 1e-4);
        assert_eq!(mu_psnr(&a, &a, 5000.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn epe_with_mask() {
        let mut a = FlowField::constant(2, 1, 0.0, 0.0);
        let b = FlowField::constant(2, 1, 3.0, 4.0);
        assert_eq!(flow_epe(&a, &b, None).unwrap(), 5.0);
        a.u[1] = 3.0;
        a.v[1] = 4.0;
        assert_eq!(flow_epe(&a, &b, Some(&[false, true])).unwrap(), 0.0);
        assert!(flow_epe(&a, &b, Some(&[false, false])).is_err());
    }

    #[test]
    fn report_serializes_infinity_as_string() {
        let mut r = Report::default();
        r.insert("psnr", f64::INFINITY);
        r.insert("ssim", 0.5);
        assert_eq!(r.to_text(), "psnr: inf\nssim: 0.500000\n");
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["psnr"], "inf");
        assert_eq!(v["ssim"], 0.5);
    }
}
