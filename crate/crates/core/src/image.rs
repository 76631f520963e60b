//! Image containers shared by every stage.
//!
//! Three kinds of pixel data flow through the toolkit:
//!
//! * [`RadianceImage`]: linear scene radiance, non-negative and unbounded above.
//! * [`NormalizedImage`]: samples in `[0, 1]` tagged with the transfer domain
//!   they live in, so a gamma-encoded buffer can never be fed to an operation
//!   expecting linear light.
//! * [`LdrFrame`]: 8-bit gamma-encoded code values plus capture metadata.
//!
//! All buffers are interleaved row-major (`(y * width + x) * channels + c`).

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    Linear,
    GammaEncoded,
    MuLaw,
}

fn check_shape(width: usize, height: usize, channels: usize, len: usize) -> Result<()> {
    ensure!(width >= 1 && height >= 1, "image must be at least 1x1, got {width}x{height}");
    ensure!(
        channels == 1 || channels == 3,
        "images carry 1 or 3 channels, got {channels}"
    );
    ensure!(
        len == width * height * channels,
        "sample count {len} does not match {width}x{height}x{channels}"
    );
    Ok(())
}

/// Linear-light scene radiance.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl RadianceImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_shape(width, height, channels, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(format!(
                "radiance sample {i} is {} (must be finite and non-negative)",
                data[i]
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Mean over channels at pixel index `i`.
    pub fn luminance(&self, i: usize) -> f64 {
        let px = &self.data[i * self.channels..(i + 1) * self.channels];
        px.iter().map(|&v| v as f64).sum::<f64>() / self.channels as f64
    }

    pub fn peak(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    pub fn same_shape(&self, other: &RadianceImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

/// Samples in `[0, 1]`, tagged with their transfer domain.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImage {
    width: usize,
    height: usize,
    channels: usize,
    domain: Domain,
    data: Vec<f64>,
}

impl NormalizedImage {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        domain: Domain,
        data: Vec<f64>,
    ) -> Result<Self> {
        check_shape(width, height, channels, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("sample {i} is not finite")));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation(format!(
                "sample {i} = {} lies outside [0, 1]",
                data[i]
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            domain,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        domain: Domain,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, domain, data)
    }

    /// Build without range checks; callers guarantee samples are in `[0, 1]`.
    pub(crate) fn from_raw(
        width: usize,
        height: usize,
        channels: usize,
        domain: Domain,
        data: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Self {
            width,
            height,
            channels,
            domain,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn expect_domain(&self, expected: Domain) -> Result<()> {
        if self.domain != expected {
            return Err(Error::DomainMismatch {
                expected,
                found: self.domain,
            });
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &NormalizedImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Per-pixel mean over channels.
    pub fn gray(&self) -> Plane<f64> {
        let n = self.channels as f64;
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / n)
            .collect();
        Plane::new(self.width, self.height, data)
    }

    /// Bilinear sample of every channel at a real-valued position, edge-clamped.
    pub fn sample(&self, x: f64, y: f64, out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            *o = bilinear(&self.data, self.width, self.height, self.channels, c, x, y);
        }
    }

    /// Multiply every sample by `a` in `[0, 1]`; the result stays in range.
    pub fn scaled(&self, a: f64) -> Result<NormalizedImage> {
        ensure!((0.0..=1.0).contains(&a), "scale {a} outside [0, 1]");
        Ok(Self::from_raw(
            self.width,
            self.height,
            self.channels,
            self.domain,
            self.data.iter().map(|v| v * a).collect(),
        ))
    }
}

/// Bilinear interpolation with edge clamping; returns one value per channel.
pub fn bilinear_sample(img: &NormalizedImage, x: f64, y: f64) -> Vec<f64> {
    let mut out = vec![0.0; img.channels()];
    img.sample(x, y, &mut out);
    out
}

/// Edge-clamped bilinear interpolation on an interleaved buffer.
pub fn bilinear<T: Copy + Into<f64>>(
    data: &[T],
    width: usize,
    height: usize,
    channels: usize,
    channel: usize,
    x: f64,
    y: f64,
) -> f64 {
    let xc = x.clamp(0.0, (width - 1) as f64);
    let yc = y.clamp(0.0, (height - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let at = |xx: usize, yy: usize| -> f64 { data[(yy * width + xx) * channels + channel].into() };
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// A single-channel grid of arbitrary values (event counts, log maps, masks).
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Plane<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "plane size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Plane<U> {
        Plane::new(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }
}

impl<T: Copy + Into<f64>> Plane<T> {
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        bilinear(&self.data, self.width, self.height, 1, 0, x, y)
    }
}

/// An 8-bit gamma-encoded capture plus its exposure metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct LdrFrame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
    /// Exposure value in stops relative to the bracket's base exposure.
    pub ev: f64,
    /// Seconds.
    pub exposure_time: f64,
    /// Capture start, nanoseconds.
    pub timestamp: u64,
}

impl LdrFrame {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<u8>,
        ev: f64,
        exposure_time: f64,
        timestamp: u64,
    ) -> Result<Self> {
        check_shape(width, height, channels, data.len())?;
        ensure!(ev.is_finite(), "ev must be finite");
        ensure!(
            exposure_time.is_finite() && exposure_time > 0.0,
            "exposure time must be positive, got {exposure_time}"
        );
        Ok(Self {
            width,
            height,
            channels,
            data,
            ev,
            exposure_time,
            timestamp,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Exposure time in nanoseconds.
    pub fn exposure_ns(&self) -> f64 {
        self.exposure_time * 1e9
    }

    /// Code values divided by 255, tagged gamma-encoded.
    pub fn to_normalized(&self) -> NormalizedImage {
        NormalizedImage::from_raw(
            self.width,
            self.height,
            self.channels,
            Domain::GammaEncoded,
            self.data.iter().map(|&c| c as f64 / 255.0).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> NormalizedImage {
        NormalizedImage::from_fn(4, 3, 1, Domain::Linear, |x, y, _| (x + 4 * y) as f64 / 11.0)
            .unwrap()
    }

    #[test]
    fn integer_coordinates_are_exact() {
        let img = ramp();
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(bilinear_sample(&img, x as f64, y as f64)[0], img.get(x, y, 0));
            }
        }
    }

    #[test]
    fn midpoint_interpolates() {
        let img = NormalizedImage::new(2, 1, 1, Domain::Linear, vec![0.0, 1.0]).unwrap();
        assert_eq!(bilinear_sample(&img, 0.5, 0.0)[0], 0.5);
    }

    #[test]
    fn out_of_bounds_clamps_to_edge() {
        let img = ramp();
        assert_eq!(bilinear_sample(&img, -5.0, -5.0)[0], img.get(0, 0, 0));
        assert_eq!(bilinear_sample(&img, 50.0, 50.0)[0], img.get(3, 2, 0));
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(RadianceImage::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(RadianceImage::new(0, 2, 1, vec![]).is_err());
        assert!(RadianceImage::new(1, 1, 1, vec![-1.0]).is_err());
        assert!(RadianceImage::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(NormalizedImage::new(1, 1, 1, Domain::Linear, vec![1.5]).is_err());
        assert!(LdrFrame::new(1, 1, 1, vec![0], 0.0, 0.0, 0).is_err());
    }
}
