//! Portable float map (`PF` colour / `Pf` grayscale), 32-bit samples, rows stored bottom-to-top.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Domain, NormalizedImage, RadianceImage};

/// Raw PFM payload in top-to-bottom row order.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

const FORMAT: &str = "PFM";

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let rest = &self.bytes[start..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(FORMAT, start as u64, "unterminated header line"))?;
        self.pos += end + 1;
        let text = std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::format(FORMAT, start as u64, "header is not ASCII"))?;
        Ok((start, text.trim_end_matches('\r')))
    }
}

pub fn decode(bytes: &[u8]) -> Result<FloatMap> {
    let mut cur = Cursor { bytes, pos: 0 };
    let (off, magic) = cur.line()?;
    let channels = match magic.trim() {
        "PF" => 3,
        "Pf" => 1,
        other => {
            return Err(Error::format(
                FORMAT,
                off as u64,
                format!("expected magic `PF` or `Pf`, found {other:?}"),
            ))
        }
    };
    let (off, dims) = cur.line()?;
    let parts: Vec<&str> = dims.split_whitespace().collect();
    let parse_dim = |s: &str| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::format(FORMAT, off as u64, format!("bad dimension {s:?}")))
    };
    if parts.len() != 2 {
        return Err(Error::format(
            FORMAT,
            off as u64,
            format!("expected `<width> <height>`, found {dims:?}"),
        ));
    }
    let width = parse_dim(parts[0])?;
    let height = parse_dim(parts[1])?;
    let (off, scale_line) = cur.line()?;
    let scale: f64 = scale_line
        .trim()
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite() && *s != 0.0)
        .ok_or_else(|| {
            Error::format(FORMAT, off as u64, format!("bad scale {scale_line:?}"))
        })?;
    let little_endian = scale < 0.0;

    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::format(FORMAT, off as u64, "image dimensions overflow"))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < count * 4 {
        return Err(Error::format(
            FORMAT,
            (cur.pos + payload.len()) as u64,
            format!("truncated payload: need {} bytes, have {}", count * 4, payload.len()),
        ));
    }
    if payload.len() > count * 4 {
        return Err(Error::format(
            FORMAT,
            (cur.pos + count * 4) as u64,
            "trailing bytes after payload",
        ));
    }
    let row_len = width * channels;
    let mut data = vec![0f32; count];
    for (file_row, chunk) in payload.chunks_exact(row_len * 4).enumerate() {
        let y = height - 1 - file_row;
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            let raw = [b[0], b[1], b[2], b[3]];
            data[y * row_len + i] = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
        }
    }
    Ok(FloatMap {
        width,
        height,
        channels,
        data,
    })
}

/// Always writes little-endian (scale `-1.0`).
pub fn encode(map: &FloatMap) -> Vec<u8> {
    let magic = if map.channels == 1 { "Pf" } else { "PF" };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    out.reserve(map.data.len() * 4);
    let row_len = map.width * map.channels;
    for y in (0..map.height).rev() {
        for v in &map.data[y * row_len..(y + 1) * row_len] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read(path: &Path) -> Result<FloatMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| e.in_file(path))
}

pub fn write(path: &Path, map: &FloatMap) -> Result<()> {
    debug_assert!(map.channels == 1 || map.channels == 3);
    fs::write(path, encode(map)).map_err(|e| Error::io(path, e))
}

impl From<&RadianceImage> for FloatMap {
    fn from(img: &RadianceImage) -> Self {
        FloatMap {
            width: img.width(),
            height: img.height(),
            channels: img.channels(),
            data: img.data().to_vec(),
        }
    }
}

impl FloatMap {
    pub fn into_radiance(self) -> Result<RadianceImage> {
        RadianceImage::new(self.width, self.height, self.channels, self.data)
    }

    /// Linear normalized images only; other domains are not stored as PFM.
    pub fn from_linear(img: &NormalizedImage) -> Result<Self> {
        img.expect_domain(Domain::Linear)?;
        Ok(FloatMap {
            width: img.width(),
            height: img.height(),
            channels: img.channels(),
            data: img.data().iter().map(|&v| v as f32).collect(),
        })
    }

    pub fn into_linear(self) -> Result<NormalizedImage> {
        NormalizedImage::new(
            self.width,
            self.height,
            self.channels,
            Domain::Linear,
            self.data.into_iter().map(f64::from).collect(),
        )
    }
}

pub fn read_radiance(path: &Path) -> Result<RadianceImage> {
    read(path)?.into_radiance().map_err(|e| match e {
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_radiance(path: &Path, img: &RadianceImage) -> Result<()> {
    write(path, &FloatMap::from(img))
}
