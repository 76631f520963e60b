//! Binary PPM (`P6`) / PGM (`P5`) with maxval 255, plus the per-frame metadata sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::LdrFrame;

const FORMAT: &str = "PPM";

#[derive(Debug, Clone, PartialEq)]
pub struct Pixmap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<(usize, String)> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format(FORMAT, start as u64, "unexpected end of header"));
    }
    Ok((start, String::from_utf8_lossy(&bytes[start..*pos]).into_owned()))
}

pub fn decode(bytes: &[u8]) -> Result<Pixmap> {
    let mut pos = 0;
    let (off, magic) = next_token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => {
            return Err(Error::format(
                FORMAT,
                off as u64,
                format!("expected magic `P6` or `P5`, found {other:?}"),
            ))
        }
    };
    let mut numbers = [0usize; 3];
    for n in numbers.iter_mut() {
        let (off, tok) = next_token(bytes, &mut pos)?;
        *n = tok
            .parse()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::format(FORMAT, off as u64, format!("bad header field {tok:?}")))?;
    }
    let [width, height, maxval] = numbers;
    if maxval != 255 {
        return Err(Error::format(
            FORMAT,
            pos as u64,
            format!("only maxval 255 is supported, found {maxval}"),
        ));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(FORMAT, pos as u64, "missing separator before raster"));
    }
    pos += 1;
    let need = width * height * channels;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(Error::format(
            FORMAT,
            bytes.len() as u64,
            format!("truncated raster: need {need} bytes, have {}", raster.len()),
        ));
    }
    if raster.len() > need {
        return Err(Error::format(FORMAT, (pos + need) as u64, "trailing bytes after raster"));
    }
    Ok(Pixmap {
        width,
        height,
        channels,
        data: raster.to_vec(),
    })
}

pub fn encode(map: &Pixmap) -> Vec<u8> {
    let magic = if map.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend_from_slice(&map.data);
    out
}

pub fn read(path: &Path) -> Result<Pixmap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| e.in_file(path))
}

pub fn write(path: &Path, map: &Pixmap) -> Result<()> {
    fs::write(path, encode(map)).map_err(|e| Error::io(path, e))
}

/// Capture metadata stored next to each frame as `<stem>.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameMeta {
    pub ev: f64,
    /// Seconds.
    pub exposure_time: f64,
    /// Nanoseconds.
    pub timestamp: u64,
    /// Spacing of the high-rate sequence the exposure integrated over.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_interval_ns: Option<u64>,
}

pub fn sidecar_path(image_path: &Path) -> PathBuf {
    image_path.with_extension("toml")
}

pub fn read_meta(path: &Path) -> Result<FrameMeta> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Format {
        format: "frame sidecar",
        context: path.display().to_string(),
        offset: e.span().map(|s| s.start as u64).unwrap_or(0),
        message: e.message().to_string(),
    })
}

pub fn write_meta(path: &Path, meta: &FrameMeta) -> Result<()> {
    let text = toml::to_string(meta).expect("frame metadata serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_frame(path: &Path, frame: &LdrFrame, frame_interval_ns: Option<u64>) -> Result<()> {
    write(
        path,
        &Pixmap {
            width: frame.width(),
            height: frame.height(),
            channels: frame.channels(),
            data: frame.data().to_vec(),
        },
    )?;
    write_meta(
        &sidecar_path(path),
        &FrameMeta {
            ev: frame.ev,
            exposure_time: frame.exposure_time,
            timestamp: frame.timestamp,
            frame_interval_ns,
        },
    )
}

pub fn read_frame(path: &Path) -> Result<(LdrFrame, FrameMeta)> {
    let map = read(path)?;
    let meta = read_meta(&sidecar_path(path))?;
    let frame = LdrFrame::new(
        map.width,
        map.height,
        map.channels,
        map.data,
        meta.ev,
        meta.exposure_time,
        meta.timestamp,
    )?;
    Ok((frame, meta))
}
