//! `ESHDR1` binary event files.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic     8 bytes  "ESHDR1\0\0"
//! version   u32      1
//! width     u32
//! height    u32
//! c         f64      contrast threshold
//! log_floor f64
//! count     u64
//! records   count × 16 bytes: u64 t_ns, u16 x, u16 y, i8 polarity, 3 zero bytes
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eventsim::{Event, EventStream};

pub const MAGIC: &[u8; 8] = b"ESHDR1\0\0";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 8 + 4 + 4 + 4 + 8 + 8 + 8;
pub const RECORD_LEN: usize = 16;

const FORMAT: &str = "ESHDR1 event file";

pub fn encode(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(stream.width as u32).to_le_bytes());
    out.extend_from_slice(&(stream.height as u32).to_le_bytes());
    out.extend_from_slice(&stream.contrast_threshold.to_le_bytes());
    out.extend_from_slice(&stream.log_floor.to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.polarity as u8);
        out.extend_from_slice(&[0, 0, 0]);
    }
    out
}

fn le<const N: usize>(bytes: &[u8], at: usize) -> [u8; N] {
    bytes[at..at + N].try_into().expect("bounds checked by caller")
}

pub fn decode(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format(
            FORMAT,
            0,
            format!("bad magic: expected {:?}", String::from_utf8_lossy(MAGIC)),
        ));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            FORMAT,
            bytes.len() as u64,
            format!("truncated header ({} of {HEADER_LEN} bytes)", bytes.len()),
        ));
    }
    let version = u32::from_le_bytes(le(bytes, 8));
    if version != VERSION {
        return Err(Error::format(FORMAT, 8, format!("unsupported version {version}")));
    }
    let width = u32::from_le_bytes(le(bytes, 12)) as usize;
    let height = u32::from_le_bytes(le(bytes, 16)) as usize;
    if width == 0 || height == 0 || width > 65536 || height > 65536 {
        return Err(Error::format(
            FORMAT,
            12,
            format!("bad sensor size {width}x{height}"),
        ));
    }
    let c = f64::from_le_bytes(le(bytes, 20));
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::format(FORMAT, 20, format!("bad contrast threshold {c}")));
    }
    let log_floor = f64::from_le_bytes(le(bytes, 28));
    if !(log_floor.is_finite() && log_floor > 0.0) {
        return Err(Error::format(FORMAT, 28, format!("bad log floor {log_floor}")));
    }
    let count = u64::from_le_bytes(le(bytes, 36));
    let body = bytes.len() - HEADER_LEN;
    let expected = count.checked_mul(RECORD_LEN as u64);
    if expected != Some(body as u64) {
        let at = HEADER_LEN + body - body % RECORD_LEN;
        return Err(Error::format(
            FORMAT,
            at as u64,
            format!("header announces {count} records but body holds {body} bytes"),
        ));
    }
    let mut events = Vec::with_capacity(count as usize);
    let mut prev: Option<(u64, u16, u16, i8)> = None;
    for i in 0..count as usize {
        let at = HEADER_LEN + i * RECORD_LEN;
        let e = Event {
            t: u64::from_le_bytes(le(bytes, at)),
            x: u16::from_le_bytes(le(bytes, at + 8)),
            y: u16::from_le_bytes(le(bytes, at + 10)),
            polarity: bytes[at + 12] as i8,
        };
        if e.polarity != 1 && e.polarity != -1 {
            return Err(Error::format(
                FORMAT,
                (at + 12) as u64,
                format!("polarity {} is not ±1", e.polarity),
            ));
        }
        if bytes[at + 13..at + 16] != [0, 0, 0] {
            return Err(Error::format(FORMAT, (at + 13) as u64, "non-zero padding"));
        }
        if e.x as usize >= width || e.y as usize >= height {
            return Err(Error::format(
                FORMAT,
                (at + 8) as u64,
                format!("event at ({}, {}) outside {width}x{height}", e.x, e.y),
            ));
        }
        let key = (e.t, e.y, e.x, e.polarity);
        if prev.is_some_and(|p| p > key) {
            return Err(Error::format(FORMAT, at as u64, "records are not time ordered"));
        }
        prev = Some(key);
        events.push(e);
    }
    EventStream::new(width, height, c, log_floor, events)
}

pub fn read(path: &Path) -> Result<EventStream> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| e.in_file(path))
}

pub fn write(path: &Path, stream: &EventStream) -> Result<()> {
    fs::write(path, encode(stream)).map_err(|e| Error::io(path, e))
}

pub fn write_csv(path: &Path, stream: &EventStream) -> Result<()> {
    fs::write(path, crate::eventsim::to_csv(stream)).map_err(|e| Error::io(path, e))
}
