//! C ABI over the eshdr toolkit.
//!
//! Every fallible call returns an [`EshdrStatus`]; on failure the message is
//! kept per thread and read back with [`eshdr_last_error`]. Objects cross the
//! boundary as opaque handles that the caller releases with the matching
//! `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use eshdr::config::{Overrides, PipelineConfig};
use eshdr::eventsim::{self, EventStream};
use eshdr::image::RadianceImage;
use eshdr::io::{events, pfm};
use eshdr::{metrics, pipeline, Category, Error};

/// Result of every fallible call. Values 2 to 5 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EshdrStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or an out-of-range index.
    InvalidArgument = 1,
    Config = 2,
    Io = 3,
    Validation = 4,
    Numeric = 5,
    /// A bug inside the library; the message has the panic payload.
    Panic = 6,
}

/// A linear-light float image.
pub struct EshdrRadiance(RadianceImage);

/// A time-ordered event stream.
pub struct EshdrEvents(EventStream);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct EshdrEvent {
    /// Nanoseconds.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    /// +1 or -1.
    pub polarity: i8,
}

/// Headline metrics of a pipeline run. Metrics that were not computed are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EshdrReport {
    pub mu_psnr: f64,
    pub mu_ssim: f64,
    pub charbonnier: f64,
    pub baseline_mu_psnr: f64,
    pub improvement_db: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Arg(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EshdrStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EshdrStatus::Ok,
        Ok(Err(Failure::Arg(msg))) => {
            set_error(msg);
            EshdrStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            match e.category() {
                Category::Config => EshdrStatus::Config,
                Category::Io => EshdrStatus::Io,
                Category::Validation => EshdrStatus::Validation,
                Category::Numeric => EshdrStatus::Numeric,
            }
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            EshdrStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Arg(format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure::Arg(format!("{name} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::Arg(format!("{name} is null")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Arg("output pointer is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn out_arg<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::Arg("output pointer is null".into()))
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn eshdr_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn eshdr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- radiance images

/// Copy `width * height * channels` interleaved samples into a new image.
///
/// # Safety
/// `data` must point to that many readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eshdr_radiance_new(
    width: usize,
    height: usize,
    channels: usize,
    data: *const f32,
    out: *mut *mut EshdrRadiance,
) -> EshdrStatus {
    guard(|| {
        if data.is_null() {
            return Err(Failure::Arg("data is null".into()));
        }
        let n = width
            .checked_mul(height)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Failure::Arg("image size overflows".into()))?;
        let samples = std::slice::from_raw_parts(data, n).to_vec();
        store(out, EshdrRadiance(RadianceImage::new(width, height, channels, samples)?))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eshdr_radiance_read_pfm(
    path: *const c_char,
    out: *mut *mut EshdrRadiance,
) -> EshdrStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        store(out, EshdrRadiance(pfm::read_radiance(&path)?))
    })
}

/// # Safety
/// `image` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn eshdr_radiance_write_pfm(
    image: *const EshdrRadiance,
    path: *const c_char,
) -> EshdrStatus {
    guard(|| {
        let image = handle(image, "image")?;
        let path = path_arg(path, "path")?;
        Ok(pfm::write_radiance(&path, &image.0)?)
    })
}

/// Width in pixels, 0 for NULL.
///
/// # Safety
/// `image` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eshdr_radiance_width(image: *const EshdrRadiance) -> usize {
    image.as_ref().map_or(0, |i| i.0.width())
}

/// # Safety
/// `image` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eshdr_radiance_height(image: *const EshdrRadiance) -> usize {
    image.as_ref().map_or(0, |i| i.0.height())
}

/// # Safety
/// `image` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eshdr_radiance_channels(image: *const EshdrRadiance) -> usize {
    image.as_ref().map_or(0, |i| i.0.channels())
}

/// Interleaved samples, row-major from the top row. Borrowed from the handle.
///
/// # Safety
/// `image` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eshdr_radiance_data(image: *const EshdrRadiance) -> *const f32 {
    image.as_ref().map_or(ptr::null(), |i| i.0.data().as_ptr())
}

/// # Safety
/// `image` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eshdr_radiance_free(image: *mut EshdrRadiance) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

// ---- events

/// Simulate the events between consecutive frames.
///
/// # Safety
/// `frames` and `timestamps` must each point to `count` readable entries, every
/// frame a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eshdr_events_simulate(
    frames: *const *const EshdrRadiance,
    timestamps: *const u64,
    count: usize,
    contrast_threshold: f64,
    log_floor: f64,
    out: *mut *mut EshdrEvents,
) -> EshdrStatus {
    guard(|| {
        if frames.is_null() || timestamps.is_null() {
            return Err(Failure::Arg("frames or timestamps is null".into()));
        }
        let images = std::slice::from_raw_parts(frames, count)
            .iter()
            .enumerate()
            .map(|(k, &f)| handle(f, &format!("frame {k}")).map(|h| h.0.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let times = std::slice::from_raw_parts(timestamps, count);
        let stream = eventsim::simulate_events(&images, times, contrast_threshold, log_floor)?;
        store(out, EshdrEvents(stream))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eshdr_events_read(path: *const c_char, out: *mut *mut EshdrEvents) -> EshdrStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        store(out, EshdrEvents(events::read(&path)?))
    })
}

/// # Safety
/// `stream` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn eshdr_events_write(stream: *const EshdrEvents, path: *const c_char) -> EshdrStatus {
    guard(|| {
        let stream = handle(stream, "stream")?;
        let path = path_arg(path, "path")?;
        Ok(events::write(&path, &stream.0)?)
    })
}

/// Number of events, 0 for NULL.
///
/// # Safety
/// `stream` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eshdr_events_len(stream: *const EshdrEvents) -> usize {
    stream.as_ref().map_or(0, |s| s.0.events.len())
}

/// # Safety
/// `stream` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eshdr_events_get(
    stream: *const EshdrEvents,
    index: usize,
    out: *mut EshdrEvent,
) -> EshdrStatus {
    guard(|| {
        let stream = handle(stream, "stream")?;
        let e = stream.0.events.get(index).ok_or_else(|| {
            Failure::Arg(format!("event index {index} out of range ({} events)", stream.0.events.len()))
        })?;
        *out_arg(out)? = EshdrEvent {
            t: e.t,
            x: e.x,
            y: e.y,
            polarity: e.polarity,
        };
        Ok(())
    })
}

/// # Safety
/// `stream` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eshdr_events_free(stream: *mut EshdrEvents) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}

// ---- metrics

/// PSNR in the μ-law tone-mapped domain; `+inf` for identical images.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eshdr_mu_psnr(
    a: *const EshdrRadiance,
    b: *const EshdrRadiance,
    mu: f64,
    out: *mut f64,
) -> EshdrStatus {
    guard(|| {
        let v = metrics::mu_psnr(&handle(a, "a")?.0, &handle(b, "b")?.0, mu)?;
        *out_arg(out)? = v;
        Ok(())
    })
}

/// SSIM in the μ-law tone-mapped domain.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eshdr_mu_ssim(
    a: *const EshdrRadiance,
    b: *const EshdrRadiance,
    mu: f64,
    out: *mut f64,
) -> EshdrStatus {
    guard(|| {
        let v = metrics::mu_ssim(&handle(a, "a")?.0, &handle(b, "b")?.0, mu)?;
        *out_arg(out)? = v;
        Ok(())
    })
}

// ---- pipeline

/// Run every stage. `config_path` may be NULL for the defaults; a non-NULL
/// `out_dir` overrides the configured run directory. `report` may be NULL.
///
/// # Safety
/// Non-NULL strings must be NUL-terminated; a non-NULL `report` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eshdr_pipeline_run(
    config_path: *const c_char,
    out_dir: *const c_char,
    report: *mut EshdrReport,
) -> EshdrStatus {
    guard(|| {
        let mut cfg = if config_path.is_null() {
            PipelineConfig::default()
        } else {
            let path = path_arg(config_path, "config_path")?;
            let mut c = PipelineConfig::load(&path)?;
            if let Some(dir) = path.parent() {
                c.rebase_paths(dir);
            }
            c
        };
        let out = if out_dir.is_null() {
            None
        } else {
            Some(path_arg(out_dir, "out_dir")?)
        };
        cfg.apply(&Overrides {
            out,
            ..Overrides::default()
        });
        let summary = pipeline::run_pipeline(&cfg.resolve()?)?;
        if let Some(r) = report.as_mut() {
            let get = |k: &str| summary.metrics.get(k).unwrap_or(f64::NAN);
            *r = EshdrReport {
                mu_psnr: get("mu_psnr"),
                mu_ssim: get("mu_ssim"),
                charbonnier: get("charbonnier"),
                baseline_mu_psnr: get("baseline_mu_psnr"),
                improvement_db: get("improvement_db"),
            };
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn message() -> String {
        unsafe { CStr::from_ptr(eshdr_last_error()) }.to_string_lossy().into_owned()
    }

    #[test]
    fn statuses_follow_error_categories() {
        assert_eq!(guard(|| Ok(())), EshdrStatus::Ok);
        assert!(eshdr_last_error().is_null());
        let cases = [
            (Error::Config("c".into()), EshdrStatus::Config),
            (Error::Validation("v".into()), EshdrStatus::Validation),
            (Error::Numeric("n".into()), EshdrStatus::Numeric),
        ];
        for (e, want) in cases {
            assert_eq!(want as i32, e.category().exit_code());
            assert_eq!(guard(|| Err(e.into())), want);
        }
        assert_eq!(message(), "n");
    }

    #[test]
    fn panics_become_a_status() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, EshdrStatus::Panic);
        assert!(message().contains("boom"));
        // a later success clears the message
        guard(|| Ok(()));
        assert!(eshdr_last_error().is_null());
    }
}
