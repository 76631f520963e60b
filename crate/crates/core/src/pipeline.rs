//! File-based stages and the end-to-end run.
//!
//! Each stage reads only what earlier stages wrote under the run directory,
//! plus the resolved configuration:
//!
//! ```text
//! scene/    frame_NNNNN.pfm, scene.toml
//! bracket/  ldr_N.ppm (+ .toml), gt_ldr_N.ppm (+ .toml), gt_hdr.pfm, bracket.toml
//! events/   events.eshdr, events.csv (optional)
//! deblur/   deblur_N.pfm (+ .toml)
//! align/    flow_N.pfm, aligned_N.pfm (+ .toml)
//! fuse/     hdr.pfm or fused.ppm, fuse.toml
//! tonemap/  tonemapped.ppm
//! evaluate/ metrics.json, metrics.txt
//! manifest.toml
//! ```
//!
//! Gamma-encoded intermediate frames are stored as PFM so no precision is lost
//! to 8-bit requantization between stages.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::align::{backward_warp, build_alignment_channels, estimate_flow, FlowField, FrameTiming};
use crate::config::{FuseMode, PipelineConfig};
use crate::deblur::{edi_deblur, ExposureWindow};
use crate::degrade::degrade_bracket;
use crate::error::{ensure, Error, Result};
use crate::eventsim::simulate_events;
use crate::fuse::{
    debevec_merge, debevec_merge_masked, mertens_fuse, mertens_fuse_masked, tonemap_output, ExposedFrame,
};
use crate::image::{Domain, LdrFrame, NormalizedImage, Plane, RadianceImage};
use crate::io::{self, events, pfm, ppm};
use crate::metrics::{self, Report};
use crate::scenesim::{render_sequence, Foreground, SceneSpec, Trajectory};
use crate::synth;
use crate::transfer::exposure_align;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn scene_frame(&self, k: usize) -> PathBuf {
        self.dir("scene").join(format!("frame_{k:05}.pfm"))
    }
    pub fn scene_manifest(&self) -> PathBuf {
        self.dir("scene").join("scene.toml")
    }
    pub fn ldr(&self, n: usize) -> PathBuf {
        self.dir("bracket").join(format!("ldr_{n}.ppm"))
    }
    pub fn gt_ldr(&self, n: usize) -> PathBuf {
        self.dir("bracket").join(format!("gt_ldr_{n}.ppm"))
    }
    pub fn gt_hdr(&self) -> PathBuf {
        self.dir("bracket").join("gt_hdr.pfm")
    }
    pub fn bracket_manifest(&self) -> PathBuf {
        self.dir("bracket").join("bracket.toml")
    }
    pub fn events(&self) -> PathBuf {
        self.dir("events").join("events.eshdr")
    }
    pub fn events_csv(&self) -> PathBuf {
        self.dir("events").join("events.csv")
    }
    pub fn deblurred(&self, n: usize) -> PathBuf {
        self.dir("deblur").join(format!("deblur_{n}.pfm"))
    }
    pub fn flow(&self, n: usize) -> PathBuf {
        self.dir("align").join(format!("flow_{n}.pfm"))
    }
    pub fn aligned(&self, n: usize) -> PathBuf {
        self.dir("align").join(format!("aligned_{n}.pfm"))
    }
    pub fn hdr(&self) -> PathBuf {
        self.dir("fuse").join("hdr.pfm")
    }
    pub fn fused_ldr(&self) -> PathBuf {
        self.dir("fuse").join("fused.ppm")
    }
    pub fn fuse_manifest(&self) -> PathBuf {
        self.dir("fuse").join("fuse.toml")
    }
    pub fn tonemapped(&self) -> PathBuf {
        self.dir("tonemap").join("tonemapped.ppm")
    }
    pub fn metrics_json(&self) -> PathBuf {
        self.dir("evaluate").join("metrics.json")
    }
    pub fn metrics_txt(&self) -> PathBuf {
        self.dir("evaluate").join("metrics.txt")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.toml")
    }
}

fn parent_dir(path: &Path) -> Result<()> {
    io::create_dir(path.parent().expect("stage paths have a parent"))
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    parent_dir(path)?;
    let text = toml::to_string(value).map_err(|e| Error::Numeric(format!("{}: {e}", path.display())))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path, format: &'static str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Format {
        format,
        context: path.display().to_string(),
        offset: e.span().map(|s| s.start as u64).unwrap_or(0),
        message: e.message().to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub frame_count: usize,
    pub frame_interval_ns: u64,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub margin: usize,
    pub background: Trajectory,
    pub foreground: Option<Trajectory>,
}

impl SceneManifest {
    pub fn timestamps(&self) -> Vec<u64> {
        (0..self.frame_count as u64)
            .map(|k| k * self.frame_interval_ns)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BracketEntry {
    pub ev: f64,
    pub start_index: usize,
    pub samples: usize,
    pub timestamp: u64,
    pub exposure_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BracketManifest {
    pub frames: Vec<BracketEntry>,
    pub reference: usize,
    pub reference_index: usize,
    pub reference_timestamp: u64,
    /// 0 EV linear exposure per unit scene radiance.
    pub gain: f64,
    pub frame_interval_ns: u64,
    pub gamma: f64,
}

/// Sidecar of a deblurred or aligned frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameInfo {
    pub ev: f64,
    pub exposure_time: f64,
    /// Capture start, nanoseconds.
    pub timestamp: u64,
    pub samples: usize,
    /// Instant the frame depicts after deblurring.
    pub target_t: u64,
    pub frame_interval_ns: u64,
    /// Pixels whose value was passed through (saturated) or whose flow was invalid.
    pub invalid_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuseManifest {
    pub mode: FuseMode,
    /// Peak radiance of the merged HDR (0 EV exposure units); absent for exposure fusion.
    pub peak: Option<f64>,
}

/// Gamma-encoded frames go to PFM as raw f32 code values.
pub fn write_encoded(path: &Path, img: &NormalizedImage) -> Result<()> {
    img.expect_domain(Domain::GammaEncoded)?;
    parent_dir(path)?;
    pfm::write(
        path,
        &pfm::FloatMap {
            width: img.width(),
            height: img.height(),
            channels: img.channels(),
            data: img.data().iter().map(|&v| v as f32).collect(),
        },
    )
}

pub fn read_encoded(path: &Path) -> Result<NormalizedImage> {
    let m = pfm::read(path)?;
    NormalizedImage::new(
        m.width,
        m.height,
        m.channels,
        Domain::GammaEncoded,
        m.data.into_iter().map(f64::from).collect(),
    )
    .map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// 8-bit quantization of a normalized image.
pub fn to_pixmap(img: &NormalizedImage) -> ppm::Pixmap {
    ppm::Pixmap {
        width: img.width(),
        height: img.height(),
        channels: img.channels(),
        data: img.data().iter().map(|&v| (v * 255.0).round() as u8).collect(),
    }
}

fn write_pixmap(path: &Path, img: &NormalizedImage) -> Result<()> {
    parent_dir(path)?;
    ppm::write(path, &to_pixmap(img))
}

fn read_pixmap(path: &Path, domain: Domain) -> Result<NormalizedImage> {
    let m = ppm::read(path)?;
    NormalizedImage::new(
        m.width,
        m.height,
        m.channels,
        domain,
        m.data.iter().map(|&c| c as f64 / 255.0).collect(),
    )
}

fn load_scene_spec(cfg: &PipelineConfig) -> Result<SceneSpec> {
    let s = &cfg.scene;
    let frame_count = match s.frame_count {
        Some(n) => n,
        None => crate::degrade::required_frames(&cfg.bracket)?,
    };
    let seed = cfg.scene_seed();
    let margin = (s.motion_bound * frame_count as f64).ceil() as usize;
    let (background, foreground) = match &s.background {
        Some(path) => {
            let bg = pfm::read_radiance(path)?;
            let fg = match (&s.foreground, &s.matte) {
                (Some(f), Some(m)) => {
                    let image = pfm::read_radiance(f)?;
                    let matte = pfm::read(m)?;
                    ensure!(
                        matte.channels == 1,
                        "{}: alpha matte must have one channel",
                        m.display()
                    );
                    Some(Foreground {
                        image,
                        matte: Plane::new(matte.width, matte.height, matte.data),
                    })
                }
                _ => None,
            };
            (bg, fg)
        }
        None => {
            let syn = &s.synthetic;
            let bg = synth::texture(
                syn,
                syn.width + 2 * margin,
                syn.height + 2 * margin,
                seed,
                1,
            )?;
            let fg = if syn.foreground {
                Some(synth::disc_foreground(syn, seed)?)
            } else {
                None
            };
            (bg, fg)
        }
    };
    Ok(SceneSpec {
        background,
        foreground,
        alpha_smooth: s.alpha_smooth,
        motion_bound: s.motion_bound,
        frame_count,
        frame_interval_ns: cfg.bracket.frame_interval_ns,
        seed,
    })
}

/// Render the high-rate HDR sequence.
pub fn simulate_scene(cfg: &PipelineConfig) -> Result<SceneManifest> {
    let layout = Layout::new(&cfg.output.dir);
    let spec = load_scene_spec(cfg)?;
    info!(
        "rendering {} frames from a {}x{} background",
        spec.frame_count,
        spec.background.width(),
        spec.background.height()
    );
    let seq = render_sequence(&spec)?;
    io::create_dir(&layout.root.join("scene"))?;
    for (k, f) in seq.frames.iter().enumerate() {
        pfm::write_radiance(&layout.scene_frame(k), f)?;
    }
    let first = &seq.frames[0];
    let manifest = SceneManifest {
        frame_count: spec.frame_count,
        frame_interval_ns: spec.frame_interval_ns,
        width: first.width(),
        height: first.height(),
        channels: first.channels(),
        margin: spec.margin(),
        background: seq.background,
        foreground: seq.foreground,
    };
    write_toml(&layout.scene_manifest(), &manifest)?;
    Ok(manifest)
}

fn load_scene(layout: &Layout) -> Result<(SceneManifest, Vec<RadianceImage>)> {
    let manifest: SceneManifest = read_toml(&layout.scene_manifest(), "scene manifest")?;
    let frames = (0..manifest.frame_count)
        .map(|k| pfm::read_radiance(&layout.scene_frame(k)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, frames))
}

/// Capture the blurred, noisy, quantized bracket and its ground truth.
pub fn degrade(cfg: &PipelineConfig) -> Result<BracketManifest> {
    let layout = Layout::new(&cfg.output.dir);
    let (scene, frames) = load_scene(&layout)?;
    ensure!(
        scene.frame_interval_ns == cfg.bracket.frame_interval_ns,
        "scene was rendered at {} ns per frame but the bracket expects {} ns",
        scene.frame_interval_ns,
        cfg.bracket.frame_interval_ns
    );
    let bracket = degrade_bracket(&frames, &cfg.bracket)?;
    io::create_dir(&layout.root.join("bracket"))?;
    let dt = Some(cfg.bracket.frame_interval_ns);
    for (n, f) in bracket.frames.iter().enumerate() {
        ppm::write_frame(&layout.ldr(n), f, dt)?;
    }
    for (n, f) in bracket.ground_truth.clean_ldr.iter().enumerate() {
        ppm::write_frame(&layout.gt_ldr(n), f, None)?;
    }
    pfm::write_radiance(&layout.gt_hdr(), &bracket.ground_truth.reference_hdr)?;
    let reference = bracket
        .schedule
        .iter()
        .position(|s| s.ev == 0.0)
        .expect("validated bracket contains 0 EV");
    let manifest = BracketManifest {
        frames: bracket
            .schedule
            .iter()
            .map(|s| BracketEntry {
                ev: s.ev,
                start_index: s.start_index,
                samples: s.samples,
                timestamp: s.timestamp,
                exposure_time: s.exposure_time,
            })
            .collect(),
        reference,
        reference_index: bracket.ground_truth.reference_index,
        reference_timestamp: bracket.ground_truth.reference_timestamp,
        gain: cfg.bracket.anchor * cfg.bracket.base_exposure,
        frame_interval_ns: cfg.bracket.frame_interval_ns,
        gamma: cfg.bracket.gamma,
    };
    write_toml(&layout.bracket_manifest(), &manifest)?;
    info!("captured {} exposures", manifest.frames.len());
    Ok(manifest)
}

/// Simulate the event stream of the whole sequence.
pub fn simulate_events_stage(cfg: &PipelineConfig) -> Result<usize> {
    let layout = Layout::new(&cfg.output.dir);
    let (scene, frames) = load_scene(&layout)?;
    let stream = simulate_events(
        &frames,
        &scene.timestamps(),
        cfg.events.contrast_threshold,
        cfg.events.log_floor,
    )?;
    io::create_dir(&layout.root.join("events"))?;
    events::write(&layout.events(), &stream)?;
    if cfg.events.csv {
        events::write_csv(&layout.events_csv(), &stream)?;
    }
    info!("{} events", stream.len());
    Ok(stream.len())
}

fn load_bracket(layout: &Layout) -> Result<(BracketManifest, Vec<LdrFrame>)> {
    let manifest: BracketManifest = read_toml(&layout.bracket_manifest(), "bracket manifest")?;
    let frames = (0..manifest.frames.len())
        .map(|n| ppm::read_frame(&layout.ldr(n)).map(|(f, _)| f))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, frames))
}

fn load_events(layout: &Layout) -> Result<crate::eventsim::EventStream> {
    let scene: SceneManifest = read_toml(&layout.scene_manifest(), "scene manifest")?;
    let mut stream = events::read(&layout.events())?;
    let ts = scene.timestamps();
    stream.span = Some((ts[0], *ts.last().unwrap()));
    Ok(stream)
}

fn read_info(path: &Path) -> Result<FrameInfo> {
    read_toml(&ppm::sidecar_path(path), "frame sidecar")
}

/// Event double-integral deblurring of every exposure at its midpoint.
pub fn deblur(cfg: &PipelineConfig) -> Result<Vec<FrameInfo>> {
    let layout = Layout::new(&cfg.output.dir);
    let (bracket, frames) = load_bracket(&layout)?;
    let stream = load_events(&layout)?;
    ensure!(
        (stream.contrast_threshold - cfg.events.contrast_threshold).abs() < 1e-12,
        "event file was simulated with c = {} but the configuration says {}",
        stream.contrast_threshold,
        cfg.events.contrast_threshold
    );
    let mut infos = Vec::new();
    for (n, frame) in frames.iter().enumerate() {
        let out = edi_deblur(frame, &stream, bracket.frame_interval_ns, None, bracket.gamma)?;
        let window = ExposureWindow::of_frame(frame, bracket.frame_interval_ns)?;
        write_encoded(&layout.deblurred(n), &out.image)?;
        let info = FrameInfo {
            ev: frame.ev,
            exposure_time: frame.exposure_time,
            timestamp: frame.timestamp,
            samples: window.samples,
            target_t: out.target_t,
            frame_interval_ns: bracket.frame_interval_ns,
            invalid_pixels: out.valid.data.iter().filter(|v| !**v).count(),
        };
        write_toml(&ppm::sidecar_path(&layout.deblurred(n)), &info)?;
        infos.push(info);
    }
    Ok(infos)
}

/// Flow from the 0 EV reference to every other deblurred exposure, and warp.
pub fn align(cfg: &PipelineConfig) -> Result<Vec<FrameInfo>> {
    let layout = Layout::new(&cfg.output.dir);
    let bracket: BracketManifest = read_toml(&layout.bracket_manifest(), "bracket manifest")?;
    let stream = load_events(&layout)?;
    let count = bracket.frames.len();
    let images = (0..count)
        .map(|n| read_encoded(&layout.deblurred(n)))
        .collect::<Result<Vec<_>>>()?;
    let infos = (0..count)
        .map(|n| read_info(&layout.deblurred(n)))
        .collect::<Result<Vec<_>>>()?;
    let r = bracket.reference;
    let timing = |i: &FrameInfo| FrameTiming {
        window: (
            i.timestamp,
            i.timestamp + (i.samples as u64 - 1) * i.frame_interval_ns,
        ),
        exposure_time: i.exposure_time,
    };
    let mut out = Vec::new();
    for n in 0..count {
        let (flow, aligned, invalid) = if n == r {
            let (w, h) = (images[n].width(), images[n].height());
            (FlowField::constant(w, h, 0.0, 0.0), images[n].clone(), 0)
        } else {
            let reference = exposure_align(
                &images[r],
                infos[n].exposure_time,
                infos[r].exposure_time,
                bracket.gamma,
            )?;
            let (ch_n, ch_ref) = build_alignment_channels(
                &images[n],
                &reference,
                &stream,
                timing(&infos[n]),
                timing(&infos[r]),
                bracket.gamma,
                cfg.events.log_floor,
            )?;
            let flow = estimate_flow(&ch_n, &ch_ref, &cfg.align)?;
            let warped = backward_warp(&images[n], &flow)?;
            let invalid = warped.valid.data.iter().filter(|v| !**v).count();
            (flow, warped.image, invalid)
        };
        parent_dir(&layout.flow(n))?;
        pfm::write(&layout.flow(n), &flow.to_float_map())?;
        write_encoded(&layout.aligned(n), &aligned)?;
        let info = FrameInfo {
            target_t: infos[r].target_t,
            invalid_pixels: invalid,
            ..infos[n].clone()
        };
        write_toml(&ppm::sidecar_path(&layout.aligned(n)), &info)?;
        out.push(info);
    }
    Ok(out)
}

/// Merge the aligned exposures.
pub fn fuse(cfg: &PipelineConfig) -> Result<FuseManifest> {
    let layout = Layout::new(&cfg.output.dir);
    let bracket: BracketManifest = read_toml(&layout.bracket_manifest(), "bracket manifest")?;
    let frames = (0..bracket.frames.len())
        .map(|n| {
            Ok(ExposedFrame {
                image: read_encoded(&layout.aligned(n))?,
                ev: read_info(&layout.aligned(n))?.ev,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // pixels the aligner could not place only fill in where nothing else can
    let valid = (0..frames.len())
        .map(|n| {
            let flow = FlowField::from_float_map(&pfm::read(&layout.flow(n))?)?;
            Ok(Plane::new(flow.width, flow.height, flow.valid))
        })
        .collect::<Result<Vec<_>>>()?;
    let masks: Vec<Option<&Plane<bool>>> = valid.iter().map(Some).collect();
    let manifest = match cfg.fuse.mode {
        FuseMode::Debevec => {
            let hdr = debevec_merge_masked(&frames, &masks, bracket.gamma)?;
            parent_dir(&layout.hdr())?;
            pfm::write_radiance(&layout.hdr(), &hdr)?;
            FuseManifest {
                mode: FuseMode::Debevec,
                peak: Some(hdr.peak() as f64),
            }
        }
        FuseMode::Mertens => {
            let images: Vec<NormalizedImage> = frames.into_iter().map(|f| f.image).collect();
            let fused = mertens_fuse_masked(&images, &masks, &cfg.fuse.mertens)?;
            write_pixmap(&layout.fused_ldr(), &fused)?;
            FuseManifest {
                mode: FuseMode::Mertens,
                peak: None,
            }
        }
    };
    write_toml(&layout.fuse_manifest(), &manifest)?;
    Ok(manifest)
}

/// μ-law tone mapping of the merged HDR (exposure fusion output is copied).
pub fn tonemap(cfg: &PipelineConfig) -> Result<()> {
    let layout = Layout::new(&cfg.output.dir);
    let manifest: FuseManifest = read_toml(&layout.fuse_manifest(), "fuse manifest")?;
    let out = match manifest.mode {
        FuseMode::Debevec => {
            let hdr = pfm::read_radiance(&layout.hdr())?;
            tonemap_output(&hdr, manifest.peak, cfg.fuse.mu)?.0
        }
        FuseMode::Mertens => read_pixmap(&layout.fused_ldr(), Domain::GammaEncoded)?,
    };
    write_pixmap(&layout.tonemapped(), &out)
}

fn filter(report: Report, cfg: &PipelineConfig, prefix: &str) -> Report {
    let m = &cfg.metrics;
    let mut out = Report::default();
    for (k, v) in report.values {
        let keep = match k.as_str() {
            "psnr" | "mu_psnr" => m.psnr,
            "ssim" | "mu_ssim" => m.ssim,
            "charbonnier" => m.charbonnier,
            // shared by both comparisons; reported once
            "mu" | "peak" => prefix.is_empty(),
            _ => true,
        };
        if keep {
            out.insert(&format!("{prefix}{k}"), v);
        }
    }
    out
}

/// Score the run against the ground truth.
pub fn evaluate(cfg: &PipelineConfig) -> Result<Report> {
    let layout = Layout::new(&cfg.output.dir);
    let manifest: FuseManifest = read_toml(&layout.fuse_manifest(), "fuse manifest")?;
    let (bracket, raw) = load_bracket(&layout)?;
    let raw_frames: Vec<ExposedFrame> = raw
        .iter()
        .map(|f| ExposedFrame {
            image: f.to_normalized(),
            ev: f.ev,
        })
        .collect();
    let mut report = Report::default();
    match manifest.mode {
        FuseMode::Debevec => {
            let gt = pfm::read_radiance(&layout.gt_hdr())?;
            let gt = RadianceImage::new(
                gt.width(),
                gt.height(),
                gt.channels(),
                gt.data().iter().map(|v| v * bracket.gain as f32).collect(),
            )?;
            let est = pfm::read_radiance(&layout.hdr())?;
            let main = metrics::compare_hdr(&est, &gt, cfg.fuse.mu)?;
            let main_psnr = main.get("mu_psnr");
            report.values.extend(filter(main, cfg, "").values);
            if cfg.metrics.baseline {
                let naive = debevec_merge(&raw_frames, bracket.gamma)?;
                let base = metrics::compare_hdr(&naive, &gt, cfg.fuse.mu)?;
                if let (Some(a), Some(b)) = (main_psnr, base.get("mu_psnr")) {
                    report.insert("improvement_db", a - b);
                }
                report.values.extend(filter(base, cfg, "baseline_").values);
            }
        }
        FuseMode::Mertens => {
            let gt_frames = (0..bracket.frames.len())
                .map(|n| ppm::read_frame(&layout.gt_ldr(n)).map(|(f, _)| f.to_normalized()))
                .collect::<Result<Vec<_>>>()?;
            let gt = mertens_fuse(&gt_frames, &cfg.fuse.mertens)?;
            let gt = read_back_quantized(&gt);
            let est = read_pixmap(&layout.fused_ldr(), Domain::GammaEncoded)?;
            let main = metrics::compare_ldr(&est, &gt)?;
            let main_psnr = main.get("psnr");
            report.values.extend(filter(main, cfg, "").values);
            if cfg.metrics.baseline {
                let images: Vec<NormalizedImage> = raw_frames.into_iter().map(|f| f.image).collect();
                let naive = read_back_quantized(&mertens_fuse(&images, &cfg.fuse.mertens)?);
                let base = metrics::compare_ldr(&naive, &gt)?;
                if let (Some(a), Some(b)) = (main_psnr, base.get("psnr")) {
                    report.insert("improvement_db", a - b);
                }
                report.values.extend(filter(base, cfg, "baseline_").values);
            }
        }
    }
    parent_dir(&layout.metrics_json())?;
    fs::write(layout.metrics_json(), report.to_json())
        .map_err(|e| Error::io(layout.metrics_json(), e))?;
    fs::write(layout.metrics_txt(), report.to_text())
        .map_err(|e| Error::io(layout.metrics_txt(), e))?;
    Ok(report)
}

/// Same 8-bit rounding the fused output went through on disk.
fn read_back_quantized(img: &NormalizedImage) -> NormalizedImage {
    let p = to_pixmap(img);
    NormalizedImage::from_raw(
        p.width,
        p.height,
        p.channels,
        img.domain(),
        p.data.iter().map(|&c| c as f64 / 255.0).collect(),
    )
}

/// Compare two image files: PFM pairs in the μ-law domain, PPM/PGM pairs directly.
pub fn evaluate_files(a: &Path, b: &Path, mu: f64) -> Result<Report> {
    let is_pfm = |p: &Path| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm"));
    match (is_pfm(a), is_pfm(b)) {
        (true, true) => {
            let ia = pfm::read_radiance(a)?;
            let ib = pfm::read_radiance(b)?;
            metrics::compare_hdr(&ia, &ib, mu)
        }
        (false, false) => {
            let ia = read_pixmap(a, Domain::GammaEncoded)?;
            let ib = read_pixmap(b, Domain::GammaEncoded)?;
            metrics::compare_ldr(&ia, &ib)
        }
        _ => Err(Error::Validation(format!(
            "cannot compare {} with {}: one is a PFM radiance map and the other is not",
            a.display(),
            b.display()
        ))),
    }
}

fn hash_tree(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            hash_tree(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("walk stays under root");
            let key = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            if key != "manifest.toml" {
                out.insert(key, io::sha256_file(&path)?);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub metrics: Report,
    pub manifest_path: PathBuf,
}

/// scene → degrade → events → deblur → align → fuse → tonemap → evaluate, then the manifest.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary> {
    let layout = Layout::new(&cfg.output.dir);
    io::create_dir(&layout.root)?;
    simulate_scene(cfg)?;
    degrade(cfg)?;
    simulate_events_stage(cfg)?;
    deblur(cfg)?;
    align(cfg)?;
    fuse(cfg)?;
    tonemap(cfg)?;
    let metrics = evaluate(cfg)?;
    write_manifest(cfg, &metrics)?;
    Ok(RunSummary {
        metrics,
        manifest_path: layout.manifest(),
    })
}

pub fn write_manifest(cfg: &PipelineConfig, metrics: &Report) -> Result<()> {
    let layout = Layout::new(&cfg.output.dir);
    let mut doc = toml::Table::new();
    doc.insert("version".into(), VERSION.into());
    let mut seeds = toml::Table::new();
    for (k, v) in [
        ("global", cfg.seed),
        ("scene", cfg.scene_seed()),
        ("bracket", cfg.bracket.seed),
    ] {
        seeds.insert(k.into(), (v as i64).into());
    }
    doc.insert("seeds".into(), seeds.into());
    let config: toml::Table =
        toml::from_str(&cfg.to_portable_toml()).expect("serialized config parses");
    doc.insert("config".into(), config.into());
    let mut files = BTreeMap::new();
    hash_tree(&layout.root, &layout.root, &mut files)?;
    let files: toml::Table = files.into_iter().map(|(k, v)| (k, v.into())).collect();
    doc.insert("files".into(), files.into());
    let m: toml::Table = metrics
        .values
        .iter()
        .map(|(k, &v)| (k.clone(), v.into()))
        .collect();
    doc.insert("metrics".into(), m.into());
    let text = toml::to_string(&doc).expect("manifest serializes");
    fs::write(layout.manifest(), text).map_err(|e| Error::io(layout.manifest(), e))
}
