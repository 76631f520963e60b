//! Run configuration: a TOML document with one table per stage. Every field
//! has a default, unknown keys are rejected, and sub-seeds not given
//! explicitly are derived from the global seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::align::FlowParams;
use crate::degrade::{required_frames, BracketSpec};
use crate::error::{Error, Result};
use crate::eventsim::{DEFAULT_CONTRAST_THRESHOLD, DEFAULT_LOG_FLOOR};
use crate::fuse::MertensParams;
use crate::rng::derive_seed;
use crate::synth::SyntheticScene;
use crate::transfer::DEFAULT_MU;

const SCENE_SEED_TAG: u64 = 0x5CE7E;
const BRACKET_SEED_TAG: u64 = 0xB7AC;

/// TOML integers are signed, so seeds stay within 63 bits.
pub const MAX_SEED: u64 = i64::MAX as u64;

fn sub_seed(seed: u64, tag: u64) -> u64 {
    derive_seed(seed, tag) & MAX_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Background radiance PFM; a synthetic texture is generated when absent.
    pub background: Option<PathBuf>,
    pub foreground: Option<PathBuf>,
    /// Single-channel PFM matte for `foreground`.
    pub matte: Option<PathBuf>,
    pub synthetic: SyntheticScene,
    pub alpha_smooth: f64,
    pub motion_bound: f64,
    /// Defaults to the number of frames the bracket needs.
    pub frame_count: Option<usize>,
    pub seed: Option<u64>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            background: None,
            foreground: None,
            matte: None,
            synthetic: SyntheticScene::default(),
            alpha_smooth: 0.99,
            motion_bound: 0.1,
            frame_count: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventConfig {
    pub contrast_threshold: f64,
    pub log_floor: f64,
    /// Also write `events.csv`.
    pub csv: bool,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self {
            contrast_threshold: DEFAULT_CONTRAST_THRESHOLD,
            log_floor: DEFAULT_LOG_FLOOR,
            csv: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FuseMode {
    Debevec,
    Mertens,
}

impl FromStr for FuseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "debevec" => Ok(FuseMode::Debevec),
            "mertens" => Ok(FuseMode::Mertens),
            other => Err(Error::Config(format!(
                "unknown fuse mode {other:?} (expected \"debevec\" or \"mertens\")"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FuseConfig {
    pub mode: FuseMode,
    pub mu: f64,
    pub mertens: MertensParams,
}

impl Default for FuseConfig {
    fn default() -> Self {
        Self {
            mode: FuseMode::Debevec,
            mu: DEFAULT_MU,
            mertens: MertensParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub psnr: bool,
    pub ssim: bool,
    pub charbonnier: bool,
    /// Also score a merge of the raw bracket (no deblurring, no alignment).
    pub baseline: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            psnr: true,
            ssim: true,
            charbonnier: true,
            baseline: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("eshdr-out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub scene: SceneConfig,
    pub bracket: BracketSpec,
    pub events: EventConfig,
    pub align: FlowParams,
    pub fuse: FuseConfig,
    pub metrics: MetricsConfig,
    pub output: OutputConfig,
    /// Whether `bracket.seed` was given explicitly (otherwise derived).
    #[serde(skip)]
    bracket_seed_explicit: bool,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub lambda_ev: Option<f64>,
    pub mu: Option<f64>,
    pub contrast_threshold: Option<f64>,
    pub fuse_mode: Option<FuseMode>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map(|s| {
                    let line = text[..s.start].matches('\n').count() + 1;
                    format!(" (line {line})")
                })
                .unwrap_or_default();
            Error::Config(format!("{}{at}", e.message().trim_end()))
        })?;
        let raw: toml::Table = toml::from_str(text).expect("already parsed once");
        cfg.bracket_seed_explicit = raw
            .get("bracket")
            .and_then(|b| b.as_table())
            .is_some_and(|b| b.contains_key("seed"));
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Relative paths in the scene table are taken relative to `base`.
    pub fn rebase_paths(&mut self, base: &Path) {
        for p in [
            &mut self.scene.background,
            &mut self.scene.foreground,
            &mut self.scene.matte,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.out {
            self.output.dir = v.clone();
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.lambda_ev {
            self.align.lambda_ev = v;
        }
        if let Some(v) = o.mu {
            self.fuse.mu = v;
        }
        if let Some(v) = o.contrast_threshold {
            self.events.contrast_threshold = v;
        }
        if let Some(v) = o.fuse_mode {
            self.fuse.mode = v;
        }
    }

    /// Materialize derived values (sub-seeds, frame count) and validate.
    pub fn resolve(mut self) -> Result<Self> {
        if self.scene.seed.is_none() {
            self.scene.seed = Some(sub_seed(self.seed, SCENE_SEED_TAG));
        }
        if !self.bracket_seed_explicit {
            self.bracket.seed = sub_seed(self.seed, BRACKET_SEED_TAG);
        }
        self.validate()?;
        if self.scene.frame_count.is_none() {
            self.scene.frame_count = Some(required_frames(&self.bracket)?);
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let config = |e: Error| match e {
            Error::Validation(m) => Error::Config(m),
            other => other,
        };
        self.bracket.validate().map_err(config)?;
        self.align.validate().map_err(config)?;
        self.scene.synthetic.validate().map_err(config)?;
        let s = &self.scene;
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::Config(msg)) };
        check(
            self.seed <= MAX_SEED,
            format!("seed {} exceeds the largest supported seed {MAX_SEED}", self.seed),
        )?;
        check(
            (0.0..=1.0).contains(&s.alpha_smooth),
            format!("scene.alpha_smooth must be in [0, 1], got {}", s.alpha_smooth),
        )?;
        check(
            s.motion_bound.is_finite() && s.motion_bound >= 0.0,
            format!("scene.motion_bound must be non-negative, got {}", s.motion_bound),
        )?;
        check(
            s.foreground.is_some() == s.matte.is_some(),
            "scene.foreground and scene.matte must be given together".into(),
        )?;
        check(
            s.foreground.is_none() || s.background.is_some(),
            "scene.foreground needs scene.background".into(),
        )?;
        if let Some(n) = s.frame_count {
            let need = required_frames(&self.bracket)?;
            check(
                n >= need,
                format!("scene.frame_count {n} is below the {need} frames the bracket needs"),
            )?;
        }
        let e = &self.events;
        check(
            e.contrast_threshold.is_finite() && e.contrast_threshold > 0.0,
            format!("events.contrast_threshold must be positive, got {}", e.contrast_threshold),
        )?;
        check(
            e.log_floor.is_finite() && e.log_floor > 0.0,
            format!("events.log_floor must be positive, got {}", e.log_floor),
        )?;
        check(
            self.fuse.mu.is_finite() && self.fuse.mu > 0.0,
            format!("fuse.mu must be positive, got {}", self.fuse.mu),
        )?;
        Ok(())
    }

    pub fn scene_seed(&self) -> u64 {
        self.scene
            .seed
            .unwrap_or_else(|| sub_seed(self.seed, SCENE_SEED_TAG))
    }

    /// TOML of the resolved configuration without machine-specific values
    /// (the output directory).
    pub fn to_portable_toml(&self) -> String {
        let mut c = self.clone();
        c.output.dir = PathBuf::from(".");
        toml::to_string(&c).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = PipelineConfig::parse("").unwrap().resolve().unwrap();
        assert_eq!(c.bracket.evs, vec![-6.0, -3.0, 0.0, 3.0, 6.0]);
        assert_eq!(c.scene.frame_count, Some(2341));
        assert_eq!(c.fuse.mode, FuseMode::Debevec);
        assert_eq!(c.events.contrast_threshold, 0.2);
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = PipelineConfig::parse("[bracket]\nevz = [0.0]\n").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(e.to_string().contains("evz"), "{e}");
        let e = PipelineConfig::parse("[align]\nlambda = 1.0\n").unwrap_err();
        assert!(e.to_string().contains("lambda"), "{e}");
        let e = PipelineConfig::parse("colour = 1\n").unwrap_err();
        assert!(e.to_string().contains("colour"), "{e}");
    }

    #[test]
    fn seeds_derive_from_global_unless_explicit() {
        let a = PipelineConfig::parse("seed = 1").unwrap().resolve().unwrap();
        let b = PipelineConfig::parse("seed = 2").unwrap().resolve().unwrap();
        assert_ne!(a.bracket.seed, b.bracket.seed);
        assert_ne!(a.scene.seed, b.scene.seed);
        let c = PipelineConfig::parse("seed = 2\n[bracket]\nseed = 5\n")
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(c.bracket.seed, 5);
    }

    #[test]
    fn overrides_win() {
        let mut c = PipelineConfig::parse("[fuse]\nmu = 10.0\n").unwrap();
        c.apply(&Overrides {
            mu: Some(20.0),
            fuse_mode: Some(FuseMode::Mertens),
            lambda_ev: Some(0.0),
            ..Default::default()
        });
        assert_eq!(c.fuse.mu, 20.0);
        assert_eq!(c.fuse.mode, FuseMode::Mertens);
        assert_eq!(c.align.lambda_ev, 0.0);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            "[events]\ncontrast_threshold = 0.0\n",
            "[scene]\nalpha_smooth = 2.0\n",
            "[bracket]\nevs = [-3.0, 3.0]\n",
            "[scene]\nframe_count = 10\n",
            "[fuse]\nmode = \"median\"\n",
        ] {
            let r = PipelineConfig::parse(text).and_then(|c| c.resolve());
            assert!(matches!(r, Err(Error::Config(_))), "{text}: {r:?}");
        }
    }

    #[test]
    fn portable_toml_round_trips() {
        let c = PipelineConfig::parse("seed = 3").unwrap().resolve().unwrap();
        let text = c.to_portable_toml();
        assert!(!text.contains("eshdr-out"));
        let back = PipelineConfig::parse(&text).unwrap().resolve().unwrap();
        assert_eq!(back.bracket, c.bracket);
        assert_eq!(back.scene, c.scene);
    }
}
