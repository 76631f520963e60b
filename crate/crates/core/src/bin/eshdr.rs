use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eshdr::config::{FuseMode, Overrides, PipelineConfig};
use eshdr::pipeline;
use eshdr::{Error, Result};

#[derive(Parser)]
#[command(name = "eshdr", version, about = "Event-assisted bracketed HDR simulation and reconstruction")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    lambda_ev: Option<f64>,
    #[arg(long, global = true)]
    mu: Option<f64>,
    #[arg(long, global = true)]
    contrast_threshold: Option<f64>,
    #[arg(long, global = true, value_parser = parse_mode)]
    fuse_mode: Option<FuseMode>,
}

fn parse_mode(s: &str) -> std::result::Result<FuseMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Render the high-rate HDR sequence into `scene/`.
    SimulateScene,
    /// Capture the blurred, noisy 8-bit bracket into `bracket/`.
    Degrade,
    /// Simulate events from the rendered sequence into `events/`.
    SimulateEvents,
    /// Deblur each exposure with its events into `deblur/`.
    Deblur,
    /// Align deblurred exposures to the 0 EV reference into `align/`.
    Align,
    /// Merge the aligned exposures into `fuse/`.
    Fuse,
    /// Tone map the merged result into `tonemap/`.
    Tonemap,
    /// Score a run directory, or compare two image files.
    Evaluate {
        /// Image to score (PFM, PPM or PGM); needs a second one.
        a: Option<PathBuf>,
        /// Reference image. HDR metrics are normalized by its peak.
        b: Option<PathBuf>,
        /// Print JSON instead of `key: value` lines.
        #[arg(long)]
        json: bool,
    },
    /// Run every stage and write `manifest.toml`.
    Pipeline,
}

fn load_config(g: &GlobalArgs) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(path) => {
            let mut c = PipelineConfig::load(path)?;
            if let Some(dir) = path.parent() {
                c.rebase_paths(dir);
            }
            c
        }
        None => PipelineConfig::default(),
    };
    cfg.apply(&Overrides {
        out: g.out.clone(),
        seed: g.seed,
        lambda_ev: g.lambda_ev,
        mu: g.mu,
        contrast_threshold: g.contrast_threshold,
        fuse_mode: g.fuse_mode,
    });
    cfg.resolve()
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    if let Command::Evaluate { a: Some(a), b, json } = &cli.command {
        let b = b
            .as_ref()
            .ok_or_else(|| Error::Config("evaluate needs two files to compare".into()))?;
        let mu = cli.global.mu.unwrap_or(eshdr::transfer::DEFAULT_MU);
        let report = pipeline::evaluate_files(a, b, mu)?;
        print!("{}", if *json { report.to_json() + "\n" } else { report.to_text() });
        return Ok(());
    }
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::SimulateScene => {
            pipeline::simulate_scene(&cfg)?;
        }
        Command::Degrade => {
            pipeline::degrade(&cfg)?;
        }
        Command::SimulateEvents => {
            pipeline::simulate_events_stage(&cfg)?;
        }
        Command::Deblur => {
            pipeline::deblur(&cfg)?;
        }
        Command::Align => {
            pipeline::align(&cfg)?;
        }
        Command::Fuse => {
            pipeline::fuse(&cfg)?;
        }
        Command::Tonemap => pipeline::tonemap(&cfg)?,
        Command::Evaluate { json, .. } => {
            let report = pipeline::evaluate(&cfg)?;
            print!("{}", if json { report.to_json() + "\n" } else { report.to_text() });
        }
        Command::Pipeline => {
            let summary = pipeline::run_pipeline(&cfg)?;
            print!("{}", summary.metrics.to_text());
            eprintln!("manifest: {}", summary.manifest_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ESHDR_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("eshdr: {} error: {e}", e.category());
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
