//! `travgt`: synthesize scenes, generate traversability labels, score label
//! grids and export colored meshes.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod error;
pub mod scene;

use config::Config;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "travgt", version, about = "Traversability ground-truth generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Process only this scan index as keyframe.
    #[arg(long, global = true)]
    pub frame: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Random seed, overriding the configuration and scene.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate scans and a trajectory from a scene file.
    Synth {
        #[arg(long)]
        terrain: Option<PathBuf>,
    },
    /// Build label, feature and mesh artifacts for each keyframe.
    Label,
    /// Score a predicted label grid against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Report path; `<output_dir>/eval.json` by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Color mesh vertices by voxel label.
    Export {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// synth, label and eval in one run. Without `--pred` the generated
    /// labels are scored against themselves as a consistency check.
    Pipeline {
        #[arg(long)]
        terrain: Option<PathBuf>,
        #[arg(long)]
        pred: Option<PathBuf>,
    },
}

pub fn load_config(cli: &Cli) -> Result<Config, CliError> {
    match &cli.config {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

/// Executes the command inside a pool of the requested size.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = load_config(cli)?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    let threads = cli.threads.or(cfg.threads).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::stage("thread pool", e))?;
    pool.install(|| dispatch(cli, &cfg))
}

fn dispatch(cli: &Cli, cfg: &Config) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth { terrain } => {
            let s = commands::synth(cfg, terrain.as_deref())?;
            println!("{} scans, {} poses (seed {})", s.scans, s.poses, s.seed);
        }
        Command::Label => {
            let run = commands::label(cfg, cli.frame)?;
            for (k, p) in &run.frames {
                println!("frame {k}: {}", p.display());
            }
            println!("manifest: {}", run.manifest.display());
        }
        Command::Eval { pred, gt, out } => {
            let out = out.clone().unwrap_or_else(|| cfg.output_dir.join("eval.json"));
            let report = commands::evaluate(pred, gt, &out)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("json values serialize"));
        }
        Command::Export { labels, mesh, out } => {
            let n = commands::export(labels, mesh, out)?;
            println!("{n} vertices -> {}", out.display());
        }
        Command::Pipeline { terrain, pred } => {
            commands::synth(cfg, terrain.as_deref())?;
            let run = commands::label(cfg, cli.frame)?;
            let (_, gt) = run.frames.first().expect("label produces at least one frame");
            let pred = pred.clone().unwrap_or_else(|| gt.clone());
            let report = commands::evaluate(&pred, gt, &cfg.output_dir.join("eval.json"))?;
            println!("{}", serde_json::to_string_pretty(&report).expect("json values serialize"));
        }
    }
    Ok(())
}
