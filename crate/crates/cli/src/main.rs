#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod manifest;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{PipelineConfig, Stage};
use crate::error::Result;
use crate::manifest::DatasetManifest;
use crate::run::RunContext;

#[derive(Parser, Debug)]
#[command(name = "somtom", version, about = "Mark-grounded supervision extraction pipeline")]
struct Cli {
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true, env = "SOMTOM_SEED")]
    seed: Option<u64>,

    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, env = "SOMTOM_WORKERS")]
    workers: Option<usize>,

    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Largest tolerated fraction of failed records.
    #[arg(long, global = true)]
    fail_budget: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw numbered marks on UI screenshots and serialize their actions.
    SomUi { manifest: PathBuf },
    /// Split annotated videos into shots and optionally filter by score.
    Segment {
        manifest: PathBuf,
        /// Clip similarity scores (JSONL or CSV); enables filtering.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Extract trace supervision from a clip manifest.
    Tom { clips: PathBuf },
    /// Tokenize robot trajectories.
    EncodeRobot {
        manifest: PathBuf,
        /// Reuse these action statistics instead of fitting them.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Score traces against box annotations, pairing files in order.
    EvalTraces {
        #[arg(long, required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, required = true)]
        annotations: Vec<PathBuf>,
        #[arg(long)]
        horizon_frames: Option<usize>,
        #[arg(long)]
        per_clip: bool,
    },
    /// Check the configuration and a manifest.
    Validate { manifest: PathBuf },
}

impl Command {
    fn stage(&self) -> Stage {
        match self {
            Command::SomUi { .. } => Stage::SomUi,
            Command::Segment { .. } => Stage::Segment,
            Command::Tom { .. } => Stage::Tom,
            Command::EncodeRobot { .. } => Stage::EncodeRobot,
            Command::EvalTraces { .. } => Stage::EvalTraces,
            Command::Validate { .. } => Stage::Validate,
        }
    }
}

fn build_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.stage = Some(cli.command.stage());
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(b) = cli.fail_budget {
        cfg.fail_budget = b;
    }
    match &cli.command {
        Command::Segment { scores: Some(p), .. } => cfg.segmentation.scores = Some(p.clone()),
        Command::EncodeRobot { stats: Some(p), .. } => cfg.codec.stats = Some(p.clone()),
        _ => {}
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = build_config(&cli)?;
    if let Command::Validate { manifest } = &cli.command {
        return commands::validate::run(&cfg, manifest);
    }
    let ctx = RunContext::new(cfg)?;
    match cli.command {
        Command::SomUi { manifest } => commands::som_ui::run(&ctx, &DatasetManifest::load(&manifest)?),
        Command::Segment { manifest, .. } => {
            commands::segment::run(&ctx, &DatasetManifest::load(&manifest)?)
        }
        Command::Tom { clips } => commands::tom::run(&ctx, &clips),
        Command::EncodeRobot { manifest, .. } => {
            commands::robot::run(&ctx, &DatasetManifest::load(&manifest)?)
        }
        Command::EvalTraces {
            traces,
            annotations,
            horizon_frames,
            per_clip,
        } => commands::eval::run(
            &ctx,
            &commands::eval::EvalArgs {
                traces,
                annotations,
                horizon_frames,
                per_clip,
            },
        ),
        Command::Validate { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
