use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Serialize;
use somtom::evalkit::{corpus_precision, horizon_frames, read_annotations, CorpusPrecision};
use somtom::tracking::load_external_traces;

use crate::error::{CliError, Result};
use crate::run::{to_pretty_json, RunContext};

pub struct EvalArgs {
    pub traces: Vec<PathBuf>,
    pub annotations: Vec<PathBuf>,
    pub horizon_frames: Option<usize>,
    pub per_clip: bool,
}

#[derive(Serialize)]
struct Report<'a> {
    config_hash: &'a str,
    horizon_frames: usize,
    precision: f64,
    n_traces: usize,
    n_hits: usize,
    clip_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_clip: Option<Vec<ClipRow>>,
}

#[derive(Serialize)]
struct ClipRow {
    traces: String,
    annotations: String,
    precision: Option<f64>,
    n_traces: usize,
    n_hits: usize,
}

fn load_annotations(path: &Path) -> Result<Vec<somtom::evalkit::BoxAnnotation>> {
    let f = fs::File::open(path).map_err(|e| CliError::file(path, e))?;
    Ok(read_annotations(BufReader::new(f))?)
}

pub fn run(ctx: &RunContext, args: &EvalArgs) -> Result<()> {
    if args.traces.len() != args.annotations.len() {
        return Err(CliError::Config(format!(
            "{} trace files but {} annotation files",
            args.traces.len(),
            args.annotations.len()
        )));
    }
    let horizon = match args.horizon_frames {
        Some(h) => h,
        None => horizon_frames(ctx.cfg.eval.horizon_s, ctx.cfg.eval.fps)?,
    };
    let clips = args
        .traces
        .iter()
        .zip(&args.annotations)
        .map(|(t, a)| Ok((load_external_traces(t)?, load_annotations(a)?)))
        .collect::<Result<Vec<_>>>()?;
    let CorpusPrecision {
        pooled,
        clip_mean,
        per_clip,
    } = corpus_precision(&clips, horizon)?;

    let rows = args.per_clip.then(|| {
        per_clip
            .iter()
            .zip(args.traces.iter().zip(&args.annotations))
            .map(|(r, (t, a))| ClipRow {
                traces: t.display().to_string(),
                annotations: a.display().to_string(),
                precision: r.map(|r| r.precision),
                n_traces: r.map_or(0, |r| r.n_traces),
                n_hits: r.map_or(0, |r| r.n_hits),
            })
            .collect()
    });
    let report = Report {
        config_hash: &ctx.config_hash,
        horizon_frames: horizon,
        precision: pooled.precision,
        n_traces: pooled.n_traces,
        n_hits: pooled.n_hits,
        clip_mean,
        per_clip: rows,
    };
    ctx.write_output("precision.json", &to_pretty_json(&report))?;
    println!(
        "eval-traces: precision {:.4} ({} / {} traces, horizon {} frames)",
        pooled.precision, pooled.n_hits, pooled.n_traces, horizon
    );
    Ok(())
}
