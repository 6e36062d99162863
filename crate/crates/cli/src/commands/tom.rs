use std::path::Path;

use serde_json::json;
use somtom::codec::encode_tom;
use somtom::tracking::{ExternalTraces, LkTracker};
use somtom::{run_tom, FrameSequence, PointTracker};

use crate::error::Result;
use crate::manifest::{load_clips, ClipEntry};
use crate::run::{count, png_bytes, to_jsonl, to_pretty_json, Processed, RecordWriter, RunContext, Status};

fn process(ctx: &RunContext, e: &ClipEntry, w: &mut RecordWriter) -> Result<Processed> {
    let c = &e.clip;
    let seq = FrameSequence::load_dir(
        &e.frames,
        Some((c.start_frame, c.end_frame)),
        e.fps.unwrap_or(ctx.cfg.segmentation.default_fps),
    )?;
    let tracker: Box<dyn PointTracker> = match &e.traces {
        Some(p) => Box::new(ExternalTraces::load(p)?),
        None => Box::new(LkTracker::new(ctx.cfg.tracker)?),
    };
    let mut cfg = ctx.cfg.tom;
    cfg.seed = ctx.cfg.record_seed(&c.id);
    let res = run_tom(&seq, &cfg, tracker.as_ref(), &c.id)?;

    w.write("marked.png", &png_bytes(&res.marked_first_frame)?)?;
    w.write("tom.json", &to_pretty_json(&res))?;
    let stats = json!({
        "traces": res.diagnostics.n_traces,
        "fg_traces": res.fg_traces.len(),
        "global_motion": res.diagnostics.global_motion_detected,
    });
    if !res.has_supervision() {
        return Ok(Processed::skipped("no foreground traces", stats));
    }
    let rec = encode_tom(&c.text, &res.fg_marks, &res.fg_traces, ctx.cfg.codec.trace_points)?;
    w.write("tokens.jsonl", &to_jsonl([&rec]))?;
    Ok(Processed::done(stats))
}

pub fn run(ctx: &RunContext, clips_path: &Path) -> Result<()> {
    let clips = load_clips(clips_path)?;
    let outcomes = ctx.run_records(&clips, |e| e.clip.id.clone(), |e, w| process(ctx, e, w));

    let mut tokens = Vec::new();
    for o in &outcomes {
        if let Some(bytes) = ctx.read_artifact(o, "tokens.jsonl")? {
            tokens.extend(bytes);
        }
    }
    ctx.write_output("tokens.jsonl", &tokens)?;

    let records = count(&outcomes, Status::Done);
    let processed: Vec<_> = outcomes.iter().filter(|o| o.status != Status::Failed).collect();
    let rate = |n: usize| {
        if processed.is_empty() {
            0.0
        } else {
            n as f64 / processed.len() as f64
        }
    };
    let moving = processed
        .iter()
        .filter(|o| o.stats["global_motion"].as_bool() == Some(true))
        .count();
    let fg: u64 = processed.iter().filter_map(|o| o.stats["fg_traces"].as_u64()).sum();
    let all: u64 = processed.iter().filter_map(|o| o.stats["traces"].as_u64()).sum();
    let summary = json!({
        "clips": outcomes.len(),
        "records": records,
        "skipped_no_foreground": count(&outcomes, Status::Skipped),
        "failed": count(&outcomes, Status::Failed),
        "supervision_yield": rate(records),
        "global_motion_rate": rate(moving),
        "fg_trace_yield": if all == 0 { 0.0 } else { fg as f64 / all as f64 },
    });
    println!(
        "tom: {} clips, {} records ({:.1}% yield), {} failed",
        outcomes.len(),
        records,
        100.0 * rate(records),
        summary["failed"]
    );
    ctx.finish("tom", &outcomes, summary)
}
