use std::collections::HashSet;
use std::fs;
use std::io::BufReader;

use serde_json::json;
use somtom::segmentation::{filter_by_similarity, read_scores, Clip, Segment, ShotDetector};
use somtom::tracking::{list_frames, luma601};

use crate::error::{CliError, Result};
use crate::manifest::{ClipEntry, DatasetManifest, Record, VideoRecord};
use crate::run::{count, to_jsonl, Processed, RecordWriter, RunContext, Status};

fn detect(ctx: &RunContext, v: &VideoRecord, w: &mut RecordWriter) -> Result<Processed> {
    let (files, meta_fps) = list_frames(&v.frames, ctx.cfg.segmentation.default_fps)?;
    let fps = v.fps.unwrap_or(meta_fps);
    let segments = if v.segments.is_empty() {
        vec![Segment::new(&v.id, 0, files.len(), "")?]
    } else {
        v.segments
            .iter()
            .map(|s| Segment::new(&v.id, s.start, s.end, &s.text))
            .collect::<somtom::Result<Vec<_>>>()?
    };

    let mut entries = Vec::new();
    for seg in &segments {
        if seg.end_frame > files.len() {
            return Err(CliError::Config(format!(
                "segment {} runs past the {} frames in {}",
                seg.id(),
                files.len(),
                v.frames.display()
            )));
        }
        let mut det = ShotDetector::new(ctx.cfg.segmentation.shots)?;
        for path in &files[seg.start_frame..seg.end_frame] {
            let rgb = image::open(path)
                .map_err(|source| CliError::Image {
                    path: path.clone(),
                    source,
                })?
                .to_rgb8();
            det.push(&luma601(&rgb))?;
        }
        entries.extend(det.finish(seg)?.into_iter().map(|clip| ClipEntry {
            clip,
            frames: v.frames.clone(),
            fps: Some(fps),
            traces: None,
        }));
    }
    w.write("clips.jsonl", &to_jsonl(&entries))?;
    Ok(Processed::done(json!({
        "segments": segments.len(),
        "clips": entries.len(),
    })))
}

pub fn run(ctx: &RunContext, manifest: &DatasetManifest) -> Result<()> {
    let videos = manifest.only("video-clip", |r| match r {
        Record::VideoClip(v) => Some(v),
        _ => None,
    })?;
    let scores = match &ctx.cfg.segmentation.scores {
        Some(p) => {
            let f = fs::File::open(p)
                .map_err(|e| CliError::Config(format!("score file {}: {e}", p.display())))?;
            Some(read_scores(BufReader::new(f))?)
        }
        None => None,
    };

    let outcomes = ctx.run_records(&videos, |v| v.id.clone(), |v, w| detect(ctx, v, w));
    let mut entries: Vec<ClipEntry> = Vec::new();
    for o in &outcomes {
        if let Some(bytes) = ctx.read_artifact(o, "clips.jsonl")? {
            for line in bytes.split(|&b| b == b'\n').filter(|l| !l.is_empty()) {
                entries.push(
                    serde_json::from_slice(line).map_err(|e| CliError::json(ctx.record_dir(&o.id), e))?,
                );
            }
        }
    }
    let detected = entries.len();

    if let Some(scores) = &scores {
        let clips: Vec<Clip> = entries.iter().map(|e| e.clip.clone()).collect();
        let kept: HashSet<String> =
            filter_by_similarity(&clips, scores, ctx.cfg.segmentation.similarity_threshold)?
                .into_iter()
                .map(|c| c.id)
                .collect();
        entries.retain(|e| kept.contains(&e.clip.id));
        if entries.is_empty() && detected > 0 {
            log::warn!(
                "no clip reached the similarity threshold {}",
                ctx.cfg.segmentation.similarity_threshold
            );
        }
    }
    ctx.write_output("clips.jsonl", &to_jsonl(&entries))?;

    let summary = json!({
        "videos": outcomes.len(),
        "failed": count(&outcomes, Status::Failed),
        "clips_detected": detected,
        "clips_kept": entries.len(),
        "filtered": scores.is_some(),
    });
    println!(
        "segment: {} videos, {} clips detected, {} kept",
        outcomes.len(),
        detected,
        entries.len()
    );
    ctx.finish("segment", &outcomes, summary)
}
