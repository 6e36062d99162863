use std::fs;

use serde_json::json;
use somtom::codec::encode_grounding;
use somtom::som::apply_som;
use somtom::BBox;

use crate::error::{CliError, Result};
use crate::manifest::{DatasetManifest, Record, UiImageRecord};
use crate::run::{count, png_bytes, to_jsonl, to_pretty_json, Processed, RecordWriter, RunContext, Status};

fn process(r: &UiImageRecord, w: &mut RecordWriter) -> Result<Processed> {
    let img = image::open(&r.image)
        .map_err(|source| CliError::Image {
            path: r.image.clone(),
            source,
        })?
        .to_rgb8();
    let text = fs::read_to_string(&r.boxes).map_err(|e| CliError::file(&r.boxes, e))?;
    let boxes: Vec<BBox> = serde_json::from_str(&text).map_err(|e| CliError::json(&r.boxes, e))?;
    let som = apply_som(&img, &boxes, &r.id)?;
    let tokens = r
        .actions
        .iter()
        .map(|a| encode_grounding(a, &som.marks))
        .collect::<somtom::Result<Vec<_>>>()?;

    w.write("marked.png", &png_bytes(&som.raster)?)?;
    w.write("marks.json", &to_pretty_json(&som.marks))?;
    w.write("tokens.jsonl", &to_jsonl(&tokens))?;
    Ok(Processed::done(json!({
        "marks": som.marks.len(),
        "tokens": tokens.len(),
        "degraded_labels": som.warnings.len(),
    })))
}

pub fn run(ctx: &RunContext, manifest: &DatasetManifest) -> Result<()> {
    let records = manifest.only("ui-image", |r| match r {
        Record::UiImage(u) => Some(u),
        _ => None,
    })?;
    let outcomes = ctx.run_records(&records, |r| r.id.clone(), |r, w| process(r, w));

    let mut tokens = Vec::new();
    for o in &outcomes {
        if let Some(bytes) = ctx.read_artifact(o, "tokens.jsonl")? {
            tokens.extend(bytes);
        }
    }
    ctx.write_output("tokens.jsonl", &tokens)?;

    let total = |key: &str| -> u64 { outcomes.iter().filter_map(|o| o.stats[key].as_u64()).sum() };
    let summary = json!({
        "records": outcomes.len(),
        "marked": count(&outcomes, Status::Done),
        "failed": count(&outcomes, Status::Failed),
        "marks": total("marks"),
        "tokens": total("tokens"),
        "degraded_labels": total("degraded_labels"),
    });
    println!(
        "som-ui: {} marked, {} failed, {} token records",
        summary["marked"], summary["failed"], summary["tokens"]
    );
    ctx.finish("som-ui", &outcomes, summary)
}
