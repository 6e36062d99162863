//! Trace-reliability metric and synthetic ground-truth scenes.

mod scene;

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Trace};

pub use scene::{
    render_scene, scene_annotations, scene_ground_truth, texture_value, Camera, GroundTruth, RenderedScene,
    SceneObject, Shape, SyntheticScene,
};

/// Object box at one frame, relative to the clip start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    #[serde(rename = "frame")]
    pub frame_index: usize,
    #[serde(rename = "object")]
    pub object_id: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// False when the object is cut by the frame border and the box was clipped.
    #[serde(default = "default_true")]
    pub visible: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub precision: f64,
    /// Traces that started inside an annotated box.
    pub n_traces: usize,
    pub n_hits: usize,
    pub horizon_frames: usize,
}

/// Frame offset for a horizon in seconds, `round(seconds * fps)`.
pub fn horizon_frames(horizon_s: f64, fps: f64) -> Result<usize> {
    let h = (horizon_s * fps).round();
    if !(h.is_finite() && h >= 0.0) {
        return Err(Error::validation(format!(
            "invalid horizon {horizon_s} s at {fps} fps"
        )));
    }
    Ok(h as usize)
}

/// Fraction of traces starting inside an annotated box at frame 0 whose
/// point `horizon` frames later lies inside the same object's box.
/// Occluded points and missing boxes at the horizon count as misses.
pub fn trace_precision(
    traces: &[Trace],
    annotations: &[BoxAnnotation],
    horizon: usize,
) -> Result<PrecisionReport> {
    let mut by_frame: HashMap<(usize, &str), &BBox> = HashMap::new();
    let mut at_start: Vec<&BoxAnnotation> = Vec::new();
    for a in annotations {
        by_frame.entry((a.frame_index, a.object_id.as_str())).or_insert(&a.bbox);
        if a.frame_index == 0 {
            at_start.push(a);
        }
    }
    let mut n = 0;
    let mut hits = 0;
    for t in traces {
        if horizon >= t.len() {
            return Err(Error::validation(format!(
                "horizon {horizon} exceeds trace {} of length {}",
                t.seed_index(),
                t.len()
            )));
        }
        if t.occluded()[0] {
            continue;
        }
        let Some(obj) = at_start.iter().find(|a| a.bbox.contains(&t.start())) else {
            continue;
        };
        n += 1;
        let p = t.points()[horizon];
        let inside = !t.occluded()[horizon]
            && by_frame
                .get(&(horizon, obj.object_id.as_str()))
                .is_some_and(|b| b.contains(&p));
        hits += inside as usize;
    }
    if n == 0 {
        return Err(Error::UndefinedMetric(
            "no trace starts inside an annotated box".into(),
        ));
    }
    Ok(PrecisionReport {
        precision: hits as f64 / n as f64,
        n_traces: n,
        n_hits: hits,
        horizon_frames: horizon,
    })
}

/// Pooled and per-clip-mean precision over several clips. Clips with no
/// in-box trace are left out of the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusPrecision {
    pub pooled: PrecisionReport,
    pub clip_mean: f64,
    pub per_clip: Vec<Option<PrecisionReport>>,
}

pub fn corpus_precision(
    clips: &[(Vec<Trace>, Vec<BoxAnnotation>)],
    horizon: usize,
) -> Result<CorpusPrecision> {
    let mut per_clip = Vec::with_capacity(clips.len());
    for (traces, ann) in clips {
        match trace_precision(traces, ann, horizon) {
            Ok(r) => per_clip.push(Some(r)),
            Err(Error::UndefinedMetric(_)) => per_clip.push(None),
            Err(e) => return Err(e),
        }
    }
    let defined: Vec<&PrecisionReport> = per_clip.iter().flatten().collect();
    if defined.is_empty() {
        return Err(Error::UndefinedMetric(
            "no clip has a trace inside an annotated box".into(),
        ));
    }
    let n: usize = defined.iter().map(|r| r.n_traces).sum();
    let hits: usize = defined.iter().map(|r| r.n_hits).sum();
    let clip_mean = defined.iter().map(|r| r.precision).sum::<f64>() / defined.len() as f64;
    Ok(CorpusPrecision {
        pooled: PrecisionReport {
            precision: hits as f64 / n as f64,
            n_traces: n,
            n_hits: hits,
            horizon_frames: horizon,
        },
        clip_mean,
        per_clip,
    })
}

pub fn read_annotations(reader: impl BufRead) -> Result<Vec<BoxAnnotation>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_annotations(mut w: impl Write, annotations: &[BoxAnnotation]) -> Result<()> {
    for a in annotations {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ImageDims, Point2};
    use proptest::prelude::*;

    const DIMS: ImageDims = ImageDims::new(100, 100);

    fn ann(frame: usize, obj: &str, x: f64, y: f64, w: f64, h: f64) -> BoxAnnotation {
        BoxAnnotation {
            frame_index: frame,
            object_id: obj.into(),
            bbox: BBox::from_pixels(x, y, w, h, DIMS).unwrap(),
            visible: true,
        }
    }

    fn trace(start: (f64, f64), v: (f64, f64), len: usize, seed: usize) -> Trace {
        Trace::visible(
            (0..len)
                .map(|i| Point2::from_pixels(start.0 + v.0 * i as f64, start.1 + v.1 * i as f64, DIMS))
                .collect(),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn static_boxes_static_traces() {
        let anns: Vec<_> = (0..5).map(|f| ann(f, "a", 10.0, 10.0, 20.0, 20.0)).collect();
        let traces = vec![trace((15.0, 15.0), (0.0, 0.0), 5, 0), trace((25.0, 25.0), (0.0, 0.0), 5, 1)];
        let r = trace_precision(&traces, &anns, 4).unwrap();
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.n_traces, 2);
        assert_eq!(r.horizon_frames, 4);
    }

    #[test]
    fn moving_box() {
        // 10 px box moving right 5 px/frame: after 3 frames it spans [25, 35)
        let anns: Vec<_> = (0..4).map(|f| ann(f, "a", 10.0 + 5.0 * f as f64, 40.0, 10.0, 10.0)).collect();
        let follow: Vec<_> = (0..3).map(|i| trace((12.0 + 3.0 * i as f64, 45.0), (5.0, 0.0), 4, i)).collect();
        assert_eq!(trace_precision(&follow, &anns, 3).unwrap().precision, 1.0);
        let still: Vec<_> = (0..3).map(|i| trace((12.0 + 3.0 * i as f64, 45.0), (0.0, 0.0), 4, i)).collect();
        assert_eq!(trace_precision(&still, &anns, 3).unwrap().precision, 0.0);
    }

    #[test]
    fn outside_traces_ignored_and_occlusion_misses() {
        let anns = vec![ann(0, "a", 0.0, 0.0, 50.0, 50.0), ann(2, "a", 0.0, 0.0, 50.0, 50.0)];
        let inside = trace((10.0, 10.0), (0.0, 0.0), 3, 0);
        let outside = trace((80.0, 80.0), (0.0, 0.0), 3, 1);
        let hidden = Trace::new(inside.points().to_vec(), vec![false, false, true], 2).unwrap();
        let r = trace_precision(&[inside, outside, hidden], &anns, 2).unwrap();
        assert_eq!((r.n_traces, r.n_hits), (2, 1));
    }

    #[test]
    fn missing_box_at_horizon_is_miss() {
        let anns = vec![ann(0, "a", 0.0, 0.0, 50.0, 50.0)];
        let r = trace_precision(&[trace((10.0, 10.0), (0.0, 0.0), 3, 0)], &anns, 2).unwrap();
        assert_eq!(r.precision, 0.0);
    }

    #[test]
    fn undefined_and_invalid() {
        assert!(matches!(
            trace_precision(&[trace((10.0, 10.0), (0.0, 0.0), 3, 0)], &[], 1),
            Err(Error::UndefinedMetric(_))
        ));
        let anns = vec![ann(0, "a", 0.0, 0.0, 50.0, 50.0)];
        assert!(matches!(
            trace_precision(&[trace((10.0, 10.0), (0.0, 0.0), 3, 0)], &anns, 3),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn horizon_rounding() {
        assert_eq!(horizon_frames(1.0, 30.0).unwrap(), 30);
        assert_eq!(horizon_frames(1.0, 29.97).unwrap(), 30);
        assert_eq!(horizon_frames(0.5, 25.0).unwrap(), 13);
        assert!(horizon_frames(-1.0, 30.0).is_err());
    }

    #[test]
    fn corpus_pooling() {
        let anns: Vec<_> = (0..3).map(|f| ann(f, "a", 0.0, 0.0, 50.0, 50.0)).collect();
        let good = trace((10.0, 10.0), (0.0, 0.0), 3, 0);
        let bad = trace((10.0, 10.0), (30.0, 0.0), 3, 1);
        let clips = vec![
            (vec![good.clone()], anns.clone()),
            (vec![good.clone(), bad.clone(), bad.clone()], anns.clone()),
            (vec![trace((90.0, 90.0), (0.0, 0.0), 3, 0)], anns.clone()),
        ];
        let c = corpus_precision(&clips, 2).unwrap();
        assert_eq!(c.pooled.precision, 0.5);
        assert!((c.clip_mean - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!(c.per_clip[2].is_none());
    }

    #[test]
    fn annotation_jsonl() {
        let a = ann(3, "cup", 10.0, 20.0, 30.0, 40.0);
        let mut buf = Vec::new();
        write_annotations(&mut buf, std::slice::from_ref(&a)).unwrap();
        let s = String::from_utf8(buf.clone()).unwrap();
        assert!(s.starts_with("{\"frame\":3,\"object\":\"cup\",\"box\":[0.1,0.2,0.3,0.4]"), "{s}");
        assert_eq!(read_annotations(buf.as_slice()).unwrap(), vec![a]);
        let minimal = read_annotations("{\"frame\":0,\"object\":\"o\",\"box\":[0,0,0.5,0.5]}\n".as_bytes()).unwrap();
        assert!(minimal[0].visible);
    }

    proptest! {
        #[test]
        fn corrupting_more_never_increases(order in Just((0..40usize).collect::<Vec<_>>()).prop_shuffle(), a in 0usize..=40, b in 0usize..=40) {
            let (lo, hi) = (a.min(b), a.max(b));
            let anns: Vec<_> = (0..3).map(|f| ann(f, "a", 0.0, 0.0, 60.0, 60.0)).collect();
            let make = |k: usize| -> Vec<Trace> {
                let corrupt: std::collections::HashSet<_> = order[..k].iter().copied().collect();
                (0..40).map(|i| {
                    let start = (5.0 + (i % 8) as f64 * 6.0, 5.0 + (i / 8) as f64 * 6.0);
                    let v = if corrupt.contains(&i) { (40.0, 40.0) } else { (0.0, 0.0) };
                    trace(start, v, 3, i)
                }).collect()
            };
            let p_lo = trace_precision(&make(lo), &anns, 2).unwrap().precision;
            let p_hi = trace_precision(&make(hi), &anns, 2).unwrap().precision;
            prop_assert!(p_hi <= p_lo);
        }
    }
}
