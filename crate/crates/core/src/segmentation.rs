//! Shot-consistent clip splitting and similarity-score filtering.
//!
//! Frame ranges are half-open: a segment `[start, end)` covers
//! `end - start` frames.

use std::collections::HashMap;
use std::io::BufRead;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tracking::FrameSequence;

/// Side of the block grid the luma is reduced to before differencing.
pub const BLOCK_GRID: u32 = 16;
pub const DEFAULT_SHOT_THRESHOLD: f64 = 27.0;
pub const DEFAULT_MIN_CLIP_FRAMES: usize = 12;
pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    #[serde(rename = "video")]
    pub video_id: String,
    #[serde(rename = "start")]
    pub start_frame: usize,
    #[serde(rename = "end")]
    pub end_frame: usize,
    #[serde(default)]
    pub text: String,
}

impl Segment {
    pub fn new(
        video_id: impl Into<String>,
        start_frame: usize,
        end_frame: usize,
        text: impl Into<String>,
    ) -> Result<Self> {
        let s = Self {
            video_id: video_id.into(),
            start_frame,
            end_frame,
            text: text.into(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.start_frame >= self.end_frame {
            return Err(Error::validation(format!(
                "segment {}: start {} must be < end {}",
                self.video_id, self.start_frame, self.end_frame
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn id(&self) -> String {
        format!("{}:{}-{}", self.video_id, self.start_frame, self.end_frame)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    #[serde(rename = "clip")]
    pub id: String,
    #[serde(rename = "segment")]
    pub segment_ref: String,
    #[serde(rename = "video")]
    pub video_id: String,
    #[serde(rename = "start")]
    pub start_frame: usize,
    #[serde(rename = "end")]
    pub end_frame: usize,
    pub text: String,
    /// Change score of each consecutive frame pair inside the clip.
    #[serde(rename = "shot_scores")]
    pub shot_score_trace: Vec<f64>,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShotParams {
    pub threshold: f64,
    pub min_len: usize,
}

impl Default for ShotParams {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_SHOT_THRESHOLD,
            min_len: DEFAULT_MIN_CLIP_FRAMES,
        }
    }
}

impl ShotParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0) {
            return Err(Error::validation("shot threshold must be >= 0"));
        }
        if self.min_len == 0 {
            return Err(Error::validation("min_len must be >= 1"));
        }
        Ok(())
    }
}

/// Block-mean luma on a `BLOCK_GRID` x `BLOCK_GRID` grid, row-major.
pub fn block_means(frame: &GrayImage) -> Vec<f64> {
    let (w, h) = frame.dimensions();
    let g = BLOCK_GRID as u64;
    let mut out = Vec::with_capacity((g * g) as usize);
    for by in 0..g {
        let y0 = (by * h as u64 / g) as u32;
        let y1 = (((by + 1) * h as u64 / g) as u32).max(y0 + 1);
        for bx in 0..g {
            let x0 = (bx * w as u64 / g) as u32;
            let x1 = (((bx + 1) * w as u64 / g) as u32).max(x0 + 1);
            let mut sum = 0u64;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += frame.get_pixel(x, y)[0] as u64;
                }
            }
            let n = (y1 - y0) as u64 * (x1 - x0) as u64;
            out.push(sum as f64 / n as f64);
        }
    }
    out
}

/// Mean absolute difference of two block-mean vectors, 0..=255.
pub fn change_score(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Streaming content-change detector; holds one reduced frame at a time.
#[derive(Debug, Clone)]
pub struct ShotDetector {
    params: ShotParams,
    dims: Option<(u32, u32)>,
    prev: Option<Vec<f64>>,
    frames: usize,
    scores: Vec<f64>,
    cuts: Vec<usize>,
}

impl ShotDetector {
    pub fn new(params: ShotParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            dims: None,
            prev: None,
            frames: 0,
            scores: Vec::new(),
            cuts: Vec::new(),
        })
    }

    pub fn push(&mut self, frame: &GrayImage) -> Result<()> {
        let d = frame.dimensions();
        if d.0 == 0 || d.1 == 0 {
            return Err(Error::validation("empty frame"));
        }
        match self.dims {
            None => self.dims = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::validation(format!(
                    "frame {} is {}x{}, expected {}x{}",
                    self.frames, d.0, d.1, prev.0, prev.1
                )))
            }
            _ => {}
        }
        let cur = block_means(frame);
        if let Some(prev) = &self.prev {
            let score = change_score(prev, &cur);
            self.scores.push(score);
            let last = self.cuts.last().copied().unwrap_or(0);
            if score > self.params.threshold && self.frames - last >= self.params.min_len {
                self.cuts.push(self.frames);
            }
        }
        self.prev = Some(cur);
        self.frames += 1;
        Ok(())
    }

    pub fn frames_seen(&self) -> usize {
        self.frames
    }

    /// Emits clips covering the segment; a tail shorter than `min_len`
    /// is merged into the preceding clip.
    pub fn finish(mut self, segment: &Segment) -> Result<Vec<Clip>> {
        segment.validate()?;
        if self.frames != segment.len() {
            return Err(Error::validation(format!(
                "segment {} spans {} frames but {} were pushed",
                segment.id(),
                segment.len(),
                self.frames
            )));
        }
        if self.frames < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: self.frames,
            });
        }
        if let Some(&last) = self.cuts.last() {
            if self.frames - last < self.params.min_len {
                self.cuts.pop();
            }
        }
        let mut bounds = vec![0];
        bounds.extend(&self.cuts);
        bounds.push(self.frames);
        Ok(bounds
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                let start = segment.start_frame + a;
                let end = segment.start_frame + b;
                Clip {
                    id: format!("{}:{}-{}", segment.video_id, start, end),
                    segment_ref: segment.id(),
                    video_id: segment.video_id.clone(),
                    start_frame: start,
                    end_frame: end,
                    text: segment.text.clone(),
                    shot_score_trace: self.scores[a..b - 1].to_vec(),
                }
            })
            .collect())
    }
}

/// Splits an in-memory segment into shot-consistent clips.
pub fn detect_shots(seq: &FrameSequence, segment: &Segment, params: ShotParams) -> Result<Vec<Clip>> {
    let mut det = ShotDetector::new(params)?;
    for f in seq.frames() {
        det.push(f)?;
    }
    det.finish(segment)
}

/// Keeps clips scoring at least `threshold`, in input order.
pub fn filter_by_similarity(
    clips: &[Clip],
    scores: &HashMap<String, f64>,
    threshold: f64,
) -> Result<Vec<Clip>> {
    let missing: Vec<&str> = clips
        .iter()
        .filter(|c| !scores.contains_key(&c.id))
        .map(|c| c.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::validation(format!(
            "missing similarity score for clips: {}",
            missing.join(", ")
        )));
    }
    Ok(clips
        .iter()
        .filter(|c| scores[&c.id] >= threshold)
        .cloned()
        .collect())
}

#[derive(Deserialize)]
struct ScoreRecord {
    clip: String,
    score: f64,
}

/// Reads clip scores from JSONL (`{"clip": id, "score": s}`) or
/// `id,score` CSV lines. Blank lines and a `clip,score` header are skipped.
pub fn read_scores(reader: impl BufRead) -> Result<HashMap<String, f64>> {
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: i + 1,
            message,
        };
        let (id, score) = if t.starts_with('{') {
            let r: ScoreRecord = serde_json::from_str(t).map_err(|e| parse_err(e.to_string()))?;
            (r.clip, r.score)
        } else {
            let (id, s) = t
                .rsplit_once(',')
                .ok_or_else(|| parse_err("expected `id,score`".into()))?;
            let Ok(score) = s.trim().parse::<f64>() else {
                if i == 0 {
                    continue;
                }
                return Err(parse_err(format!("bad score `{}`", s.trim())));
            };
            (id.trim().to_string(), score)
        };
        if !score.is_finite() {
            return Err(parse_err("score is not finite".into()));
        }
        out.insert(id, score);
    }
    Ok(out)
}

/// Reads a JSONL segment manifest.
pub fn read_segments(reader: impl BufRead) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Segment = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        s.validate().map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(s);
    }
    Ok(out)
}
