//! Grid-seeded point tracking.
//!
//! Trackers implement [`PointTracker`]. [`LkTracker`] is the built-in
//! classical tracker; [`ExternalTraces`] passes precomputed traces (for
//! example from a neural tracker) through the same interface.

mod lk;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ImageDims, Point2, Trace};

use lk::{track_point, Pyramid, Scratch};

/// Frames tracked per window before the tracker restarts from current positions.
pub const DEFAULT_WINDOW_FRAMES: usize = 64;

/// An ordered run of 8-bit luma frames sharing one size.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    frames: Vec<GrayImage>,
    fps: f64,
    first_color: Option<RgbImage>,
}

impl FrameSequence {
    pub fn new(frames: Vec<GrayImage>, fps: f64) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::validation(format!(
                "frame sequence needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::validation(format!("fps must be positive, got {fps}")));
        }
        let (w, h) = frames[0].dimensions();
        if w == 0 || h == 0 {
            return Err(Error::validation("frames must be non-empty"));
        }
        if let Some(i) = frames.iter().position(|f| f.dimensions() != (w, h)) {
            return Err(Error::validation(format!(
                "frame {i} is {:?}, expected {:?}",
                frames[i].dimensions(),
                (w, h)
            )));
        }
        Ok(Self {
            frames,
            fps,
            first_color: None,
        })
    }

    /// Attaches the color version of frame 0, used when rendering marks.
    pub fn with_color_first_frame(mut self, rgb: RgbImage) -> Result<Self> {
        if rgb.dimensions() != self.frames[0].dimensions() {
            return Err(Error::validation("color frame size differs from sequence"));
        }
        self.first_color = Some(rgb);
        Ok(self)
    }

    pub fn frames(&self) -> &[GrayImage] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn dims(&self) -> ImageDims {
        let (w, h) = self.frames[0].dimensions();
        ImageDims::new(w, h)
    }

    /// The color first frame if attached, otherwise the luma frame as gray RGB.
    pub fn first_frame_rgb(&self) -> RgbImage {
        self.first_color.clone().unwrap_or_else(|| {
            let f = &self.frames[0];
            RgbImage::from_fn(f.width(), f.height(), |x, y| {
                let v = f.get_pixel(x, y).0[0];
                image::Rgb([v, v, v])
            })
        })
    }

    /// Loads PNG/PGM frames from a directory in lexicographic order.
    ///
    /// `fps` falls back to a `meta.json` sidecar (`{"fps": 30}`) and then to
    /// `default_fps`. `range` selects a half-open frame interval.
    pub fn load_dir(
        dir: impl AsRef<Path>,
        range: Option<(usize, usize)>,
        default_fps: f64,
    ) -> Result<Self> {
        let dir = dir.as_ref();
        let (files, fps) = list_frames(dir, default_fps)?;
        let (start, end) = range.unwrap_or((0, files.len()));
        if start >= end || end > files.len() {
            return Err(Error::validation(format!(
                "frame range {start}..{end} invalid for {} frames in {}",
                files.len(),
                dir.display()
            )));
        }
        let mut frames = Vec::with_capacity(end - start);
        let mut first_color = None;
        for (i, path) in files[start..end].iter().enumerate() {
            let rgb = image::open(path)?.to_rgb8();
            frames.push(luma601(&rgb));
            if i == 0 {
                first_color = Some(rgb);
            }
        }
        let seq = Self::new(frames, fps)?;
        match first_color {
            Some(rgb) => seq.with_color_first_frame(rgb),
            None => Ok(seq),
        }
    }
}

#[derive(Deserialize)]
struct FrameMeta {
    fps: f64,
}

/// Sorted frame files of a directory and its frame rate.
pub fn list_frames(dir: &Path, default_fps: f64) -> Result<(Vec<std::path::PathBuf>, f64)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::file(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("png" | "pgm")
            )
        })
        .collect();
    files.sort();
    let meta = dir.join("meta.json");
    let fps = if meta.exists() {
        let text = fs::read_to_string(&meta).map_err(|e| Error::file(&meta, e))?;
        serde_json::from_str::<FrameMeta>(&text)?.fps
    } else {
        default_fps
    };
    Ok((files, fps))
}

/// ITU-R BT.601 luma.
pub fn luma601(rgb: &RgbImage) -> GrayImage {
    GrayImage::from_fn(rgb.width(), rgb.height(), |x, y| {
        let [r, g, b] = rgb.get_pixel(x, y).0;
        let v = (299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000;
        image::Luma([v as u8])
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Seeds per axis; `grid_size^2` traces are produced.
    pub grid_size: usize,
    pub pyramid_levels: usize,
    /// Odd window side in pixels.
    pub window: usize,
    pub max_iters: usize,
    /// Forward-backward error (px) above which a step is flagged occluded.
    pub fb_threshold: f64,
    pub window_frames: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            grid_size: 15,
            pyramid_levels: 3,
            window: 21,
            max_iters: 30,
            fb_threshold: 1.5,
            window_frames: DEFAULT_WINDOW_FRAMES,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 {
            return Err(Error::validation("grid size must be >= 2"));
        }
        if self.window.is_multiple_of(2) || self.window < 3 {
            return Err(Error::validation(format!(
                "window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if self.pyramid_levels == 0 || self.max_iters == 0 || self.window_frames < 2 {
            return Err(Error::validation(
                "pyramid levels, iterations and window frames must be positive",
            ));
        }
        if !(self.fb_threshold > 0.0) {
            return Err(Error::validation("fb threshold must be positive"));
        }
        Ok(())
    }
}

/// `s * s` cell centers of an even partition, row-major, normalized.
pub fn seed_grid(dims: ImageDims, s: usize) -> Result<Vec<Point2>> {
    if s < 2 {
        return Err(Error::validation(format!("grid size {s} < 2")));
    }
    if (dims.width as usize) < s || (dims.height as usize) < s {
        return Err(Error::validation(format!(
            "image {}x{} smaller than grid {s}",
            dims.width, dims.height
        )));
    }
    let c = |i: usize| (i as f64 + 0.5) / s as f64;
    Ok((0..s)
        .flat_map(|row| (0..s).map(move |col| Point2::raw(c(col), c(row))))
        .collect())
}

/// A source of grid-seeded traces for a clip.
pub trait PointTracker: Sync {
    /// Returns `grid_size^2` traces, one per seed in [`seed_grid`] order,
    /// each as long as the sequence.
    fn track(&self, seq: &FrameSequence, grid_size: usize) -> Result<Vec<Trace>>;
}

/// Pyramidal Lucas-Kanade tracker.
#[derive(Debug, Clone, Default)]
pub struct LkTracker {
    cfg: TrackerConfig,
}

impl LkTracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Tracks arbitrary seed points through the sequence.
    pub fn track_points(&self, seq: &FrameSequence, seeds: &[Point2]) -> Result<Vec<Trace>> {
        let dims = seq.dims();
        let n_frames = seq.len();
        let mut pos: Vec<(f64, f64)> = seeds.iter().map(|p| p.to_pixels(dims)).collect();
        let mut lost: Vec<bool> = seeds.iter().map(|p| !p.in_frame()).collect();
        let mut points: Vec<Vec<Point2>> = seeds
            .iter()
            .map(|p| {
                let mut v = Vec::with_capacity(n_frames);
                v.push(*p);
                v
            })
            .collect();
        let mut occluded: Vec<Vec<bool>> = lost
            .iter()
            .map(|&e| {
                let mut v = Vec::with_capacity(n_frames);
                v.push(e);
                v
            })
            .collect();

        // Windows overlap by one frame; each restarts from the positions
        // reached at its first frame. Pyramids are built once per frame.
        let mut scratch = Scratch::default();
        let mut start = 0;
        while start + 1 < n_frames {
            let end = (start + self.cfg.window_frames).min(n_frames);
            let mut prev = Pyramid::build(&seq.frames()[start], self.cfg.pyramid_levels);
            for f in start + 1..end {
                let next = Pyramid::build(&seq.frames()[f], self.cfg.pyramid_levels);
                for k in 0..seeds.len() {
                    let (p, occ) = if lost[k] {
                        (pos[k], true)
                    } else {
                        self.step(&prev, &next, pos[k], dims, &mut scratch, &mut lost[k])
                    };
                    pos[k] = p;
                    points[k].push(Point2::from_pixels(p.0, p.1, dims));
                    occluded[k].push(occ);
                }
                prev = next;
            }
            start = end - 1;
        }

        points
            .into_iter()
            .zip(occluded)
            .enumerate()
            .map(|(k, (pts, occ))| Trace::new(pts, occ, k))
            .collect()
    }

    /// One frame step for one point in pixel coordinates. A point that
    /// leaves the frame or fails the forward-backward check is lost: it
    /// stays occluded at its last position for the rest of the clip.
    fn step(
        &self,
        prev: &Pyramid,
        next: &Pyramid,
        p: (f64, f64),
        dims: ImageDims,
        scratch: &mut Scratch,
        lost: &mut bool,
    ) -> ((f64, f64), bool) {
        // Array coordinates put pixel centers on integers.
        let a = (p.0 - 0.5, p.1 - 0.5);
        let Some(fwd) = track_point(prev, next, a, &self.cfg, scratch) else {
            *lost = true;
            return (p, true);
        };
        let fwd_px = (fwd.0 + 0.5, fwd.1 + 0.5);
        if !(0.0..=dims.w()).contains(&fwd_px.0) || !(0.0..=dims.h()).contains(&fwd_px.1) {
            *lost = true;
            return (fwd_px, true);
        }
        let consistent = track_point(next, prev, fwd, &self.cfg, scratch)
            .is_some_and(|back| (back.0 - a.0).hypot(back.1 - a.1) <= self.cfg.fb_threshold);
        if !consistent {
            *lost = true;
            return (p, true);
        }
        (fwd_px, false)
    }
}

impl PointTracker for LkTracker {
    fn track(&self, seq: &FrameSequence, grid_size: usize) -> Result<Vec<Trace>> {
        let seeds = seed_grid(seq.dims(), grid_size)?;
        self.track_points(seq, &seeds)
    }
}

/// Traces computed elsewhere, replayed through the tracker interface.
#[derive(Debug, Clone)]
pub struct ExternalTraces {
    traces: Vec<Trace>,
}

impl ExternalTraces {
    pub fn new(traces: Vec<Trace>) -> Self {
        Self { traces }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_external_traces(path).map(Self::new)
    }
}

impl PointTracker for ExternalTraces {
    fn track(&self, seq: &FrameSequence, grid_size: usize) -> Result<Vec<Trace>> {
        let want = grid_size * grid_size;
        if self.traces.len() != want {
            return Err(Error::validation(format!(
                "{} external traces, grid needs {want}",
                self.traces.len()
            )));
        }
        if let Some(t) = self.traces.iter().find(|t| t.len() != seq.len()) {
            return Err(Error::validation(format!(
                "external trace {} has length {}, clip has {} frames",
                t.seed_index(),
                t.len(),
                seq.len()
            )));
        }
        Ok(self.traces.clone())
    }
}

/// Parses a trace JSONL file (one trace object per line, blank lines skipped).
pub fn load_external_traces(path: impl AsRef<Path>) -> Result<Vec<Trace>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    read_traces(BufReader::new(file))
}

pub fn read_traces(reader: impl BufRead) -> Result<Vec<Trace>> {
    let mut traces: Vec<Trace> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Trace = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Some(first) = traces.first() {
            if first.len() != t.len() {
                return Err(Error::validation(format!(
                    "line {}: trace length {} differs from {}",
                    i + 1,
                    t.len(),
                    first.len()
                )));
            }
        }
        traces.push(t);
    }
    Ok(traces)
}

pub fn write_traces(mut w: impl Write, traces: &[Trace]) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
