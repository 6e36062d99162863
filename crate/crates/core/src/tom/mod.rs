//! Trace-of-Mark extraction for video clips and robot episodes.
//!
//! [`run_tom`] tracks a seed grid, removes camera motion when the median
//! trace moves more than `eta` px/step, splits traces into foreground
//! (motion >= `epsilon`) and background, clusters each side, picks one
//! representative per cluster and marks their start points on the first
//! frame. Foreground representatives are the planning targets.

mod kmeans;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};
use crate::geometry::{trace_motion_magnitude, ImageDims, Trace};
use crate::homography::{stabilize_traces, RansacParams, StepDiagnostic};
use crate::som::{apply_som_points, MarkSet, Raster};
use crate::tracking::{FrameSequence, PointTracker};

pub use kmeans::{kmeans, Clustering};

/// Traces occluded on more than this fraction of steps are discarded.
pub const OCCLUSION_DROP_FRACTION: f64 = 0.5;

const BG_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const K_SEED_SALT: u64 = 0x5851_f42d_4c95_7f2d;
const SELECT_SEED_SALT: u64 = 0x1405_7b7e_f767_814f;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TomConfig {
    /// Grid size; `s^2` points are tracked.
    pub s: usize,
    /// Global-motion threshold in px/step.
    pub eta: f64,
    /// Foreground threshold in px/step.
    pub epsilon: f64,
    pub max_fg_clusters: usize,
    pub seed: u64,
    pub deterministic_selection: bool,
    pub ransac_inlier_px: f64,
    pub ransac_max_iters: usize,
}

impl Default for TomConfig {
    fn default() -> Self {
        Self {
            s: 15,
            eta: 2.0,
            epsilon: 2.0,
            max_fg_clusters: 5,
            seed: 0,
            deterministic_selection: true,
            ransac_inlier_px: 3.0,
            ransac_max_iters: 500,
        }
    }
}

impl TomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s < 2 {
            return Err(Error::validation("s must be >= 2"));
        }
        if !(self.eta > 0.0 && self.epsilon > 0.0) {
            return Err(Error::validation("eta and epsilon must be positive"));
        }
        if self.max_fg_clusters == 0 {
            return Err(Error::validation("max_fg_clusters must be >= 1"));
        }
        if !(self.ransac_inlier_px > 0.0) || self.ransac_max_iters == 0 {
            return Err(Error::validation("invalid RANSAC parameters"));
        }
        Ok(())
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        (v[m - 1] + v[m]) / 2.0
    } else {
        v[m]
    })
}

/// True when the median per-trace motion magnitude exceeds `eta` px.
pub fn has_global_motion(traces: &[Trace], eta: f64, dims: ImageDims) -> Result<bool> {
    let mags = traces
        .iter()
        .map(|t| trace_motion_magnitude(t, dims))
        .collect::<Result<Vec<_>>>()?;
    Ok(median(mags).is_some_and(|m| m > eta))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Classified {
    pub foreground: Vec<Trace>,
    pub background: Vec<Trace>,
    pub dropped: usize,
}

/// Splits traces at `epsilon` px/step (foreground inclusive), discarding
/// traces occluded on more than half their steps.
pub fn classify_traces(traces: &[Trace], epsilon: f64, dims: ImageDims) -> Result<Classified> {
    let mut out = Classified::default();
    for t in traces {
        if t.occluded_fraction() > OCCLUSION_DROP_FRACTION {
            out.dropped += 1;
            continue;
        }
        if trace_motion_magnitude(t, dims)? >= epsilon {
            out.foreground.push(t.clone());
        } else {
            out.background.push(t.clone());
        }
    }
    Ok(out)
}

/// Concatenated `(x, y)` per step.
pub fn trace_features(t: &Trace) -> Vec<f64> {
    t.points().iter().flat_map(|p| [p.x, p.y]).collect()
}

/// k-means over trace features.
pub fn kmeans_traces(traces: &[Trace], k: usize, seed: u64) -> Result<Clustering> {
    if let Some(first) = traces.first() {
        if traces.iter().any(|t| t.len() != first.len()) {
            return Err(Error::validation("traces differ in length"));
        }
    }
    let feats: Vec<Vec<f64>> = traces.iter().map(trace_features).collect();
    kmeans(&feats, k, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Member nearest the centroid, ties to the lowest seed index.
    Nearest,
    /// Uniform member from a seeded generator.
    Random,
}

/// One representative trace per cluster, in cluster order.
pub fn select_representatives(
    traces: &[Trace],
    clustering: &Clustering,
    mode: SelectionMode,
    seed: u64,
) -> Result<Vec<Trace>> {
    if clustering.assignments.len() != traces.len() {
        return Err(Error::validation("assignment count differs from trace count"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(clustering.k());
    for (c, centroid) in clustering.centroids.iter().enumerate() {
        let members: Vec<usize> = (0..traces.len())
            .filter(|&i| clustering.assignments[i] == c)
            .collect();
        if members.is_empty() {
            return Err(Error::validation(format!("cluster {c} is empty")));
        }
        let pick = match mode {
            SelectionMode::Nearest => *members
                .iter()
                .min_by(|&&a, &&b| {
                    let da = kmeans::sq_dist(&trace_features(&traces[a]), centroid);
                    let db = kmeans::sq_dist(&trace_features(&traces[b]), centroid);
                    da.total_cmp(&db)
                        .then(traces[a].seed_index().cmp(&traces[b].seed_index()))
                })
                .expect("non-empty"),
            SelectionMode::Random => members[rng.random_range(0..members.len())],
        };
        out.push(traces[pick].clone());
    }
    Ok(out)
}

/// Foreground cluster count: the midpoint of `[1, kmax]` when
/// deterministic, otherwise uniform on `[1, kmax]`.
pub fn choose_k(n_foreground: usize, cfg: &TomConfig) -> usize {
    let kmax = cfg.max_fg_clusters.min(n_foreground);
    if kmax == 0 {
        return 0;
    }
    if cfg.deterministic_selection {
        (1 + kmax).div_ceil(2)
    } else {
        ChaCha8Rng::seed_from_u64(cfg.seed ^ K_SEED_SALT).random_range(1..=kmax)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomDiagnostics {
    pub global_motion_detected: bool,
    pub homography_residuals: Vec<StepDiagnostic>,
    pub n_traces: usize,
    pub n_foreground: usize,
    pub n_background: usize,
    pub n_dropped: usize,
    pub fg_clusters: usize,
    pub bg_clusters: usize,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TomResult {
    #[serde(skip)]
    pub marked_first_frame: Raster,
    /// Labels `1..=k` over the foreground representatives' start points.
    pub fg_marks: MarkSet,
    /// Labels `k+1..=3k` (or fewer) over background representatives.
    pub bg_marks: MarkSet,
    /// Planning targets, aligned with `fg_marks` label order.
    pub fg_traces: Vec<Trace>,
    pub diagnostics: TomDiagnostics,
}

impl TomResult {
    pub fn has_supervision(&self) -> bool {
        !self.fg_traces.is_empty()
    }
}

/// Runs the full extraction on one clip.
pub fn run_tom(
    seq: &FrameSequence,
    cfg: &TomConfig,
    tracker: &dyn PointTracker,
    image_ref: &str,
) -> Result<TomResult> {
    cfg.validate()?;
    let dims = seq.dims();
    let mut traces = tracker.track(seq, cfg.s)?;
    if traces.len() != cfg.s * cfg.s {
        return Err(Error::validation(format!(
            "tracker returned {} traces for a {}x{} grid",
            traces.len(),
            cfg.s,
            cfg.s
        )));
    }
    let n_traces = traces.len();
    let mut warnings = Vec::new();

    let global_motion_detected = has_global_motion(&traces, cfg.eta, dims)?;
    let mut residuals = Vec::new();
    if global_motion_detected {
        let params = RansacParams {
            dims,
            inlier_px: cfg.ransac_inlier_px,
            max_iters: cfg.ransac_max_iters,
            seed: cfg.seed,
        };
        let stab = stabilize_traces(&traces, &params)?;
        traces = stab.traces;
        residuals = stab.steps;
        warnings.extend(stab.warnings);
    }

    let classes = classify_traces(&traces, cfg.epsilon, dims)?;
    let mode = if cfg.deterministic_selection {
        SelectionMode::Nearest
    } else {
        SelectionMode::Random
    };

    let k = choose_k(classes.foreground.len(), cfg);
    let (fg_reps, bg_reps, bg_k) = if k == 0 {
        warnings.push(Warning::NoForeground.emit());
        (Vec::new(), Vec::new(), 0)
    } else {
        let fg_clusters = kmeans_traces(&classes.foreground, k, cfg.seed)?;
        let fg_reps = select_representatives(
            &classes.foreground,
            &fg_clusters,
            mode,
            cfg.seed ^ SELECT_SEED_SALT,
        )?;
        let bg_k = (2 * k).min(classes.background.len());
        if bg_k < 2 * k {
            warnings.push(
                Warning::BackgroundClustersClamped {
                    requested: 2 * k,
                    available: classes.background.len(),
                }
                .emit(),
            );
        }
        let bg_reps = if bg_k > 0 {
            let bg_clusters = kmeans_traces(&classes.background, bg_k, cfg.seed ^ BG_SEED_SALT)?;
            select_representatives(
                &classes.background,
                &bg_clusters,
                mode,
                cfg.seed ^ BG_SEED_SALT ^ SELECT_SEED_SALT,
            )?
        } else {
            Vec::new()
        };
        (fg_reps, bg_reps, bg_k)
    };

    let starts: Vec<_> = fg_reps
        .iter()
        .chain(&bg_reps)
        .map(|t| t.start().clamped())
        .collect();
    let som = apply_som_points(&seq.first_frame_rgb(), &starts, image_ref)?;
    let split = fg_reps.len() as u32 + 1;
    let fg_marks = som.marks.sub_range(1..split);
    let bg_marks = som.marks.sub_range(split..u32::MAX);

    Ok(TomResult {
        marked_first_frame: som.raster,
        fg_marks,
        bg_marks,
        fg_traces: fg_reps,
        diagnostics: TomDiagnostics {
            global_motion_detected,
            homography_residuals: residuals,
            n_traces,
            n_foreground: classes.foreground.len(),
            n_background: classes.background.len(),
            n_dropped: classes.dropped,
            fg_clusters: k,
            bg_clusters: bg_k,
            warnings,
        },
    })
}
