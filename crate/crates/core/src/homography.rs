//! Projective transforms between frames and removal of global camera motion.
//!
//! `h_i` maps positions at step `i` back into the first frame's coordinates.
//! Estimation is a normalized DLT (Hartley normalization, SVD null vector),
//! wrapped in a seeded RANSAC that scores models by symmetric transfer error
//! measured in pixels.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result, Warning};
use crate::geometry::{ImageDims, Point2, Trace};

const DET_EPS: f64 = 1e-12;
const W_EPS: f64 = 1e-12;
/// Relative singular-value gap below which the DLT null space is not unique.
const RANK_EPS: f64 = 1e-9;
/// Twice the triangle area (px^2) below which a minimal sample is collinear.
const COLLINEAR_PX2: f64 = 1.0;
const RANSAC_CONFIDENCE: f64 = 0.9999;

/// A 3x3 projective transform acting on normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    /// Wraps a matrix, scaling so `m[2][2] = 1` when that entry is nonzero.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::Degenerate("non-finite homography".into()));
        }
        let m = if m[(2, 2)].abs() > DET_EPS {
            m / m[(2, 2)]
        } else {
            m
        };
        if m.determinant().abs() <= DET_EPS {
            return Err(Error::Degenerate(format!(
                "singular homography (det = {:e})",
                m.determinant()
            )));
        }
        Ok(Self { m })
    }

    pub fn from_row_major(v: [f64; 9]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_row_slice(&v))
    }

    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        let mut m = Matrix3::identity();
        m[(0, 2)] = dx;
        m[(1, 2)] = dy;
        Self { m }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = self.m[(r, c)];
            }
        }
        out
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .m
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("homography not invertible".into()))?;
        Self::from_matrix(inv)
    }

    /// Projective application; the result may leave the unit square.
    pub fn apply(&self, p: Point2) -> Result<Point2> {
        let v = self.m * Vector3::new(p.x, p.y, 1.0);
        if v.z.abs() < W_EPS {
            return Err(Error::PointAtInfinity { w: v.z });
        }
        Ok(Point2::raw(v.x / v.z, v.y / v.z))
    }

    /// Largest absolute elementwise difference, after both are normalized.
    pub fn max_abs_diff(&self, other: &Homography) -> f64 {
        (self.m - other.m).abs().max()
    }
}

impl Serialize for Homography {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Homography {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = <[f64; 9]>::deserialize(d)?;
        Homography::from_row_major(v).map_err(D::Error::custom)
    }
}

/// Point pairs `src -> dst` used for estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondences {
    pub src: Vec<Point2>,
    pub dst: Vec<Point2>,
    pub weights: Option<Vec<f64>>,
}

impl Correspondences {
    pub fn new(src: Vec<Point2>, dst: Vec<Point2>) -> Result<Self> {
        if src.len() != dst.len() {
            return Err(Error::validation(format!(
                "{} source points but {} destination points",
                src.len(),
                dst.len()
            )));
        }
        Ok(Self {
            src,
            dst,
            weights: None,
        })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.src.len() {
            return Err(Error::validation("weight count differs from pair count"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::validation("weights must be finite and >= 0"));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Correspondences {
        Correspondences {
            src: idx.iter().map(|&i| self.src[i]).collect(),
            dst: idx.iter().map(|&i| self.dst[i]).collect(),
            weights: self
                .weights
                .as_ref()
                .map(|w| idx.iter().map(|&i| w[i]).collect()),
        }
    }
}

/// DLT result with its RMS forward reprojection residual (normalized units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DltFit {
    pub homography: Homography,
    pub rms_residual: f64,
}

/// Similarity that moves the centroid to the origin with mean distance sqrt(2).
fn normalizing_transform(pts: &[Point2]) -> Result<Matrix3<f64>> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_dist = pts
        .iter()
        .map(|p| (p.x - cx).hypot(p.y - cy))
        .sum::<f64>()
        / n;
    if !(mean_dist > DET_EPS) {
        return Err(Error::Degenerate(
            "points collapse to a single location".into(),
        ));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn transform(t: &Matrix3<f64>, p: &Point2) -> (f64, f64) {
    let v = t * Vector3::new(p.x, p.y, 1.0);
    (v.x / v.z, v.y / v.z)
}

/// Least-squares normalized DLT estimate of the homography `src -> dst`.
pub fn estimate_dlt(c: &Correspondences) -> Result<DltFit> {
    let n = c.len();
    if n < 4 {
        return Err(Error::InsufficientData { needed: 4, got: n });
    }
    if c.src.iter().chain(&c.dst).any(|p| !p.is_finite()) {
        return Err(Error::validation("non-finite correspondence"));
    }
    let t_src = normalizing_transform(&c.src)?;
    let t_dst = normalizing_transform(&c.dst)?;

    // At least 9 rows so the SVD exposes the full right null space.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for i in 0..n {
        let (x, y) = transform(&t_src, &c.src[i]);
        let (u, v) = transform(&t_dst, &c.dst[i]);
        let w = c.weights.as_ref().map_or(1.0, |w| w[i].sqrt());
        let r0 = 2 * i;
        let r1 = r0 + 1;
        a[(r0, 0)] = -x * w;
        a[(r0, 1)] = -y * w;
        a[(r0, 2)] = -w;
        a[(r0, 6)] = u * x * w;
        a[(r0, 7)] = u * y * w;
        a[(r0, 8)] = u * w;
        a[(r1, 3)] = -x * w;
        a[(r1, 4)] = -y * w;
        a[(r1, 5)] = -w;
        a[(r1, 6)] = v * x * w;
        a[(r1, 7)] = v * y * w;
        a[(r1, 8)] = v * w;
    }

    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Degenerate("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let s_max = svd.singular_values[order[order.len() - 1]];
    let s_second = svd.singular_values[order[1]];
    if !(s_max > 0.0) || s_second <= RANK_EPS * s_max {
        return Err(Error::Degenerate(
            "correspondences do not determine a unique homography".into(),
        ));
    }
    let h = v_t.row(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("normalization not invertible".into()))?;
    let homography = Homography::from_matrix(t_dst_inv * hn * t_src)?;

    let mut sq = 0.0;
    for (s, d) in c.src.iter().zip(&c.dst) {
        let p = homography.apply(*s)?;
        sq += (p.x - d.x).powi(2) + (p.y - d.y).powi(2);
    }
    Ok(DltFit {
        homography,
        rms_residual: (sq / n as f64).sqrt(),
    })
}

/// RANSAC parameters. Distances are in pixels of an image with `dims`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub dims: ImageDims,
    pub inlier_px: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl RansacParams {
    pub fn new(dims: ImageDims, seed: u64) -> Self {
        Self {
            dims,
            inlier_px: 3.0,
            max_iters: 500,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    pub homography: Homography,
    pub inliers: Vec<bool>,
    /// RMS forward transfer error over inliers, in pixels.
    pub rms_px: f64,
    pub iterations: usize,
}

impl RansacFit {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Forward and backward transfer errors of one pair, in pixels.
fn transfer_errors(
    h: &Homography,
    h_inv: &Homography,
    s: Point2,
    d: Point2,
    dims: ImageDims,
) -> Option<(f64, f64)> {
    let fwd = h.apply(s).ok()?.pixel_distance(&d, dims);
    let bwd = h_inv.apply(d).ok()?.pixel_distance(&s, dims);
    Some((fwd, bwd))
}

struct Score {
    mask: Vec<bool>,
    count: usize,
    cost: f64,
    sq_fwd: f64,
}

fn score(h: &Homography, c: &Correspondences, params: &RansacParams) -> Option<Score> {
    let h_inv = h.inverse().ok()?;
    let mut mask = vec![false; c.len()];
    let (mut count, mut cost, mut sq_fwd) = (0, 0.0, 0.0);
    for (i, (s, d)) in c.src.iter().zip(&c.dst).enumerate() {
        match transfer_errors(h, &h_inv, *s, *d, params.dims) {
            Some((f, b)) if f <= params.inlier_px && b <= params.inlier_px => {
                mask[i] = true;
                count += 1;
                cost += f + b;
                sq_fwd += f * f;
            }
            _ => cost += 2.0 * params.inlier_px,
        }
    }
    Some(Score {
        mask,
        count,
        cost,
        sq_fwd,
    })
}

fn better(a: &Score, b: &Option<Score>) -> bool {
    match b {
        None => true,
        Some(b) => a.count > b.count || (a.count == b.count && a.cost < b.cost),
    }
}

fn collinear(pts: [Point2; 4], dims: ImageDims) -> bool {
    let px: Vec<(f64, f64)> = pts.iter().map(|p| p.to_pixels(dims)).collect();
    for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
        let (a, b, c) = (px[i], px[j], px[k]);
        let twice_area = ((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)).abs();
        if twice_area < COLLINEAR_PX2 {
            return true;
        }
    }
    false
}

/// Robust homography fit. Deterministic for a given `params.seed`.
pub fn estimate_ransac(c: &Correspondences, params: &RansacParams) -> Result<RansacFit> {
    let n = c.len();
    if n < 4 {
        return Err(Error::InsufficientData { needed: 4, got: n });
    }
    if !(params.inlier_px > 0.0) {
        return Err(Error::validation("inlier threshold must be positive"));
    }
    // Collapsed inputs cannot yield any model.
    normalizing_transform(&c.src)?;
    normalizing_transform(&c.dst)?;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<Score> = None;
    let mut best_h = None;
    let mut needed = params.max_iters;
    let mut iterations = 0;
    let mut fitted_any = false;

    while iterations < needed.min(params.max_iters) {
        iterations += 1;
        let idx = sample(&mut rng, n, 4).into_vec();
        let sub = c.subset(&idx);
        let s4 = [sub.src[0], sub.src[1], sub.src[2], sub.src[3]];
        let d4 = [sub.dst[0], sub.dst[1], sub.dst[2], sub.dst[3]];
        if collinear(s4, params.dims) || collinear(d4, params.dims) {
            continue;
        }
        let Ok(fit) = estimate_dlt(&sub) else {
            continue;
        };
        fitted_any = true;
        let Some(sc) = score(&fit.homography, c, params) else {
            continue;
        };
        if sc.count >= 4 && better(&sc, &best) {
            let w = sc.count as f64 / n as f64;
            needed = adaptive_iterations(w).min(params.max_iters);
            best = Some(sc);
            best_h = Some(fit.homography);
        }
    }

    let (Some(mut best), Some(mut h)) = (best, best_h) else {
        return Err(if fitted_any {
            Error::RobustFitFailed("no model reached 4 inliers".into())
        } else {
            Error::Degenerate("every minimal sample was degenerate".into())
        });
    };

    // Local refinement: refit on the consensus set while it keeps improving.
    for _ in 0..3 {
        let idx: Vec<usize> = (0..n).filter(|&i| best.mask[i]).collect();
        let Ok(fit) = estimate_dlt(&c.subset(&idx)) else {
            break;
        };
        let Some(sc) = score(&fit.homography, c, params) else {
            break;
        };
        if sc.count < best.count || (sc.count == best.count && sc.cost >= best.cost) {
            break;
        }
        best = sc;
        h = fit.homography;
    }

    Ok(RansacFit {
        homography: h,
        rms_px: (best.sq_fwd / best.count as f64).sqrt(),
        inliers: best.mask,
        iterations,
    })
}

fn adaptive_iterations(inlier_ratio: f64) -> usize {
    let p_good = inlier_ratio.powi(4);
    if p_good >= 1.0 - 1e-12 {
        return 1;
    }
    if p_good <= 0.0 {
        return usize::MAX;
    }
    let k = (1.0 - RANSAC_CONFIDENCE).ln() / (1.0 - p_good).ln();
    k.ceil().max(1.0) as usize
}

/// Per-step record of a stabilization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostic {
    pub step: usize,
    pub candidates: usize,
    pub inliers: usize,
    pub residual_px: Option<f64>,
    pub out_of_frame: usize,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stabilized {
    pub traces: Vec<Trace>,
    pub steps: Vec<StepDiagnostic>,
    pub homographies: Vec<Homography>,
    pub warnings: Vec<Warning>,
}

/// Maps every trace's step-`i` point into frame-0 coordinates through an
/// independently estimated `h_i`. Occlusion flags pass through unchanged;
/// out-of-frame results are kept unclamped.
///
/// Step `i` uses seed `params.seed ^ i`, so per-step fits are independent.
pub fn stabilize_traces(traces: &[Trace], params: &RansacParams) -> Result<Stabilized> {
    let Some(first) = traces.first() else {
        return Ok(Stabilized {
            traces: Vec::new(),
            steps: Vec::new(),
            homographies: Vec::new(),
            warnings: Vec::new(),
        });
    };
    let len = first.len();
    if let Some(t) = traces.iter().find(|t| t.len() != len) {
        return Err(Error::validation(format!(
            "trace {} has length {}, expected {len}",
            t.seed_index(),
            t.len()
        )));
    }

    let mut points: Vec<Vec<Point2>> = traces.iter().map(|t| t.points().to_vec()).collect();
    let mut steps = Vec::with_capacity(len - 1);
    let mut homographies = vec![Homography::identity()];
    let mut warnings = Vec::new();

    for step in 1..len {
        let usable: Vec<usize> = (0..traces.len())
            .filter(|&k| !traces[k].occluded()[0] && !traces[k].occluded()[step])
            .collect();
        let corr = Correspondences::new(
            usable.iter().map(|&k| traces[k].points()[step]).collect(),
            usable.iter().map(|&k| traces[k].points()[0]).collect(),
        )?;
        let step_params = RansacParams {
            seed: params.seed ^ step as u64,
            ..*params
        };
        let fit = if usable.len() < 4 {
            Err(Error::InsufficientData {
                needed: 4,
                got: usable.len(),
            })
        } else {
            estimate_ransac(&corr, &step_params)
        };
        let fit = match fit {
            Ok(fit) => fit,
            Err(e) => {
                warnings.push(
                    Warning::StabilizationSkipped {
                        step,
                        reason: e.to_string(),
                    }
                    .emit(),
                );
                steps.push(StepDiagnostic {
                    step,
                    candidates: usable.len(),
                    inliers: 0,
                    residual_px: None,
                    out_of_frame: 0,
                    skipped: true,
                });
                homographies.push(Homography::identity());
                continue;
            }
        };

        let mut out_of_frame = 0;
        for pts in points.iter_mut() {
            // Points that cannot be mapped keep their original position.
            if let Ok(q) = fit.homography.apply(pts[step]) {
                pts[step] = q;
            }
            if !pts[step].in_frame() {
                out_of_frame += 1;
            }
        }
        steps.push(StepDiagnostic {
            step,
            candidates: usable.len(),
            inliers: fit.inlier_count(),
            residual_px: Some(fit.rms_px),
            out_of_frame,
            skipped: false,
        });
        homographies.push(fit.homography);
    }

    let traces = traces
        .iter()
        .zip(points)
        .map(|(t, pts)| t.with_points(pts))
        .collect::<Result<Vec<_>>>()?;
    Ok(Stabilized {
        traces,
        steps,
        homographies,
        warnings,
    })
}
