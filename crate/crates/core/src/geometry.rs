//! Normalized image geometry, the 256-bin coordinate quantizer and traces.
//!
//! Coordinates are fractions of the image extent. Pixel space is continuous:
//! pixel `i` covers `[i, i + 1)`, so a normalized coordinate `x` sits at
//! `x * width` pixels.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Number of quantization bins per axis.
pub const NUM_BINS: u32 = 256;

/// Tolerance for box extents touching the far image border.
const EXTENT_EPS: f64 = 1e-9;

/// Width and height of a raster in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl ImageDims {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn w(&self) -> f64 {
        self.width as f64
    }

    pub fn h(&self) -> f64 {
        self.height as f64
    }
}

/// A point in normalized image coordinates.
///
/// Values produced by projective maps may leave `[0, 1]`; use
/// [`Point2::in_frame`] to detect that instead of clamping.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    /// Validated constructor; both coordinates must lie in `[0, 1]`.
    pub fn new(x: f64, y: f64) -> Result<Self> {
        check_unit("x", x)?;
        check_unit("y", y)?;
        Ok(Self { x, y })
    }

    /// Unvalidated constructor for intermediate or out-of-frame positions.
    pub const fn raw(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_pixels(px: f64, py: f64, dims: ImageDims) -> Self {
        Self {
            x: px / dims.w(),
            y: py / dims.h(),
        }
    }

    pub fn to_pixels(self, dims: ImageDims) -> (f64, f64) {
        (self.x * dims.w(), self.y * dims.h())
    }

    pub fn in_frame(&self) -> bool {
        (0.0..=1.0).contains(&self.x) && (0.0..=1.0).contains(&self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn clamped(self) -> Self {
        Self {
            x: self.x.clamp(0.0, 1.0),
            y: self.y.clamp(0.0, 1.0),
        }
    }

    /// Euclidean distance in pixels.
    pub fn pixel_distance(&self, other: &Point2, dims: ImageDims) -> f64 {
        let dx = (self.x - other.x) * dims.w();
        let dy = (self.y - other.y) * dims.h();
        dx.hypot(dy)
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::validation(format!(
            "{name} coordinate {v} outside [0, 1]"
        )));
    }
    Ok(())
}

impl Serialize for Point2 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.x, self.y].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Point2 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [x, y] = <[f64; 2]>::deserialize(d)?;
        let p = Point2::raw(x, y);
        if !p.is_finite() {
            return Err(D::Error::custom("point coordinates must be finite"));
        }
        Ok(p)
    }
}

/// An axis-aligned box in normalized coordinates: top-left corner plus extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        check_unit("x", x)?;
        check_unit("y", y)?;
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::validation(format!(
                "box extent ({w}, {h}) must be positive"
            )));
        }
        if x + w > 1.0 + EXTENT_EPS || y + h > 1.0 + EXTENT_EPS {
            return Err(Error::validation(format!(
                "box [{x}, {y}, {w}, {h}] extends past the image"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    /// Builds a normalized box from pixel-space corner and extent.
    pub fn from_pixels(px: f64, py: f64, pw: f64, ph: f64, dims: ImageDims) -> Result<Self> {
        Self::new(px / dims.w(), py / dims.h(), pw / dims.w(), ph / dims.h())
    }

    pub fn center(&self) -> Point2 {
        Point2::raw(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Closed containment test.
    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= self.x && p.x <= self.x + self.w && p.y >= self.y && p.y <= self.y + self.h
    }

    /// Pixel-space `(x0, y0, x1, y1)` extents.
    pub fn to_pixels(&self, dims: ImageDims) -> (f64, f64, f64, f64) {
        (
            self.x * dims.w(),
            self.y * dims.h(),
            (self.x + self.w) * dims.w(),
            (self.y + self.h) * dims.h(),
        )
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.x, self.y, self.w, self.h].serialize(s)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [x, y, w, h] = <[f64; 4]>::deserialize(d)?;
        BBox::new(x, y, w, h).map_err(D::Error::custom)
    }
}

/// One axis of a quantized coordinate, a bin index in `[0, 255]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuantizedCoord(u8);

impl QuantizedCoord {
    pub fn new(bin: u32) -> Result<Self> {
        u8::try_from(bin)
            .map(Self)
            .map_err(|_| Error::validation(format!("bin {bin} outside [0, 255]")))
    }

    pub fn bin(self) -> u32 {
        self.0 as u32
    }

    /// Quantizes a single normalized value.
    pub fn from_unit(v: f64) -> Option<Self> {
        if !(0.0..=1.0).contains(&v) {
            return None;
        }
        let bin = (v * NUM_BINS as f64).floor().min((NUM_BINS - 1) as f64);
        Some(Self(bin as u8))
    }

    /// Bin center in normalized units.
    pub fn center(self) -> f64 {
        (self.0 as f64 + 0.5) / NUM_BINS as f64
    }
}

/// Maps each axis of `p` to `floor(v * 256)` clamped to 255.
pub fn quantize(p: Point2) -> Result<(QuantizedCoord, QuantizedCoord)> {
    check_unit("x", p.x)?;
    check_unit("y", p.y)?;
    Ok((
        QuantizedCoord::from_unit(p.x).expect("checked"),
        QuantizedCoord::from_unit(p.y).expect("checked"),
    ))
}

/// Inverse of [`quantize`]: returns bin centers.
pub fn dequantize(qx: QuantizedCoord, qy: QuantizedCoord) -> Point2 {
    Point2::raw(qx.center(), qy.center())
}

/// [`dequantize`] over raw bin indices.
pub fn dequantize_bins(bx: u32, by: u32) -> Result<Point2> {
    Ok(dequantize(QuantizedCoord::new(bx)?, QuantizedCoord::new(by)?))
}

/// One tracked point over `L` frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TraceRepr", into = "TraceRepr")]
pub struct Trace {
    points: Vec<Point2>,
    occluded: Vec<bool>,
    seed_index: usize,
}

#[derive(Serialize, Deserialize)]
struct TraceRepr {
    points: Vec<Point2>,
    occluded: Vec<bool>,
    seed: usize,
}

impl TryFrom<TraceRepr> for Trace {
    type Error = Error;

    fn try_from(r: TraceRepr) -> Result<Self> {
        Trace::new(r.points, r.occluded, r.seed)
    }
}

impl From<Trace> for TraceRepr {
    fn from(t: Trace) -> Self {
        TraceRepr {
            points: t.points,
            occluded: t.occluded,
            seed: t.seed_index,
        }
    }
}

impl Trace {
    pub fn new(points: Vec<Point2>, occluded: Vec<bool>, seed_index: usize) -> Result<Self> {
        if points.len() != occluded.len() {
            return Err(Error::validation(format!(
                "trace {seed_index}: {} points but {} occlusion flags",
                points.len(),
                occluded.len()
            )));
        }
        if points.len() < 2 {
            return Err(Error::validation(format!(
                "trace {seed_index}: length {} < 2",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::validation(format!(
                "trace {seed_index}: non-finite point at step {i}"
            )));
        }
        Ok(Self {
            points,
            occluded,
            seed_index,
        })
    }

    /// A trace with every point visible.
    pub fn visible(points: Vec<Point2>, seed_index: usize) -> Result<Self> {
        let occluded = vec![false; points.len()];
        Self::new(points, occluded, seed_index)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn occluded(&self) -> &[bool] {
        &self.occluded
    }

    pub fn seed_index(&self) -> usize {
        self.seed_index
    }

    pub fn start(&self) -> Point2 {
        self.points[0]
    }

    /// Fraction of steps flagged occluded.
    pub fn occluded_fraction(&self) -> f64 {
        self.occluded.iter().filter(|&&o| o).count() as f64 / self.len() as f64
    }

    /// Replaces the points, keeping flags and seed. Lengths must match.
    pub fn with_points(&self, points: Vec<Point2>) -> Result<Self> {
        Self::new(points, self.occluded.clone(), self.seed_index)
    }
}

/// Mean pixel displacement between adjacent steps.
///
/// A step is skipped when either endpoint is occluded; a trace with no
/// usable step has magnitude 0.
pub fn trace_motion_magnitude(t: &Trace, dims: ImageDims) -> Result<f64> {
    if t.len() < 2 {
        return Err(Error::validation("trace length < 2"));
    }
    let (sum, n) = t
        .points
        .windows(2)
        .zip(t.occluded.windows(2))
        .filter(|(_, occ)| !occ[0] && !occ[1])
        .fold((0.0, 0usize), |(sum, n), (p, _)| {
            (sum + p[0].pixel_distance(&p[1], dims), n + 1)
        });
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}
