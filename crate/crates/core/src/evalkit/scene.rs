use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use super::BoxAnnotation;
use crate::error::{Error, Result};
use crate::geometry::{BBox, ImageDims, Point2, Trace};
use crate::tracking::{seed_grid, FrameSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Axis-aligned rectangle filling `size`, edges included.
    Rect,
    /// Ellipse inscribed in `size`.
    Disc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    #[serde(default)]
    pub id: String,
    pub shape: Shape,
    /// Width and height in pixels.
    pub size: [f64; 2],
    pub texture_seed: u64,
    /// Top-left corner in world pixels at frame 0.
    pub start: [f64; 2],
    /// World pixels per frame.
    #[serde(default)]
    pub velocity: [f64; 2],
}

impl SceneObject {
    fn pos(&self, t: f64) -> [f64; 2] {
        [
            self.start[0] + self.velocity[0] * t,
            self.start[1] + self.velocity[1] * t,
        ]
    }

    /// Object-local coordinates if the world point lies on the object.
    fn local(&self, world: [f64; 2], t: f64) -> Option<[f64; 2]> {
        let p = self.pos(t);
        let u = [world[0] - p[0], world[1] - p[1]];
        let [w, h] = self.size;
        let hit = match self.shape {
            Shape::Rect => u[0] >= 0.0 && u[0] <= w && u[1] >= 0.0 && u[1] <= h,
            Shape::Disc => {
                let dx = (u[0] - w / 2.0) / (w / 2.0);
                let dy = (u[1] - h / 2.0) / (h / 2.0);
                dx * dx + dy * dy < 1.0
            }
        };
        hit.then_some(u)
    }
}

/// Camera motion relative to the world: `pan` world pixels per frame and
/// a per-frame zoom factor about the canvas center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Camera {
    pub pan: [f64; 2],
    pub zoom: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            pan: [0.0, 0.0],
            zoom: 1.0,
        }
    }
}

/// Declarative scene: textured objects over a textured background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub canvas: ImageDims,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub camera: Camera,
    pub frames: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    #[serde(default)]
    pub background_seed: u64,
}

fn default_fps() -> f64 {
    30.0
}

fn default_grid() -> usize {
    15
}

/// Ground-truth traces in seed-grid order and the object each seed sits
/// on at frame 0 (`None` for background).
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub traces: Vec<Trace>,
    pub seed_objects: Vec<Option<usize>>,
}

#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub seq: FrameSequence,
    pub ground_truth: GroundTruth,
    pub annotations: Vec<BoxAnnotation>,
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<()> {
        if self.canvas.width == 0 || self.canvas.height == 0 {
            return Err(Error::validation("canvas must be non-empty"));
        }
        if self.frames < 2 {
            return Err(Error::validation("scene needs at least 2 frames"));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::validation("fps must be positive"));
        }
        if self.grid_size < 1 {
            return Err(Error::validation("grid_size must be >= 1"));
        }
        let cam_ok = self.camera.pan.iter().all(|v| v.is_finite())
            && self.camera.zoom > 0.0
            && self.camera.zoom.is_finite();
        if !cam_ok {
            return Err(Error::validation("camera pan must be finite and zoom positive"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            let finite = o.start.iter().chain(&o.velocity).all(|v| v.is_finite());
            if !finite || !(o.size[0] > 0.0 && o.size[1] > 0.0 && o.size.iter().all(|v| v.is_finite())) {
                return Err(Error::validation(format!("object {i} has invalid geometry")));
            }
        }
        Ok(())
    }

    pub fn object_name(&self, i: usize) -> String {
        let id = &self.objects[i].id;
        if id.is_empty() {
            format!("object{i}")
        } else {
            id.clone()
        }
    }

    fn center(&self) -> [f64; 2] {
        [self.canvas.w() / 2.0, self.canvas.h() / 2.0]
    }

    fn scale(&self, t: f64) -> f64 {
        self.camera.zoom.powf(t)
    }

    fn project(&self, world: [f64; 2], t: f64) -> [f64; 2] {
        let c = self.center();
        let z = self.scale(t);
        [
            c[0] + z * (world[0] - c[0] - self.camera.pan[0] * t),
            c[1] + z * (world[1] - c[1] - self.camera.pan[1] * t),
        ]
    }

    fn unproject(&self, screen: [f64; 2], t: f64) -> [f64; 2] {
        let c = self.center();
        let z = self.scale(t);
        [
            c[0] + (screen[0] - c[0]) / z + self.camera.pan[0] * t,
            c[1] + (screen[1] - c[1]) / z + self.camera.pan[1] * t,
        ]
    }

    /// Index of the topmost object covering a world point.
    fn top_object(&self, world: [f64; 2], t: f64) -> Option<(usize, [f64; 2])> {
        self.objects
            .iter()
            .enumerate()
            .rev()
            .find_map(|(i, o)| o.local(world, t).map(|u| (i, u)))
    }

    fn in_canvas(&self, s: [f64; 2]) -> bool {
        s[0] >= 0.0 && s[0] <= self.canvas.w() && s[1] >= 0.0 && s[1] <= self.canvas.h()
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = mix(seed ^ mix((ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ mix(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    let (gx, gy) = (x / cell, y / cell);
    let (fx, fy) = (gx.floor(), gy.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (smooth(gx - fx), smooth(gy - fy));
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

/// Smooth multi-octave texture in `[0, 1]`, continuous in `(x, y)`.
pub fn texture_value(seed: u64, x: f64, y: f64) -> f64 {
    0.5 * value_noise(seed, x, y, 16.0)
        + 0.3 * value_noise(seed ^ 0x5555, x, y, 8.0)
        + 0.2 * value_noise(seed ^ 0xaaaa, x, y, 4.0)
}

fn to_luma(v: f64) -> u8 {
    (20.0 + 215.0 * v).round().clamp(0.0, 255.0) as u8
}

/// Analytic traces of the `grid_size^2` seed grid, without rasterizing.
pub fn scene_ground_truth(scene: &SyntheticScene) -> Result<GroundTruth> {
    scene.validate()?;
    let dims = scene.canvas;
    let seeds = seed_grid(dims, scene.grid_size)?;
    let mut traces = Vec::with_capacity(seeds.len());
    let mut seed_objects = Vec::with_capacity(seeds.len());
    for (i, s) in seeds.iter().enumerate() {
        let w0 = [s.x * dims.w(), s.y * dims.h()];
        let owner = scene.top_object(w0, 0.0);
        let mut pts = Vec::with_capacity(scene.frames);
        let mut occ = Vec::with_capacity(scene.frames);
        for f in 0..scene.frames {
            let t = f as f64;
            let world = match owner {
                Some((o, u)) => {
                    let p = scene.objects[o].pos(t);
                    [p[0] + u[0], p[1] + u[1]]
                }
                None => w0,
            };
            let screen = scene.project(world, t);
            let covered = match (owner, scene.top_object(world, t)) {
                (_, None) => false,
                (None, Some(_)) => true,
                (Some((o, _)), Some((top, _))) => top != o,
            };
            pts.push(Point2::raw(screen[0] / dims.w(), screen[1] / dims.h()));
            occ.push(covered || !scene.in_canvas(screen));
        }
        traces.push(Trace::new(pts, occ, i)?);
        seed_objects.push(owner.map(|(o, _)| o));
    }
    Ok(GroundTruth {
        traces,
        seed_objects,
    })
}

fn render_frame(scene: &SyntheticScene, t: f64) -> GrayImage {
    GrayImage::from_fn(scene.canvas.width, scene.canvas.height, |x, y| {
        let world = scene.unproject([x as f64 + 0.5, y as f64 + 0.5], t);
        let v = match scene.top_object(world, t) {
            Some((o, u)) => texture_value(scene.objects[o].texture_seed, u[0], u[1]),
            None => texture_value(scene.background_seed, world[0], world[1]),
        };
        Luma([to_luma(v)])
    })
}

/// Per-frame object boxes, clipped to the canvas; objects fully outside
/// the canvas get no box for that frame.
pub fn scene_annotations(scene: &SyntheticScene) -> Result<Vec<BoxAnnotation>> {
    let (w, h) = (scene.canvas.w(), scene.canvas.h());
    let mut out = Vec::new();
    for f in 0..scene.frames {
        let t = f as f64;
        for (i, o) in scene.objects.iter().enumerate() {
            let p = o.pos(t);
            let a = scene.project(p, t);
            let b = scene.project([p[0] + o.size[0], p[1] + o.size[1]], t);
            let (x0, y0) = (a[0].max(0.0), a[1].max(0.0));
            let (x1, y1) = (b[0].min(w), b[1].min(h));
            if x1 <= x0 || y1 <= y0 {
                continue;
            }
            let clipped = x0 != a[0] || y0 != a[1] || x1 != b[0] || y1 != b[1];
            out.push(BoxAnnotation {
                frame_index: f,
                object_id: scene.object_name(i),
                bbox: BBox::new(x0 / w, y0 / h, (x1 - x0) / w, (y1 - y0) / h)?,
                visible: !clipped,
            });
        }
    }
    Ok(out)
}

/// Rasterizes the scene and returns frames, exact traces and object boxes.
pub fn render_scene(scene: &SyntheticScene) -> Result<RenderedScene> {
    let ground_truth = scene_ground_truth(scene)?;
    let frames = (0..scene.frames)
        .map(|f| render_frame(scene, f as f64))
        .collect();
    Ok(RenderedScene {
        seq: FrameSequence::new(frames, scene.fps)?,
        ground_truth,
        annotations: scene_annotations(scene)?,
    })
}
