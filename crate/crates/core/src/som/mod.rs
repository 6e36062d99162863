//! Set-of-Mark overlays.
//!
//! [`apply_som`] numbers candidate boxes on a screenshot, drawing each box
//! and placing its label at the box corner farthest from previously drawn
//! boxes. [`apply_som_points`] marks points (trace starts) on a video frame.
//!
//! Label boxes hang vertically outside the box edge at the chosen corner and
//! run horizontally along that edge toward the box interior: a top-left label
//! sits above the top edge starting at the left edge, a bottom-right label
//! sits below the bottom edge ending at the right edge.

mod font;

use std::collections::BTreeMap;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};
use crate::geometry::{BBox, ImageDims, Point2};

use font::{glyph, GLYPH_H, GLYPH_W};

pub type Raster = RgbImage;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);

const PALETTE: [Rgb<u8>; 10] = [
    Rgb([230, 25, 75]),
    Rgb([60, 140, 60]),
    Rgb([0, 90, 200]),
    Rgb([200, 110, 0]),
    Rgb([145, 30, 180]),
    Rgb([0, 130, 140]),
    Rgb([190, 20, 160]),
    Rgb([110, 110, 0]),
    Rgb([128, 0, 0]),
    Rgb([0, 0, 128]),
];

fn palette(label: u32) -> Rgb<u8> {
    PALETTE[(label.saturating_sub(1) % PALETTE.len() as u32) as usize]
}

/// The geometry a label refers to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Mark {
    Box(BBox),
    Point(Point2),
}

impl Mark {
    /// Representative point: the box center or the point itself.
    pub fn anchor(&self) -> Point2 {
        match self {
            Mark::Box(b) => b.center(),
            Mark::Point(p) => *p,
        }
    }
}

/// Numbered marks `{1: p1, ..., K: pK}` overlaid on one raster.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MarkSet {
    #[serde(rename = "image", default)]
    pub image_ref: String,
    #[serde(rename = "marks")]
    entries: BTreeMap<u32, Mark>,
}

impl MarkSet {
    /// Labels `marks` as `first_label, first_label + 1, ...` in order.
    pub fn numbered(image_ref: impl Into<String>, marks: Vec<Mark>, first_label: u32) -> Self {
        Self {
            image_ref: image_ref.into(),
            entries: marks
                .into_iter()
                .enumerate()
                .map(|(i, m)| (first_label + i as u32, m))
                .collect(),
        }
    }

    pub fn get(&self, label: u32) -> Option<&Mark> {
        self.entries.get(&label)
    }

    pub fn labels(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &Mark)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when labels form a gap-free run starting at `first`.
    pub fn is_consecutive_from(&self, first: u32) -> bool {
        self.entries
            .keys()
            .enumerate()
            .all(|(i, &k)| k == first + i as u32)
    }

    /// The marks whose labels fall in `range`, keeping their numbering.
    pub fn sub_range(&self, range: std::ops::Range<u32>) -> MarkSet {
        MarkSet {
            image_ref: self.image_ref.clone(),
            entries: self.entries.range(range).map(|(k, v)| (*k, *v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Corner {
    Tl,
    Tr,
    Bl,
    Br,
}

impl Corner {
    /// Tie-break order.
    pub const ALL: [Corner; 4] = [Corner::Tl, Corner::Tr, Corner::Bl, Corner::Br];
}

/// Integer pixel rectangle `[x, x + w) x [y, y + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl PixelRect {
    pub fn inside(&self, dims: ImageDims) -> bool {
        self.x >= 0
            && self.y >= 0
            && self.x + self.w <= dims.width as i64
            && self.y + self.h <= dims.height as i64
    }

    pub fn corners(&self) -> [(i64, i64); 4] {
        [
            (self.x, self.y),
            (self.x + self.w, self.y),
            (self.x, self.y + self.h),
            (self.x + self.w, self.y + self.h),
        ]
    }

    pub fn intersects(&self, other: &PixelRect) -> bool {
        self.x < other.x + other.w
            && other.x < self.x + self.w
            && self.y < other.y + other.h
            && other.y < self.y + self.h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelPlacement {
    pub label: u32,
    pub text_box: PixelRect,
    pub corner: Corner,
    /// Anchor corner in pixels.
    pub anchor: (i64, i64),
    pub degraded: bool,
}

/// Glyph scale for an image: `max(1, round(min(H, W) / 512))`.
pub fn mark_scale(dims: ImageDims) -> u32 {
    ((dims.width.min(dims.height) as f64 / 512.0).round() as u32).max(1)
}

/// Label box size `(m_h, m_w)` in pixels for a digit string.
pub fn get_mark_size(text: &str, dims: ImageDims) -> Result<(u32, u32)> {
    if text.is_empty() {
        return Err(Error::validation("mark text is empty"));
    }
    if !text.chars().all(|c| c.is_ascii_digit()) {
        return Err(Error::validation(format!("mark text {text:?} is not numeric")));
    }
    let scale = mark_scale(dims);
    let pad = 2 * scale;
    Ok((
        GLYPH_H * scale + 2 * pad,
        text.len() as u32 * GLYPH_W * scale + 2 * pad,
    ))
}

fn box_px(b: &BBox, dims: ImageDims) -> (i64, i64, i64, i64) {
    let (x0, y0, x1, y1) = b.to_pixels(dims);
    (
        x0.round() as i64,
        y0.round() as i64,
        x1.round() as i64,
        y1.round() as i64,
    )
}

fn corner_anchor(corner: Corner, b: (i64, i64, i64, i64)) -> (i64, i64) {
    let (x0, y0, x1, y1) = b;
    match corner {
        Corner::Tl => (x0, y0),
        Corner::Tr => (x1, y0),
        Corner::Bl => (x0, y1),
        Corner::Br => (x1, y1),
    }
}

fn label_rect(corner: Corner, anchor: (i64, i64), size: (u32, u32)) -> PixelRect {
    let (h, w) = (size.0 as i64, size.1 as i64);
    let (cx, cy) = anchor;
    let (x, y) = match corner {
        Corner::Tl => (cx, cy - h),
        Corner::Tr => (cx - w, cy - h),
        Corner::Bl => (cx, cy),
        Corner::Br => (cx - w, cy),
    };
    PixelRect { x, y, w, h }
}

/// Pixel distance from a point to the nearest point of a box (0 inside).
fn point_box_distance(p: (f64, f64), b: &BBox, dims: ImageDims) -> f64 {
    let (x0, y0, x1, y1) = b.to_pixels(dims);
    let dx = (x0 - p.0).max(0.0).max(p.0 - x1);
    let dy = (y0 - p.1).max(0.0).max(p.1 - y1);
    dx.hypot(dy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerChoice {
    pub corner: Corner,
    pub anchor: (i64, i64),
    pub text_box: PixelRect,
    /// Distance from the anchor to the nearest drawn box (infinite when none).
    pub score: f64,
    pub degraded: bool,
}

/// Picks the corner of `b` whose minimum distance to every box in `drawn`
/// is largest, skipping corners whose `label_size` box would leave the
/// image. Ties resolve in `TL, TR, BL, BR` order.
pub fn find_optimal_corner(
    b: &BBox,
    drawn: &[BBox],
    dims: ImageDims,
    label_size: (u32, u32),
) -> CornerChoice {
    let px = box_px(b, dims);
    let mut best: Option<CornerChoice> = None;
    for corner in Corner::ALL {
        let anchor = corner_anchor(corner, px);
        let text_box = label_rect(corner, anchor, label_size);
        if !text_box.inside(dims) {
            continue;
        }
        let a = (anchor.0 as f64, anchor.1 as f64);
        let score = drawn
            .iter()
            .map(|d| point_box_distance(a, d, dims))
            .fold(f64::INFINITY, f64::min);
        if best.is_none_or(|c| score > c.score) {
            best = Some(CornerChoice {
                corner,
                anchor,
                text_box,
                score,
                degraded: false,
            });
        }
    }
    best.unwrap_or_else(|| {
        let anchor = corner_anchor(Corner::Tl, px);
        let raw = label_rect(Corner::Tl, anchor, label_size);
        let w = raw.w.min(dims.width as i64);
        let h = raw.h.min(dims.height as i64);
        CornerChoice {
            corner: Corner::Tl,
            anchor,
            text_box: PixelRect {
                x: raw.x.clamp(0, dims.width as i64 - w),
                y: raw.y.clamp(0, dims.height as i64 - h),
                w,
                h,
            },
            score: 0.0,
            degraded: true,
        }
    })
}

fn check_raster(img: &Raster) -> Result<ImageDims> {
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::validation("raster has no pixels"));
    }
    Ok(ImageDims::new(img.width(), img.height()))
}

fn fill_rect(img: &mut Raster, r: PixelRect, color: Rgb<u8>) {
    let x0 = r.x.max(0);
    let y0 = r.y.max(0);
    let x1 = (r.x + r.w).min(img.width() as i64);
    let y1 = (r.y + r.h).min(img.height() as i64);
    for y in y0..y1 {
        for x in x0..x1 {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Outline drawn inward from the rectangle edges.
fn draw_outline(img: &mut Raster, r: PixelRect, thickness: i64, color: Rgb<u8>) {
    let t = thickness.min(r.w).min(r.h).max(1);
    fill_rect(img, PixelRect { h: t, ..r }, color);
    fill_rect(img, PixelRect { y: r.y + r.h - t, h: t, ..r }, color);
    fill_rect(img, PixelRect { w: t, ..r }, color);
    fill_rect(img, PixelRect { x: r.x + r.w - t, w: t, ..r }, color);
}

fn draw_text(img: &mut Raster, text_box: PixelRect, text: &str, scale: u32, color: Rgb<u8>) {
    let pad = 2 * scale as i64;
    let s = scale as i64;
    for (i, c) in text.chars().enumerate() {
        let Some(rows) = glyph(c) else { continue };
        let gx = text_box.x + pad + i as i64 * GLYPH_W as i64 * s;
        let gy = text_box.y + pad;
        for (row, bits) in rows.iter().enumerate() {
            for col in 0..GLYPH_W as i64 {
                if bits & (0x80 >> col) != 0 {
                    fill_rect(
                        img,
                        PixelRect {
                            x: gx + col * s,
                            y: gy + row as i64 * s,
                            w: s,
                            h: s,
                        },
                        color,
                    );
                }
            }
        }
    }
}

fn draw_label(img: &mut Raster, label: u32, text_box: PixelRect, scale: u32) {
    fill_rect(img, text_box, palette(label));
    draw_text(img, text_box, &label.to_string(), scale, WHITE);
}

#[derive(Debug, Clone, PartialEq)]
pub struct SomOutput {
    pub raster: Raster,
    pub marks: MarkSet,
    pub placements: Vec<LabelPlacement>,
    pub warnings: Vec<Warning>,
}

/// Draws numbered boxes on a copy of `img`.
///
/// Boxes are processed in input order; each label's corner is chosen against
/// the boxes drawn before it. The returned marks hold the input coordinates.
pub fn apply_som(img: &Raster, boxes: &[BBox], image_ref: &str) -> Result<SomOutput> {
    let dims = check_raster(img)?;
    let scale = mark_scale(dims);
    let mut raster = img.clone();
    let mut placements = Vec::with_capacity(boxes.len());
    let mut warnings = Vec::new();
    let mut drawn: Vec<BBox> = Vec::with_capacity(boxes.len());

    for (idx, b) in boxes.iter().enumerate() {
        let label = idx as u32 + 1;
        let text = label.to_string();
        let (x0, y0, x1, y1) = box_px(b, dims);
        draw_outline(
            &mut raster,
            PixelRect {
                x: x0,
                y: y0,
                w: (x1 - x0).max(1),
                h: (y1 - y0).max(1),
            },
            2 * scale as i64,
            palette(label),
        );
        let size = get_mark_size(&text, dims)?;
        let choice = find_optimal_corner(b, &drawn, dims, size);
        if choice.degraded {
            warnings.push(Warning::PlacementDegraded { label }.emit());
        }
        draw_label(&mut raster, label, choice.text_box, scale);
        placements.push(LabelPlacement {
            label,
            text_box: choice.text_box,
            corner: choice.corner,
            anchor: choice.anchor,
            degraded: choice.degraded,
        });
        drawn.push(*b);
    }

    Ok(SomOutput {
        raster,
        marks: MarkSet::numbered(image_ref, boxes.iter().copied().map(Mark::Box).collect(), 1),
        placements,
        warnings,
    })
}

/// Draws a filled disc and a numbered label for each point, labels starting
/// at 1. Labels are offset diagonally toward the image center.
pub fn apply_som_points(img: &Raster, points: &[Point2], image_ref: &str) -> Result<SomOutput> {
    let dims = check_raster(img)?;
    if let Some(p) = points.iter().find(|p| !p.in_frame()) {
        return Err(Error::validation(format!(
            "mark point ({}, {}) outside the image",
            p.x, p.y
        )));
    }
    let scale = mark_scale(dims);
    let radius = 3 * scale as i64;
    let mut raster = img.clone();
    let mut placements = Vec::with_capacity(points.len());

    for (idx, p) in points.iter().enumerate() {
        let label = idx as u32 + 1;
        let (px, py) = p.to_pixels(dims);
        let (cx, cy) = (
            (px.floor() as i64).min(dims.width as i64 - 1),
            (py.floor() as i64).min(dims.height as i64 - 1),
        );
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dx * dx + dy * dy <= radius * radius {
                    let (x, y) = (cx + dx, cy + dy);
                    if x >= 0 && y >= 0 && x < dims.width as i64 && y < dims.height as i64 {
                        raster.put_pixel(x as u32, y as u32, palette(label));
                    }
                }
            }
        }

        let (h, w) = get_mark_size(&label.to_string(), dims)?;
        let (h, w) = (h as i64, w as i64);
        let right = px < dims.w() / 2.0;
        let down = py < dims.h() / 2.0;
        let gap = radius + 1;
        let x = if right { cx + gap } else { cx - gap - w };
        let y = if down { cy + gap } else { cy - gap - h };
        let w = w.min(dims.width as i64);
        let h = h.min(dims.height as i64);
        let text_box = PixelRect {
            x: x.clamp(0, dims.width as i64 - w),
            y: y.clamp(0, dims.height as i64 - h),
            w,
            h,
        };
        let corner = match (right, down) {
            (true, true) => Corner::Tl,
            (false, true) => Corner::Tr,
            (true, false) => Corner::Bl,
            (false, false) => Corner::Br,
        };
        draw_label(&mut raster, label, text_box, scale);
        placements.push(LabelPlacement {
            label,
            text_box,
            corner,
            anchor: (cx, cy),
            degraded: false,
        });
    }

    Ok(SomOutput {
        raster,
        marks: MarkSet::numbered(image_ref, points.iter().copied().map(Mark::Point).collect(), 1),
        placements,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const D512: ImageDims = ImageDims::new(512, 512);

    fn gray(w: u32, h: u32) -> Raster {
        RgbImage::from_pixel(w, h, Rgb([90, 90, 90]))
    }

    #[test]
    fn mark_size_examples() {
        assert_eq!(get_mark_size("7", D512).unwrap(), (16, 12));
        assert_eq!(get_mark_size("12", D512).unwrap(), (16, 20));
        assert_eq!(get_mark_size("7", ImageDims::new(1024, 1024)).unwrap(), (32, 24));
        assert!(get_mark_size("", D512).is_err());
    }

    #[test]
    fn empty_drawn_picks_tl() {
        let b = BBox::new(0.4, 0.4, 0.2, 0.2).unwrap();
        let c = find_optimal_corner(&b, &[], D512, (16, 12));
        assert_eq!(c.corner, Corner::Tl);
        assert!(!c.degraded);
    }

    #[test]
    fn corner_scores_against_left_neighbor() {
        // b spans [200, 300] x [200, 260]; d sits flush left of b covering
        // its full height: TL and BL touch d (score 0), TR and BR are both
        // exactly 100 px away, so the tie goes to TR.
        let b = BBox::from_pixels(200.0, 200.0, 100.0, 60.0, D512).unwrap();
        let d = BBox::from_pixels(150.0, 180.0, 50.0, 100.0, D512).unwrap();
        let c = find_optimal_corner(&b, &[d], D512, (16, 12));
        assert_eq!(c.corner, Corner::Tr);
        assert!((c.score - 100.0).abs() < 1e-9);
        assert_eq!(point_box_distance((200.0, 200.0), &d, D512), 0.0);
        assert_eq!(point_box_distance((200.0, 260.0), &d, D512), 0.0);
        assert!((point_box_distance((300.0, 260.0), &d, D512) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn corner_diagonal_neighbor_prefers_far_corner() {
        // d touches b's top-left corner diagonally: TR = 100, BL = 60,
        // BR = hypot(100, 60).
        let b = BBox::from_pixels(200.0, 200.0, 100.0, 60.0, D512).unwrap();
        let d = BBox::from_pixels(150.0, 150.0, 50.0, 50.0, D512).unwrap();
        let c = find_optimal_corner(&b, &[d], D512, (16, 12));
        assert_eq!(c.corner, Corner::Br);
        assert!((c.score - 100f64.hypot(60.0)).abs() < 1e-9);
    }

    #[test]
    fn full_image_box_falls_back() {
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let c = find_optimal_corner(&b, &[], D512, (16, 12));
        assert!(c.degraded);
        assert_eq!(c.corner, Corner::Tl);
        assert!(c.text_box.inside(D512));

        let out = apply_som(&gray(512, 512), &[b], "img").unwrap();
        assert_eq!(out.warnings, vec![Warning::PlacementDegraded { label: 1 }]);
        assert!(out.placements[0].text_box.inside(D512));
    }

    #[test]
    fn zero_boxes_is_identity() {
        let img = gray(64, 48);
        let out = apply_som(&img, &[], "x").unwrap();
        assert_eq!(out.raster, img);
        assert!(out.marks.is_empty());
    }

    #[test]
    fn disjoint_boxes_labels_clear_of_boxes() {
        let a = BBox::from_pixels(20.0, 40.0, 100.0, 80.0, D512).unwrap();
        let b = BBox::from_pixels(380.0, 380.0, 100.0, 80.0, D512).unwrap();
        let out = apply_som(&gray(512, 512), &[a, b], "x").unwrap();
        assert_eq!(out.marks.labels().collect::<Vec<_>>(), vec![1, 2]);
        for p in &out.placements {
            for bx in [a, b] {
                let (x0, y0, x1, y1) = box_px(&bx, D512);
                // Box interior shrunk by the 1 px outline margin.
                let interior = PixelRect {
                    x: x0 + 1,
                    y: y0 + 1,
                    w: x1 - x0 - 2,
                    h: y1 - y0 - 2,
                };
                assert!(!p.text_box.intersects(&interior), "{p:?}");
            }
        }
    }

    #[test]
    fn labels_sit_on_their_box_corner() {
        let boxes = [
            BBox::from_pixels(10.0, 30.0, 60.0, 40.0, D512).unwrap(),
            BBox::from_pixels(60.0, 50.0, 80.0, 30.0, D512).unwrap(),
            BBox::from_pixels(300.0, 470.0, 120.0, 42.0, D512).unwrap(),
        ];
        let out = apply_som(&gray(512, 512), &boxes, "x").unwrap();
        for (p, b) in out.placements.iter().zip(&boxes) {
            let bc = corner_anchor(p.corner, box_px(b, D512));
            assert_eq!(p.anchor, bc);
            assert!(p.text_box.corners().contains(&bc));
            assert!(p.text_box.inside(D512));
        }
        // Top-left label sits above the box, so the bottom-edge box cannot
        // use a bottom corner.
        assert!(matches!(out.placements[2].corner, Corner::Tl | Corner::Tr));
    }

    #[test]
    fn label_pixels_are_white_text_on_palette() {
        let b = BBox::from_pixels(100.0, 100.0, 100.0, 100.0, D512).unwrap();
        let out = apply_som(&gray(512, 512), &[b], "x").unwrap();
        let tb = out.placements[0].text_box;
        let mut white = 0;
        let mut bg = 0;
        for y in tb.y..tb.y + tb.h {
            for x in tb.x..tb.x + tb.w {
                match *out.raster.get_pixel(x as u32, y as u32) {
                    WHITE => white += 1,
                    c if c == palette(1) => bg += 1,
                    c => panic!("unexpected {c:?}"),
                }
            }
        }
        assert!(white > 10 && bg > white);
    }

    #[test]
    fn marks_keep_input_coordinates() {
        let b = BBox::new(0.123456789, 0.2, 0.3, 0.1).unwrap();
        let out = apply_som(&gray(300, 200), &[b], "x").unwrap();
        assert_eq!(out.marks.get(1), Some(&Mark::Box(b)));
    }

    #[test]
    fn point_marks() {
        let img = gray(512, 512);
        let out = apply_som_points(&img, &[Point2::raw(0.5, 0.5)], "f").unwrap();
        assert_eq!(out.marks.get(1), Some(&Mark::Point(Point2::raw(0.5, 0.5))));
        assert_ne!(out.raster, img);

        let out = apply_som_points(&img, &[Point2::raw(0.0, 0.0)], "f").unwrap();
        assert!(out.placements[0].text_box.inside(D512));
        assert!(out.placements[0].text_box.x >= 0 && out.placements[0].text_box.y >= 0);

        let cluster: Vec<_> = (0..5)
            .map(|i| Point2::raw(0.98 + 0.004 * i as f64, 0.99))
            .collect();
        let out = apply_som_points(&img, &cluster, "f").unwrap();
        assert_eq!(out.marks.labels().collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
        assert!(out.placements.iter().all(|p| p.text_box.inside(D512)));

        assert!(apply_som_points(&img, &[Point2::raw(1.2, 0.5)], "f").is_err());
    }

    #[test]
    fn markset_json_shape() {
        let ms = MarkSet::numbered(
            "a.png",
            vec![
                Mark::Box(BBox::new(0.1, 0.1, 0.2, 0.2).unwrap()),
                Mark::Point(Point2::raw(0.5, 0.25)),
            ],
            1,
        );
        let s = serde_json::to_string(&ms).unwrap();
        assert_eq!(
            s,
            r#"{"image":"a.png","marks":{"1":[0.1,0.1,0.2,0.2],"2":[0.5,0.25]}}"#
        );
        assert_eq!(serde_json::from_str::<MarkSet>(&s).unwrap(), ms);
        assert!(ms.is_consecutive_from(1));
        assert!(ms.sub_range(2..3).is_consecutive_from(2));
    }

    #[test]
    fn rendering_is_deterministic() {
        let boxes: Vec<_> = (0..12)
            .map(|i| BBox::new(0.05 * i as f64, 0.07 * (i % 5) as f64 + 0.05, 0.1, 0.08).unwrap())
            .collect();
        let a = apply_som(&gray(400, 300), &boxes, "x").unwrap();
        let b = apply_som(&gray(400, 300), &boxes, "x").unwrap();
        assert_eq!(a.raster.as_raw(), b.raster.as_raw());
        assert_eq!(a.placements, b.placements);
    }
}
