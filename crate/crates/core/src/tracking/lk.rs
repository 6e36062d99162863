//! Pyramidal iterative Lucas-Kanade with forward-backward occlusion checks.

use image::GrayImage;

use super::TrackerConfig;

/// Convergence threshold on the per-iteration update, in level pixels.
const STEP_EPS: f32 = 0.01;
/// Minimum eigenvalue of the per-pixel structure tensor for an update.
const MIN_EIG: f32 = 1e-3;

pub(crate) struct Level {
    w: usize,
    h: usize,
    img: Vec<f32>,
    gx: Vec<f32>,
    gy: Vec<f32>,
}

/// Image pyramid with Scharr gradients, finest level first.
pub(crate) struct Pyramid {
    levels: Vec<Level>,
}

impl Pyramid {
    pub(crate) fn build(frame: &GrayImage, levels: usize) -> Self {
        let (w, h) = (frame.width() as usize, frame.height() as usize);
        let mut img: Vec<f32> = frame.as_raw().iter().map(|&v| v as f32).collect();
        let (mut w, mut h) = (w, h);
        let mut out = Vec::with_capacity(levels);
        for l in 0..levels {
            if l > 0 {
                if w < 8 || h < 8 {
                    break;
                }
                let (nimg, nw, nh) = downsample(&img, w, h);
                img = nimg;
                w = nw;
                h = nh;
            }
            let (gx, gy) = scharr(&img, w, h);
            out.push(Level {
                w,
                h,
                img: img.clone(),
                gx,
                gy,
            });
        }
        Pyramid { levels: out }
    }

    pub(crate) fn depth(&self) -> usize {
        self.levels.len()
    }
}

fn clampi(v: isize, hi: usize) -> usize {
    v.clamp(0, hi as isize - 1) as usize
}

/// 5-tap binomial blur followed by 2x decimation, replicating borders.
fn downsample(img: &[f32], w: usize, h: usize) -> (Vec<f32>, usize, usize) {
    const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let nw = w.div_ceil(2);
    let nh = h.div_ceil(2);
    let mut tmp = vec![0.0f32; nw * h];
    for y in 0..h {
        let row = &img[y * w..(y + 1) * w];
        for nx in 0..nw {
            let cx = (2 * nx) as isize;
            let mut acc = 0.0;
            for (k, kv) in K.iter().enumerate() {
                acc += kv * row[clampi(cx + k as isize - 2, w)];
            }
            tmp[y * nw + nx] = acc;
        }
    }
    let mut out = vec![0.0f32; nw * nh];
    for ny in 0..nh {
        let cy = (2 * ny) as isize;
        for nx in 0..nw {
            let mut acc = 0.0;
            for (k, kv) in K.iter().enumerate() {
                acc += kv * tmp[clampi(cy + k as isize - 2, h) * nw + nx];
            }
            out[ny * nw + nx] = acc;
        }
    }
    (out, nw, nh)
}

/// Scharr derivatives scaled to intensity per pixel.
fn scharr(img: &[f32], w: usize, h: usize) -> (Vec<f32>, Vec<f32>) {
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    let at = |x: isize, y: isize| img[clampi(y, h) * w + clampi(x, w)];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let dx = 3.0 * (at(x + 1, y - 1) - at(x - 1, y - 1))
                + 10.0 * (at(x + 1, y) - at(x - 1, y))
                + 3.0 * (at(x + 1, y + 1) - at(x - 1, y + 1));
            let dy = 3.0 * (at(x - 1, y + 1) - at(x - 1, y - 1))
                + 10.0 * (at(x, y + 1) - at(x, y - 1))
                + 3.0 * (at(x + 1, y + 1) - at(x + 1, y - 1));
            let i = y as usize * w + x as usize;
            gx[i] = dx / 32.0;
            gy[i] = dy / 32.0;
        }
    }
    (gx, gy)
}

/// Square window centred at a subpixel location. All taps share the same
/// bilinear weights; taps outside the level are clamped and masked.
struct Window {
    x0: isize,
    y0: isize,
    r: isize,
    wx: f32,
    wy: f32,
}

impl Window {
    fn new(cx: f64, cy: f64, r: usize) -> Self {
        let fx = cx.floor();
        let fy = cy.floor();
        Window {
            x0: fx as isize,
            y0: fy as isize,
            r: r as isize,
            wx: (cx - fx) as f32,
            wy: (cy - fy) as f32,
        }
    }

    fn interior(&self, w: usize, h: usize) -> bool {
        self.x0 - self.r >= 0
            && self.y0 - self.r >= 0
            && self.x0 + self.r + 1 < w as isize
            && self.y0 + self.r + 1 < h as isize
    }

    /// Bilinear samples of `buf` for every tap, row-major.
    fn sample(&self, buf: &[f32], w: usize, h: usize, out: &mut Vec<f32>) {
        out.clear();
        let (wx, wy) = (self.wx, self.wy);
        let (a, b, c, d) = ((1.0 - wx) * (1.0 - wy), wx * (1.0 - wy), (1.0 - wx) * wy, wx * wy);
        let r = self.r;
        if self.interior(w, h) {
            let xs = (self.x0 - r) as usize;
            let n = (2 * r + 1) as usize;
            for yi in self.y0 - r..=self.y0 + r {
                let base = yi as usize * w + xs;
                let row0 = &buf[base..base + n + 1];
                let row1 = &buf[base + w..base + w + n + 1];
                for k in 0..n {
                    out.push(a * row0[k] + b * row0[k + 1] + c * row1[k] + d * row1[k + 1]);
                }
            }
            return;
        }
        for yi in self.y0 - r..=self.y0 + r {
            let (r0, r1) = (clampi(yi, h) * w, clampi(yi + 1, h) * w);
            for xi in self.x0 - r..=self.x0 + r {
                let (c0, c1) = (clampi(xi, w), clampi(xi + 1, w));
                out.push(a * buf[r0 + c0] + b * buf[r0 + c1] + c * buf[r1 + c0] + d * buf[r1 + c1]);
            }
        }
    }

    fn mask(&self, w: usize, h: usize, out: &mut Vec<bool>) {
        out.clear();
        let r = self.r;
        for yi in self.y0 - r..=self.y0 + r {
            let row_ok = yi >= 0 && (yi as usize) < h;
            for xi in self.x0 - r..=self.x0 + r {
                out.push(row_ok && xi >= 0 && (xi as usize) < w);
            }
        }
    }
}

/// Scratch buffers reused across points.
#[derive(Default)]
pub(crate) struct Scratch {
    t: Vec<f32>,
    gx: Vec<f32>,
    gy: Vec<f32>,
    j: Vec<f32>,
    mask: Vec<bool>,
}

/// Tracks one point (level-0 array coordinates) from `prev` to `next`.
/// Returns `None` when the solution diverges to non-finite values.
pub(crate) fn track_point(
    prev: &Pyramid,
    next: &Pyramid,
    p: (f64, f64),
    cfg: &TrackerConfig,
    s: &mut Scratch,
) -> Option<(f64, f64)> {
    let r = cfg.window / 2;
    let depth = prev.depth().min(next.depth());
    let mut g = (0.0f64, 0.0f64);
    for l in (0..depth).rev() {
        let scale = (1usize << l) as f64;
        let (cx, cy) = (p.0 / scale, p.1 / scale);
        let lp = &prev.levels[l];
        let ln = &next.levels[l];

        let tw = Window::new(cx, cy, r);
        tw.sample(&lp.img, lp.w, lp.h, &mut s.t);
        tw.sample(&lp.gx, lp.w, lp.h, &mut s.gx);
        tw.sample(&lp.gy, lp.w, lp.h, &mut s.gy);
        tw.mask(lp.w, lp.h, &mut s.mask);

        let (mut gxx, mut gxy, mut gyy, mut n) = (0.0f32, 0.0f32, 0.0f32, 0usize);
        for i in 0..s.t.len() {
            if s.mask[i] {
                gxx += s.gx[i] * s.gx[i];
                gxy += s.gx[i] * s.gy[i];
                gyy += s.gy[i] * s.gy[i];
                n += 1;
            }
        }
        let det = gxx * gyy - gxy * gxy;
        let tr = gxx + gyy;
        let min_eig = (tr - ((gxx - gyy).powi(2) + 4.0 * gxy * gxy).sqrt()) / 2.0;
        let textured = n > 0 && det > 0.0 && min_eig / n as f32 >= MIN_EIG;

        let mut v = (0.0f64, 0.0f64);
        if textured {
            for _ in 0..cfg.max_iters {
                let jw = Window::new(cx + g.0 + v.0, cy + g.1 + v.1, r);
                jw.sample(&ln.img, ln.w, ln.h, &mut s.j);
                let (mut bx, mut by) = (0.0f32, 0.0f32);
                for i in 0..s.t.len() {
                    if s.mask[i] {
                        let diff = s.t[i] - s.j[i];
                        bx += diff * s.gx[i];
                        by += diff * s.gy[i];
                    }
                }
                let ex = (gyy * bx - gxy * by) / det;
                let ey = (gxx * by - gxy * bx) / det;
                if !(ex.is_finite() && ey.is_finite()) {
                    return None;
                }
                v.0 += ex as f64;
                v.1 += ey as f64;
                if ex * ex + ey * ey < STEP_EPS * STEP_EPS {
                    break;
                }
            }
        }
        g = if l > 0 {
            (2.0 * (g.0 + v.0), 2.0 * (g.1 + v.1))
        } else {
            (g.0 + v.0, g.1 + v.1)
        };
    }
    let out = (p.0 + g.0, p.1 + g.1);
    (out.0.is_finite() && out.1.is_finite()).then_some(out)
}
