//! Dense optical flow, flow median filtering and global (camera) motion.
//!
//! Flow is pyramidal Lucas-Kanade evaluated at every pixel. Each pyramid
//! level warps the second image by the current flow estimate and solves the
//! windowed 2x2 normal equations per pixel, with the window sums taken from
//! integral images so the cost is independent of the window size.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::media::{bilinear, Frame};
use crate::par;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("frame dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("affine fit is degenerate: sample points are collinear")]
    DegenerateFit,
    #[error("bad flow dump: {0}")]
    BadDump(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    pub levels: usize,
    /// Odd window side.
    pub window: usize,
    pub iterations: usize,
    /// Tikhonov term added to the structure tensor diagonal.
    pub regularization: f32,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            levels: 3,
            window: 15,
            iterations: 6,
            regularization: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        FlowField {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Self {
        let mut out = FlowField::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = f(x, y);
                out.u[y * width + x] = u;
                out.v[y * width + x] = v;
            }
        }
        out
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// Edge-clamped bilinear flow at a sub-pixel position.
    pub fn sample(&self, x: f32, y: f32) -> (f32, f32) {
        (
            bilinear(&self.u, self.width, self.height, x, y),
            bilinear(&self.v, self.width, self.height, x, y),
        )
    }

    /// Mean flow over pixels at least `border` px from every edge.
    pub fn interior_mean(&self, border: usize) -> (f64, f64) {
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
        for y in border..self.height.saturating_sub(border) {
            for x in border..self.width.saturating_sub(border) {
                let (u, v) = self.at(x, y);
                su += u as f64;
                sv += v as f64;
                n += 1;
            }
        }
        if n == 0 {
            (0.0, 0.0)
        } else {
            (su / n as f64, sv / n as f64)
        }
    }

    /// Average endpoint error against a constant true flow over the interior.
    pub fn interior_epe(&self, truth: (f64, f64), border: usize) -> f64 {
        let (mut s, mut n) = (0.0, 0usize);
        for y in border..self.height.saturating_sub(border) {
            for x in border..self.width.saturating_sub(border) {
                let (u, v) = self.at(x, y);
                s += (u as f64 - truth.0).hypot(v as f64 - truth.1);
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }

    /// 16-byte header (`b"TJFLOW01"`, width u32, height u32) followed by the
    /// u plane and the v plane as little-endian f32.
    pub fn write_dump(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(FLOW_MAGIC)?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        for plane in [&self.u, &self.v] {
            for x in plane.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_dump(r: &mut impl Read) -> Result<Self, FlowError> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[..8] != FLOW_MAGIC {
            return Err(FlowError::BadDump("bad magic".into()));
        }
        let width = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let mut out = FlowField::zeros(width, height);
        let mut buf = [0u8; 4];
        for plane in [&mut out.u, &mut out.v] {
            for x in plane.iter_mut() {
                r.read_exact(&mut buf)?;
                *x = f32::from_le_bytes(buf);
            }
        }
        Ok(out)
    }

    pub fn save_dump(&self, path: &Path) -> Result<(), FlowError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_dump(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

pub const FLOW_MAGIC: &[u8; 8] = b"TJFLOW01";

/// Grayscale plane used inside the pyramid.
#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    d: Vec<f32>,
}

impl Plane {
    fn at(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.d[y * self.w + x]
    }

    /// Binomial 5-tap blur then 2x decimation.
    fn downsample(&self) -> Plane {
        const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let mut tmp = vec![0.0f32; self.w * self.h];
        for y in 0..self.h {
            for x in 0..self.w {
                let mut s = 0.0;
                for (k, c) in K.iter().enumerate() {
                    s += c * self.at(x as isize + k as isize - 2, y as isize);
                }
                tmp[y * self.w + x] = s;
            }
        }
        let t = Plane {
            w: self.w,
            h: self.h,
            d: tmp,
        };
        let (nw, nh) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut d = vec![0.0f32; nw * nh];
        for y in 0..nh {
            for x in 0..nw {
                let mut s = 0.0;
                for (k, c) in K.iter().enumerate() {
                    s += c * t.at(2 * x as isize, 2 * y as isize + k as isize - 2);
                }
                d[y * nw + x] = s;
            }
        }
        Plane { w: nw, h: nh, d }
    }
}

fn pyramid(f: &Frame, levels: usize) -> Vec<Plane> {
    let mut out = vec![Plane {
        w: f.width(),
        h: f.height(),
        d: f.pixels().to_vec(),
    }];
    for _ in 1..levels {
        let last = out.last().unwrap();
        if last.w < 8 || last.h < 8 {
            break;
        }
        out.push(last.downsample());
    }
    out
}

/// Central-difference gradients with edge clamping.
pub(crate) fn gradients(d: &[f32], w: usize, h: usize) -> (Vec<f32>, Vec<f32>) {
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    for y in 0..h {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            gx[y * w + x] = (d[y * w + xp] - d[y * w + xm]) * 0.5;
            gy[y * w + x] = (d[yp * w + x] - d[ym * w + x]) * 0.5;
        }
    }
    (gx, gy)
}

/// Dense flow from `a` towards `b` with default parameters.
pub fn compute_flow(a: &Frame, b: &Frame) -> Result<FlowField, FlowError> {
    compute_flow_with(a, b, &FlowParams::default())
}

pub fn compute_flow_with(a: &Frame, b: &Frame, params: &FlowParams) -> Result<FlowField, FlowError> {
    if a.dims() != b.dims() {
        return Err(FlowError::DimensionMismatch {
            a: a.dims(),
            b: b.dims(),
        });
    }
    let levels = params.levels.max(1);
    let pa = pyramid(a, levels);
    let pb = pyramid(b, levels);
    let r = params.window / 2;
    let eps = params.regularization;

    let mut flow: Option<FlowField> = None;
    for lvl in (0..pa.len()).rev() {
        let (ia, ib) = (&pa[lvl], &pb[lvl]);
        let (w, h) = (ia.w, ia.h);
        let mut f = match flow.take() {
            None => FlowField::zeros(w, h),
            Some(coarse) => FlowField::from_fn(w, h, |x, y| {
                let (u, v) = coarse.sample(x as f32 / 2.0, y as f32 / 2.0);
                (2.0 * u, 2.0 * v)
            }),
        };
        let (gx, gy) = gradients(&ia.d, w, h);
        let (xmax, ymax) = ((w - 1) as f32, (h - 1) as f32);

        // every pixel refines its own displacement over its whole window;
        // window pixels that warp outside the second frame are left out
        let rows = par::map_range(h, |y| {
            let mut out = Vec::with_capacity(w);
            let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
            for x in 0..w {
                let i = y * w + x;
                let (mut u, mut v) = (f.u[i], f.v[i]);
                let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
                for _ in 0..params.iterations {
                    let (mut a11, mut a12, mut a22) = (eps, 0.0f32, eps);
                    let (mut bx, mut by) = (0.0f32, 0.0f32);
                    // the displacement is shared by the whole window, so the
                    // bilinear weights are too
                    let (iu, iv) = (u.floor(), v.floor());
                    let (fx, fy) = (u - iu, v - iv);
                    let (w00, w01, w10, w11) = ((1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy);
                    let xs = (x0 as isize).max((-u).ceil() as isize);
                    let xe = (x1 as isize - 1).min((xmax - u).floor() as isize);
                    let ys = (y0 as isize).max((-v).ceil() as isize);
                    let ye = (y1 as isize - 1).min((ymax - v).floor() as isize);
                    for yy in ys..=ye {
                        let sy = (yy + iv as isize) as usize;
                        let (r0, r1) = (sy * w, (sy + 1).min(h - 1) * w);
                        for xx in xs..=xe {
                            let sx = (xx + iu as isize) as usize;
                            let sx1 = (sx + 1).min(w - 1);
                            let warped = w00 * ib.d[r0 + sx] + w01 * ib.d[r0 + sx1] + w10 * ib.d[r1 + sx] + w11 * ib.d[r1 + sx1];
                            let j = yy as usize * w + xx as usize;
                            let (ex, ey) = (gx[j], gy[j]);
                            let it = warped - ia.d[j];
                            a11 += ex * ex;
                            a12 += ex * ey;
                            a22 += ey * ey;
                            bx += ex * it;
                            by += ey * it;
                        }
                    }
                    let det = a11 * a22 - a12 * a12;
                    if det <= 1e-12 {
                        break;
                    }
                    let du = -(a22 * bx - a12 * by) / det;
                    let dv = -(a11 * by - a12 * bx) / det;
                    u += du;
                    v += dv;
                    if du.abs().max(dv.abs()) < 1e-2 {
                        break;
                    }
                }
                out.push((u, v));
            }
            out
        });
        for (y, row) in rows.into_iter().enumerate() {
            for (x, (u, v)) in row.into_iter().enumerate() {
                f.u[y * w + x] = u;
                f.v[y * w + x] = v;
            }
        }
        flow = Some(f);
    }
    Ok(flow.expect("at least one pyramid level"))
}

fn median_of(buf: &mut [f32]) -> f32 {
    let mid = buf.len() / 2;
    let (_, m, _) = buf.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// Per-component median over the edge-clamped `(2r+1)^2` neighbourhood.
pub fn median_filter_flow(f: &FlowField, radius: usize) -> FlowField {
    let radius = radius.max(1) as isize;
    let (w, h) = (f.width as isize, f.height as isize);
    let mut out = FlowField::zeros(f.width, f.height);
    let side = (2 * radius + 1) as usize;
    let mut bu = Vec::with_capacity(side * side);
    let mut bv = Vec::with_capacity(side * side);
    for y in 0..h {
        for x in 0..w {
            bu.clear();
            bv.clear();
            for dy in -radius..=radius {
                let yy = (y + dy).clamp(0, h - 1) as usize;
                for dx in -radius..=radius {
                    let xx = (x + dx).clamp(0, w - 1) as usize;
                    bu.push(f.u[yy * f.width + xx]);
                    bv.push(f.v[yy * f.width + xx]);
                }
            }
            let i = y as usize * f.width + x as usize;
            out.u[i] = median_of(&mut bu);
            out.v[i] = median_of(&mut bv);
        }
    }
    out
}

/// Affine map from pixel coordinates in frame t to frame t+1:
/// `x' = m[0][0] x + m[0][1] y + m[0][2]`, `y' = m[1][0] x + m[1][1] y + m[1][2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalMotion {
    pub m: [[f64; 3]; 2],
}

impl Default for GlobalMotion {
    fn default() -> Self {
        GlobalMotion::identity()
    }
}

impl GlobalMotion {
    pub fn identity() -> Self {
        GlobalMotion {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        GlobalMotion {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty]],
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.m[0][0] * x + self.m[0][1] * y + self.m[0][2],
            self.m[1][0] * x + self.m[1][1] * y + self.m[1][2],
        )
    }

    /// Displacement the model predicts for a point at `(x, y)`.
    pub fn displacement(&self, x: f64, y: f64) -> (f64, f64) {
        let (xp, yp) = self.apply(x, y);
        (xp - x, yp - y)
    }

    pub fn translation_part(&self) -> (f64, f64) {
        (self.m[0][2], self.m[1][2])
    }

    pub fn linear_part(&self) -> [[f64; 2]; 2] {
        [[self.m[0][0], self.m[0][1]], [self.m[1][0], self.m[1][1]]]
    }
}

struct Sample {
    x: f64,
    y: f64,
    u: f64,
    v: f64,
}

/// Least-squares fit of `u = a0 + a1 x + a2 y`, `v = b0 + b1 x + b2 y` in
/// coordinates centred at `c`.
fn fit_affine(samples: &[&Sample], c: (f64, f64)) -> Result<([f64; 3], [f64; 3]), FlowError> {
    let mut ata = [[0.0f64; 3]; 3];
    let mut atu = [0.0f64; 3];
    let mut atv = [0.0f64; 3];
    for s in samples {
        let row = [1.0, s.x - c.0, s.y - c.1];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            atu[i] += row[i] * s.u;
            atv[i] += row[i] * s.v;
        }
    }
    let n = samples.len() as f64;
    // scale-free collinearity check on the centred second moments
    let sxx = ata[1][1] / n - (ata[0][1] / n).powi(2);
    let syy = ata[2][2] / n - (ata[0][2] / n).powi(2);
    let sxy = ata[1][2] / n - (ata[0][1] / n) * (ata[0][2] / n);
    if samples.len() < 3 || sxx * syy - sxy * sxy <= 1e-9 * (sxx + syy).powi(2).max(1e-300) {
        return Err(FlowError::DegenerateFit);
    }
    let a = solve3(ata, atu).ok_or(FlowError::DegenerateFit)?;
    let b = solve3(ata, atv).ok_or(FlowError::DegenerateFit)?;
    Ok((a, b))
}

fn solve3(m: [[f64; 3]; 3], rhs: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut mk = m;
        for i in 0..3 {
            mk[i][k] = rhs[i];
        }
        *o = det(&mk) / d;
    }
    Some(out)
}

fn to_motion(a: [f64; 3], b: [f64; 3], c: (f64, f64)) -> GlobalMotion {
    // u = a0 + a1 (x - cx) + a2 (y - cy)
    let tu = a[0] - a[1] * c.0 - a[2] * c.1;
    let tv = b[0] - b[1] * c.0 - b[2] * c.1;
    GlobalMotion {
        m: [[1.0 + a[1], a[2], tu], [b[1], 1.0 + b[2], tv]],
    }
}

/// Robust affine camera-motion estimate from a flow field.
///
/// Fits on a uniform subsample (at most ~4096 points). Starts from the
/// median translation, then alternates between keeping samples within twice
/// the median residual (floored at 0.05 px) and refitting, until the inlier
/// set stops changing or after eight rounds.
pub fn estimate_global_motion(f: &FlowField) -> Result<GlobalMotion, FlowError> {
    let total = f.width * f.height;
    if total == 0 {
        return Err(FlowError::DegenerateFit);
    }
    let stride = ((total as f64 / 4096.0).sqrt().ceil() as usize).max(1);
    let mut samples = Vec::new();
    for y in (0..f.height).step_by(stride) {
        for x in (0..f.width).step_by(stride) {
            let (u, v) = f.at(x, y);
            samples.push(Sample {
                x: x as f64,
                y: y as f64,
                u: u as f64,
                v: v as f64,
            });
        }
    }
    let c = ((f.width - 1) as f64 / 2.0, (f.height - 1) as f64 / 2.0);
    let median = |mut xs: Vec<f64>| {
        xs.sort_by(|a, b| a.total_cmp(b));
        xs[xs.len() / 2]
    };
    let mu = median(samples.iter().map(|s| s.u).collect());
    let mv = median(samples.iter().map(|s| s.v).collect());
    let mut model = GlobalMotion {
        m: [[1.0, 0.0, mu], [0.0, 1.0, mv]],
    };
    let mut fitted = false;
    let mut last: Vec<bool> = Vec::new();
    for _ in 0..8 {
        let residuals: Vec<f64> = samples
            .iter()
            .map(|s| {
                let (du, dv) = model.displacement(s.x, s.y);
                (s.u - du).hypot(s.v - dv)
            })
            .collect();
        let cut = (2.0 * median(residuals.clone())).max(0.05);
        let inlier: Vec<bool> = residuals.iter().map(|r| *r <= cut).collect();
        if inlier == last {
            break;
        }
        let kept: Vec<&Sample> = samples.iter().zip(&inlier).filter(|(_, k)| **k).map(|(s, _)| s).collect();
        match fit_affine(&kept, c) {
            Ok((a, b)) => {
                model = to_motion(a, b, c);
                fitted = true;
            }
            Err(_) => break,
        }
        last = inlier;
    }
    if !fitted {
        let all: Vec<&Sample> = samples.iter().collect();
        let (a, b) = fit_affine(&all, c)?;
        model = to_motion(a, b, c);
    }
    Ok(model)
}
