//! Dense trajectories: grid sampling, tracking through median-filtered
//! flow, pruning, and the Traj/HOG/HOF/MBH descriptors computed in a
//! space-time tube around each track.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{self, compute_flow_with, estimate_global_motion, median_filter_flow, FlowError, FlowField, FlowParams, GlobalMotion};
use crate::media::{Frame, VideoClip};
use crate::par;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("clip of {frames} frames is shorter than the {needed} frames a track needs")]
    ClipTooShort { frames: usize, needed: usize },
    #[error("trajectory starting at frame {start} leaves the clip or its flow fields")]
    OutOfBounds { start: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bad feature dump: {0}")]
    BadDump(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DtConfig {
    pub sample_stride: usize,
    pub track_length: usize,
    pub volume_size: usize,
    pub cells_spatial: usize,
    pub cells_temporal: usize,
    pub hog_bins: usize,
    /// Includes the zero-motion bin.
    pub hof_bins: usize,
    pub mbh_bins: usize,
    pub static_disp_threshold: f64,
    pub erratic_disp_threshold: f64,
    pub camera_residual_threshold: f64,
    pub median_radius: usize,
    /// Cornerness gate relative to the frame's strongest corner.
    pub min_quality: f64,
    /// Flow magnitude at or below which a pixel votes for the zero bin.
    pub hof_zero_threshold: f64,
    pub flow: FlowParams,
}

impl Default for DtConfig {
    fn default() -> Self {
        DtConfig {
            sample_stride: 5,
            track_length: 15,
            volume_size: 32,
            cells_spatial: 2,
            cells_temporal: 3,
            hog_bins: 8,
            hof_bins: 9,
            mbh_bins: 8,
            static_disp_threshold: 1.0,
            erratic_disp_threshold: 0.7 * 32.0,
            camera_residual_threshold: 0.5,
            median_radius: 1,
            min_quality: 0.001,
            hof_zero_threshold: 0.4,
            flow: FlowParams::default(),
        }
    }
}

impl DtConfig {
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let counts = [
            ("sample_stride", self.sample_stride),
            ("track_length", self.track_length),
            ("volume_size", self.volume_size),
            ("cells_spatial", self.cells_spatial),
            ("cells_temporal", self.cells_temporal),
            ("hog_bins", self.hog_bins),
            ("mbh_bins", self.mbh_bins),
            ("median_radius", self.median_radius),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(TrajectoryError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.hof_bins < 2 {
            return Err(TrajectoryError::InvalidConfig("hof_bins must be at least 2".into()));
        }
        if self.cells_spatial > self.volume_size || self.cells_temporal > self.track_length {
            return Err(TrajectoryError::InvalidConfig("more cells than volume extent".into()));
        }
        for (name, v) in [
            ("static_disp_threshold", self.static_disp_threshold),
            ("erratic_disp_threshold", self.erratic_disp_threshold),
            ("camera_residual_threshold", self.camera_residual_threshold),
        ] {
            if !(v > 0.0) {
                return Err(TrajectoryError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    fn cells(&self) -> usize {
        self.cells_spatial * self.cells_spatial * self.cells_temporal
    }

    pub fn traj_dim(&self) -> usize {
        2 * self.track_length
    }

    pub fn hog_dim(&self) -> usize {
        self.cells() * self.hog_bins
    }

    pub fn hof_dim(&self) -> usize {
        self.cells() * self.hof_bins
    }

    pub fn mbh_dim(&self) -> usize {
        2 * self.cells() * self.mbh_bins
    }

    /// Floats per feature-dump record: start frame, mean x, mean y, then
    /// the four descriptors.
    pub fn record_len(&self) -> usize {
        3 + self.traj_dim() + self.hog_dim() + self.hof_dim() + self.mbh_dim()
    }
}

/// A point tracked over `track_length` steps (`track_length + 1` positions).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start_frame: usize,
    pub points: Vec<(f64, f64)>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    pub fn displacements(&self) -> Vec<(f64, f64)> {
        self.points.windows(2).map(|w| (w[1].0 - w[0].0, w[1].1 - w[0].1)).collect()
    }

    pub fn step_magnitudes(&self) -> Vec<f64> {
        self.displacements().iter().map(|d| d.0.hypot(d.1)).collect()
    }

    pub fn path_length(&self) -> f64 {
        self.step_magnitudes().iter().sum()
    }

    pub fn mean_position(&self) -> (f64, f64) {
        let n = self.points.len().max(1) as f64;
        let (sx, sy) = self.points.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        (sx / n, sy / n)
    }

    pub fn end(&self) -> (f64, f64) {
        *self.points.last().expect("non-empty trajectory")
    }

    pub fn in_bounds(&self, width: usize, height: usize) -> bool {
        self.points
            .iter()
            .all(|p| p.0 >= 0.0 && p.1 >= 0.0 && p.0 <= (width - 1) as f64 && p.1 <= (height - 1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub traj: Vec<f64>,
    pub hog: Vec<f64>,
    pub hof: Vec<f64>,
    pub mbh: Vec<f64>,
}

/// Minimum eigenvalue of the 3x3 structure tensor at every pixel.
fn min_eigen_map(frame: &Frame) -> Vec<f32> {
    let (w, h) = frame.dims();
    let (gx, gy) = flow::gradients(frame.pixels(), w, h);
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut a, mut b, mut c) = (0.0f32, 0.0f32, 0.0f32);
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let i = yy * w + xx;
                    a += gx[i] * gx[i];
                    b += gx[i] * gy[i];
                    c += gy[i] * gy[i];
                }
            }
            let half_tr = (a + c) / 2.0;
            let disc = (((a - c) / 2.0).powi(2) + b * b).sqrt();
            out[y * w + x] = (half_tr - disc).max(0.0);
        }
    }
    out
}

fn grid_nodes(extent: usize, stride: usize) -> impl Iterator<Item = usize> {
    (stride / 2..extent).step_by(stride)
}

fn sample_with_eigen(eig: &[f32], w: usize, h: usize, cfg: &DtConfig, existing: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let max_eig = eig.iter().copied().fold(0.0f32, f32::max) as f64;
    if max_eig <= 1e-10 {
        return Vec::new();
    }
    let threshold = cfg.min_quality * max_eig;
    let stride = cfg.sample_stride;
    let radius = stride as f64 / 2.0;
    // bucket existing points by stride-sized cells for the coverage test
    let (gw, gh) = (w.div_ceil(stride), h.div_ceil(stride));
    let mut buckets: Vec<Vec<(f64, f64)>> = vec![Vec::new(); gw * gh];
    for &p in existing {
        let cx = ((p.0.max(0.0) as usize) / stride).min(gw - 1);
        let cy = ((p.1.max(0.0) as usize) / stride).min(gh - 1);
        buckets[cy * gw + cx].push(p);
    }
    let covered = |x: f64, y: f64| {
        let cx = (x as usize / stride) as isize;
        let cy = (y as usize / stride) as isize;
        for by in cy - 1..=cy + 1 {
            for bx in cx - 1..=cx + 1 {
                if bx < 0 || by < 0 || bx >= gw as isize || by >= gh as isize {
                    continue;
                }
                if buckets[by as usize * gw + bx as usize]
                    .iter()
                    .any(|p| (p.0 - x).hypot(p.1 - y) < radius)
                {
                    return true;
                }
            }
        }
        false
    };
    let mut out = Vec::new();
    for y in grid_nodes(h, stride) {
        for x in grid_nodes(w, stride) {
            if (eig[y * w + x] as f64) > threshold && !covered(x as f64, y as f64) {
                out.push((x as f64, y as f64));
            }
        }
    }
    out
}

/// Grid points at `sample_stride` that carry enough texture and are not
/// already covered by an active track.
pub fn sample_dense_points(frame: &Frame, cfg: &DtConfig, existing: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let eig = min_eigen_map(frame);
    sample_with_eigen(&eig, frame.width(), frame.height(), cfg, existing)
}

/// Median-filtered flow for every consecutive frame pair.
pub fn compute_clip_flows(clip: &VideoClip, cfg: &DtConfig) -> Result<Vec<FlowField>, TrajectoryError> {
    let pairs = clip.frame_count().saturating_sub(1);
    let flows = par::map_range(pairs, |t| {
        compute_flow_with(clip.frame(t), clip.frame(t + 1), &cfg.flow).map(|f| median_filter_flow(&f, cfg.median_radius))
    });
    Ok(flows.into_iter().collect::<Result<Vec<_>, _>>()?)
}

/// Camera motion per frame pair; degenerate fits fall back to identity.
pub fn estimate_global_motions(flows: &[FlowField]) -> Vec<GlobalMotion> {
    par::map(flows, |f| estimate_global_motion(f).unwrap_or_else(|_| GlobalMotion::identity()))
}

/// Tracks densely sampled points through the clip.
pub fn track_points(clip: &VideoClip, cfg: &DtConfig) -> Result<Vec<Trajectory>, TrajectoryError> {
    cfg.validate()?;
    check_length(clip, cfg)?;
    let flows = compute_clip_flows(clip, cfg)?;
    track_points_with_flows(clip, &flows, cfg)
}

fn check_length(clip: &VideoClip, cfg: &DtConfig) -> Result<(), TrajectoryError> {
    if clip.frame_count() < cfg.track_length + 1 {
        return Err(TrajectoryError::ClipTooShort {
            frames: clip.frame_count(),
            needed: cfg.track_length + 1,
        });
    }
    Ok(())
}

/// Tracking over precomputed (median-filtered) flows. New points are
/// sampled in every frame where the grid is uncovered; a trajectory is
/// emitted once it has survived `track_length` in-bounds steps.
pub fn track_points_with_flows(
    clip: &VideoClip,
    flows: &[FlowField],
    cfg: &DtConfig,
) -> Result<Vec<Trajectory>, TrajectoryError> {
    check_length(clip, cfg)?;
    let (w, h) = (clip.width(), clip.height());
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    let eigs = par::map(clip.frames(), min_eigen_map);
    let mut active: Vec<Trajectory> = Vec::new();
    let mut done = Vec::new();
    for t in 0..clip.frame_count() - 1 {
        let existing: Vec<(f64, f64)> = active.iter().map(Trajectory::end).collect();
        for p in sample_with_eigen(&eigs[t], w, h, cfg, &existing) {
            active.push(Trajectory {
                start_frame: t,
                points: vec![p],
            });
        }
        let f = &flows[t];
        let mut next = Vec::with_capacity(active.len());
        for mut tr in active {
            let p = tr.end();
            let (u, v) = f.sample(p.0 as f32, p.1 as f32);
            let q = (p.0 + u as f64, p.1 + v as f64);
            if !(q.0 >= 0.0 && q.1 >= 0.0 && q.0 <= xmax && q.1 <= ymax) {
                continue;
            }
            tr.points.push(q);
            if tr.steps() == cfg.track_length {
                done.push(tr);
            } else {
                next.push(tr);
            }
        }
        active = next;
    }
    Ok(done)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneReason {
    Static,
    Erratic,
    CameraConsistent,
}

/// Which pruning rule (if any) rejects a trajectory.
pub fn prune_reason(t: &Trajectory, global: &[GlobalMotion], cfg: &DtConfig) -> Option<PruneReason> {
    let disps = t.displacements();
    let mags: Vec<f64> = disps.iter().map(|d| d.0.hypot(d.1)).collect();
    if mags.iter().sum::<f64>() < cfg.static_disp_threshold {
        return Some(PruneReason::Static);
    }
    if mags.iter().any(|m| *m > cfg.erratic_disp_threshold) {
        return Some(PruneReason::Erratic);
    }
    let mut residual = 0.0;
    for (i, d) in disps.iter().enumerate() {
        let model = global.get(t.start_frame + i).copied().unwrap_or_else(GlobalMotion::identity);
        let p = t.points[i];
        let e = model.displacement(p.0, p.1);
        residual += (d.0 - e.0).hypot(d.1 - e.1);
    }
    if residual / (disps.len().max(1) as f64) < cfg.camera_residual_threshold {
        return Some(PruneReason::CameraConsistent);
    }
    None
}

/// Drops static, erratic and camera-consistent trajectories.
pub fn prune_trajectories(trajs: &[Trajectory], global: &[GlobalMotion], cfg: &DtConfig) -> Vec<Trajectory> {
    trajs
        .iter()
        .filter(|t| prune_reason(t, global, cfg).is_none())
        .cloned()
        .collect()
}

/// Integral histogram over one frame: `(w+1) x (h+1) x bins` prefix sums.
struct IntegralHistogram {
    w: usize,
    h: usize,
    bins: usize,
    data: Vec<f64>,
}

impl IntegralHistogram {
    fn build(w: usize, h: usize, bins: usize, mut vote: impl FnMut(usize, &mut [f64])) -> Self {
        let iw = w + 1;
        let mut data = vec![0.0f64; iw * (h + 1) * bins];
        let mut px = vec![0.0f64; bins];
        let mut row = vec![0.0f64; bins];
        for y in 0..h {
            row.iter_mut().for_each(|r| *r = 0.0);
            for x in 0..w {
                px.iter_mut().for_each(|p| *p = 0.0);
                vote(y * w + x, &mut px);
                let dst = ((y + 1) * iw + x + 1) * bins;
                let up = (y * iw + x + 1) * bins;
                for b in 0..bins {
                    row[b] += px[b];
                    data[dst + b] = data[up + b] + row[b];
                }
            }
        }
        IntegralHistogram { w, h, bins, data }
    }

    /// Adds the histogram of `[x0, x1) x [y0, y1)` (clipped) into `out`.
    fn add_rect(&self, x0: isize, y0: isize, x1: isize, y1: isize, out: &mut [f64]) {
        let cx = |v: isize| v.clamp(0, self.w as isize) as usize;
        let cy = |v: isize| v.clamp(0, self.h as isize) as usize;
        let (x0, x1, y0, y1) = (cx(x0), cx(x1), cy(y0), cy(y1));
        if x0 >= x1 || y0 >= y1 {
            return;
        }
        let iw = self.w + 1;
        let at = |x: usize, y: usize| (y * iw + x) * self.bins;
        let (a, b, c, d) = (at(x1, y1), at(x0, y1), at(x1, y0), at(x0, y0));
        for k in 0..self.bins {
            out[k] += self.data[a + k] - self.data[b + k] - self.data[c + k] + self.data[d + k];
        }
    }
}

/// Magnitude-weighted orientation vote with linear interpolation between
/// the two nearest of `bins` bins over the full circle.
#[inline]
fn orientation_vote(dx: f32, dy: f32, bins: usize, out: &mut [f64]) {
    let mag = (dx as f64).hypot(dy as f64);
    if mag <= 0.0 {
        return;
    }
    let mut ang = (dy as f64).atan2(dx as f64);
    if ang < 0.0 {
        ang += std::f64::consts::TAU;
    }
    let f = ang / std::f64::consts::TAU * bins as f64;
    let b0 = (f.floor() as usize) % bins;
    let frac = f - f.floor();
    let b1 = (b0 + 1) % bins;
    out[b0] += mag * (1.0 - frac);
    out[b1] += mag * frac;
}

/// The four integral histograms of one frame: HOG, HOF, MBHx, MBHy.
struct FrameFields {
    hog: IntegralHistogram,
    hof: IntegralHistogram,
    mbhx: IntegralHistogram,
    mbhy: IntegralHistogram,
}

impl FrameFields {
    fn build(frame: &Frame, flow: &FlowField, cfg: &DtConfig) -> Self {
        let (w, h) = frame.dims();
        let (gx, gy) = flow::gradients(frame.pixels(), w, h);
        let (ux, uy) = flow::gradients(&flow.u, w, h);
        let (vx, vy) = flow::gradients(&flow.v, w, h);
        let hog = IntegralHistogram::build(w, h, cfg.hog_bins, |i, out| orientation_vote(gx[i], gy[i], cfg.hog_bins, out));
        let orient = cfg.hof_bins - 1;
        let zero = cfg.hof_zero_threshold;
        let hof = IntegralHistogram::build(w, h, cfg.hof_bins, |i, out| {
            let (u, v) = (flow.u[i], flow.v[i]);
            if (u as f64).hypot(v as f64) <= zero {
                out[orient] += 1.0;
            } else {
                orientation_vote(u, v, orient, &mut out[..orient]);
            }
        });
        let mbhx = IntegralHistogram::build(w, h, cfg.mbh_bins, |i, out| orientation_vote(ux[i], uy[i], cfg.mbh_bins, out));
        let mbhy = IntegralHistogram::build(w, h, cfg.mbh_bins, |i, out| orientation_vote(vx[i], vy[i], cfg.mbh_bins, out));
        FrameFields { hog, hof, mbhx, mbhy }
    }
}

/// Unnormalised cell sums for one trajectory.
struct TubeAccumulator {
    hog: Vec<f64>,
    hof: Vec<f64>,
    mbhx: Vec<f64>,
    mbhy: Vec<f64>,
}

impl TubeAccumulator {
    fn new(cfg: &DtConfig) -> Self {
        TubeAccumulator {
            hog: vec![0.0; cfg.hog_dim()],
            hof: vec![0.0; cfg.hof_dim()],
            mbhx: vec![0.0; cfg.mbh_dim() / 2],
            mbhy: vec![0.0; cfg.mbh_dim() / 2],
        }
    }

    /// Adds frame `i` of the trajectory (0-based within the track).
    fn add_frame(&mut self, fields: &FrameFields, centre: (f64, f64), i: usize, cfg: &DtConfig) {
        let n = cfg.volume_size as isize;
        let cs = cfg.volume_size / cfg.cells_spatial;
        let tcell = i * cfg.cells_temporal / cfg.track_length;
        let x0 = centre.0.round() as isize - n / 2;
        let y0 = centre.1.round() as isize - n / 2;
        for cy in 0..cfg.cells_spatial {
            for cx in 0..cfg.cells_spatial {
                let cell = (tcell * cfg.cells_spatial + cy) * cfg.cells_spatial + cx;
                let rx0 = x0 + (cx * cs) as isize;
                let ry0 = y0 + (cy * cs) as isize;
                let (rx1, ry1) = (rx0 + cs as isize, ry0 + cs as isize);
                let hb = cell * cfg.hog_bins;
                fields.hog.add_rect(rx0, ry0, rx1, ry1, &mut self.hog[hb..hb + cfg.hog_bins]);
                let fb = cell * cfg.hof_bins;
                fields.hof.add_rect(rx0, ry0, rx1, ry1, &mut self.hof[fb..fb + cfg.hof_bins]);
                let mb = cell * cfg.mbh_bins;
                fields.mbhx.add_rect(rx0, ry0, rx1, ry1, &mut self.mbhx[mb..mb + cfg.mbh_bins]);
                fields.mbhy.add_rect(rx0, ry0, rx1, ry1, &mut self.mbhy[mb..mb + cfg.mbh_bins]);
            }
        }
    }

    fn finish(mut self, traj: &Trajectory, cfg: &DtConfig) -> DescriptorSet {
        normalize_cells(&mut self.hog, cfg.hog_bins);
        normalize_cells(&mut self.hof, cfg.hof_bins);
        normalize_cells(&mut self.mbhx, cfg.mbh_bins);
        normalize_cells(&mut self.mbhy, cfg.mbh_bins);
        let mut mbh = self.mbhx;
        mbh.extend(self.mbhy);
        DescriptorSet {
            traj: traj_descriptor(traj),
            hog: self.hog,
            hof: self.hof,
            mbh,
        }
    }
}

/// L2-normalises each cell histogram; a cell without votes becomes the
/// uniform histogram.
pub fn normalize_cells(v: &mut [f64], bins: usize) {
    let uniform = 1.0 / (bins as f64).sqrt();
    for cell in v.chunks_mut(bins) {
        let norm = cell.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            cell.iter_mut().for_each(|x| *x = uniform);
        } else {
            cell.iter_mut().for_each(|x| *x /= norm);
        }
    }
}

/// Displacements divided by the total path length; all-zero for a
/// motionless track.
pub fn traj_descriptor(t: &Trajectory) -> Vec<f64> {
    let disps = t.displacements();
    let total: f64 = disps.iter().map(|d| d.0.hypot(d.1)).sum();
    if total <= 0.0 {
        return vec![0.0; 2 * disps.len()];
    }
    disps.iter().flat_map(|d| [d.0 / total, d.1 / total]).collect()
}

fn check_span(t: &Trajectory, clip: &VideoClip, flows: &[FlowField], cfg: &DtConfig) -> Result<(), TrajectoryError> {
    let end = t.start_frame + cfg.track_length;
    if t.steps() != cfg.track_length
        || end >= clip.frame_count()
        || end > flows.len()
        || !t.in_bounds(clip.width(), clip.height())
    {
        return Err(TrajectoryError::OutOfBounds { start: t.start_frame });
    }
    Ok(())
}

/// Descriptors of a single trajectory.
pub fn compute_descriptors(
    traj: &Trajectory,
    clip: &VideoClip,
    flows: &[FlowField],
    cfg: &DtConfig,
) -> Result<DescriptorSet, TrajectoryError> {
    check_span(traj, clip, flows, cfg)?;
    let mut acc = TubeAccumulator::new(cfg);
    for i in 0..cfg.track_length {
        let t = traj.start_frame + i;
        let fields = FrameFields::build(clip.frame(t), &flows[t], cfg);
        acc.add_frame(&fields, traj.points[i], i, cfg);
    }
    Ok(acc.finish(traj, cfg))
}

/// Descriptors for many trajectories of one clip, sweeping the clip once so
/// each frame's integral histograms are built a single time.
pub fn compute_all_descriptors(
    trajs: &[Trajectory],
    clip: &VideoClip,
    flows: &[FlowField],
    cfg: &DtConfig,
) -> Result<Vec<DescriptorSet>, TrajectoryError> {
    for t in trajs {
        check_span(t, clip, flows, cfg)?;
    }
    let mut accs: Vec<TubeAccumulator> = trajs.iter().map(|_| TubeAccumulator::new(cfg)).collect();
    for f in 0..flows.len().min(clip.frame_count()) {
        let covering: Vec<usize> = (0..trajs.len())
            .filter(|&k| trajs[k].start_frame <= f && f < trajs[k].start_frame + cfg.track_length)
            .collect();
        if covering.is_empty() {
            continue;
        }
        let fields = FrameFields::build(clip.frame(f), &flows[f], cfg);
        for k in covering {
            let i = f - trajs[k].start_frame;
            accs[k].add_frame(&fields, trajs[k].points[i], i, cfg);
        }
    }
    Ok(accs.into_iter().zip(trajs).map(|(a, t)| a.finish(t, cfg)).collect())
}

/// Everything dense-trajectory extraction produces for one clip.
#[derive(Debug, Clone)]
pub struct DtExtraction {
    pub raw_count: usize,
    pub trajectories: Vec<Trajectory>,
    pub descriptors: Vec<DescriptorSet>,
    pub global_motion: Vec<GlobalMotion>,
}

/// Flow, tracking, pruning and descriptors in one call.
pub fn extract_dense_trajectories(clip: &VideoClip, cfg: &DtConfig) -> Result<DtExtraction, TrajectoryError> {
    cfg.validate()?;
    check_length(clip, cfg)?;
    let flows = compute_clip_flows(clip, cfg)?;
    let raw = track_points_with_flows(clip, &flows, cfg)?;
    let global = estimate_global_motions(&flows);
    let kept = prune_trajectories(&raw, &global, cfg);
    let descriptors = compute_all_descriptors(&kept, clip, &flows, cfg)?;
    Ok(DtExtraction {
        raw_count: raw.len(),
        trajectories: kept,
        descriptors,
        global_motion: global,
    })
}

/// JSON sidecar of a feature dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDumpHeader {
    pub config: DtConfig,
    pub count: usize,
    pub record_len: usize,
    pub track_points: usize,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub raw_count: usize,
    pub config_hash: String,
}

fn write_f32s(w: &mut impl Write, xs: impl IntoIterator<Item = f64>) -> std::io::Result<()> {
    for x in xs {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_f32s(bytes: &[u8]) -> Result<Vec<f32>, TrajectoryError> {
    if bytes.len() % 4 != 0 {
        return Err(TrajectoryError::BadDump("length is not a multiple of 4".into()));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

/// One decoded feature-dump record.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub start_frame: usize,
    pub mean: (f32, f32),
    pub traj: Vec<f32>,
    pub hog: Vec<f32>,
    pub hof: Vec<f32>,
    pub mbh: Vec<f32>,
}

/// Writes `<stem>.dt.bin` (feature records), `<stem>.tracks.bin` (raw point
/// paths) and `<stem>.dt.json` (sidecar).
pub fn write_feature_dump(
    dir: &Path,
    stem: &str,
    trajs: &[Trajectory],
    descs: &[DescriptorSet],
    header: &FeatureDumpHeader,
) -> Result<(), TrajectoryError> {
    std::fs::create_dir_all(dir)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}.dt.bin")))?);
    for (t, d) in trajs.iter().zip(descs) {
        let m = t.mean_position();
        write_f32s(&mut w, [t.start_frame as f64, m.0, m.1])?;
        write_f32s(&mut w, d.traj.iter().chain(&d.hog).chain(&d.hof).chain(&d.mbh).copied())?;
    }
    w.flush()?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}.tracks.bin")))?);
    for t in trajs {
        write_f32s(&mut w, std::iter::once(t.start_frame as f64))?;
        write_f32s(&mut w, t.points.iter().flat_map(|p| [p.0, p.1]))?;
    }
    w.flush()?;
    std::fs::write(dir.join(format!("{stem}.dt.json")), serde_json::to_string_pretty(header)?)?;
    Ok(())
}

pub struct FeatureDump {
    pub header: FeatureDumpHeader,
    pub records: Vec<FeatureRecord>,
    pub tracks: Vec<Trajectory>,
}

pub fn read_feature_dump(dir: &Path, stem: &str) -> Result<FeatureDump, TrajectoryError> {
    let header: FeatureDumpHeader = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.dt.json")))?)?;
    let cfg = &header.config;
    let mut bytes = Vec::new();
    std::fs::File::open(dir.join(format!("{stem}.dt.bin")))?.read_to_end(&mut bytes)?;
    let vals = read_f32s(&bytes)?;
    if vals.len() != header.count * header.record_len {
        return Err(TrajectoryError::BadDump(format!(
            "{} floats, expected {} records of {}",
            vals.len(),
            header.count,
            header.record_len
        )));
    }
    let mut records = Vec::with_capacity(header.count);
    for rec in vals.chunks_exact(header.record_len.max(1)) {
        let mut at = 3;
        let mut take = |n: usize| {
            let s = rec[at..at + n].to_vec();
            at += n;
            s
        };
        records.push(FeatureRecord {
            start_frame: rec[0] as usize,
            mean: (rec[1], rec[2]),
            traj: take(cfg.traj_dim()),
            hog: take(cfg.hog_dim()),
            hof: take(cfg.hof_dim()),
            mbh: take(cfg.mbh_dim()),
        });
    }
    let mut bytes = Vec::new();
    std::fs::File::open(dir.join(format!("{stem}.tracks.bin")))?.read_to_end(&mut bytes)?;
    let vals = read_f32s(&bytes)?;
    let per = 1 + 2 * header.track_points;
    if vals.len() != header.count * per {
        return Err(TrajectoryError::BadDump("track file length mismatch".into()));
    }
    let tracks = vals
        .chunks_exact(per.max(1))
        .map(|r| Trajectory {
            start_frame: r[0] as usize,
            points: r[1..].chunks_exact(2).map(|p| (p[0] as f64, p[1] as f64)).collect(),
        })
        .collect();
    Ok(FeatureDump { header, records, tracks })
}
