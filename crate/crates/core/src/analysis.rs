//! Complexity measures, class-level aggregation and ranking, and VOC-style
//! average precision.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::{
    filter_trajectories_by_mask, torso_length, BodyMask, Joint, PoseAnnotation, PoseError, BODY_PARTS, NUM_JOINTS,
};
use crate::trajectories::Trajectory;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no positive labels")]
    NoPositives,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("class subset is empty")]
    EmptySubset,
    #[error("unknown complexity measure {0:?}")]
    UnknownMeasure(String),
    #[error("measure {measure} missing for class {class}")]
    MissingMeasure { measure: &'static str, class: u32 },
    #[error("asked for the top {n} of {available} classes")]
    NTooLarge { n: usize, available: usize },
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// VOC-2007 11-point interpolated average precision. The ranking is by
/// decreasing score with ties kept in input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, AnalysisError> {
    if scores.len() != labels.len() {
        return Err(AnalysisError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let npos = labels.iter().filter(|l| **l).count();
    if npos == 0 {
        return Err(AnalysisError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut prec = Vec::with_capacity(order.len());
    let mut rec = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
        }
        prec.push(tp as f64 / (rank + 1) as f64);
        rec.push(tp as f64 / npos as f64);
    }
    // interpolated precision: running max from the tail
    for k in (0..prec.len().saturating_sub(1)).rev() {
        prec[k] = prec[k].max(prec[k + 1]);
    }
    let mut sum = 0.0;
    for t in 0..=10 {
        let r = t as f64 / 10.0;
        if let Some(k) = rec.iter().position(|x| *x >= r) {
            sum += prec[k];
        }
    }
    Ok(sum / 11.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_ids: Vec<u32>,
    pub ap: Vec<f64>,
    pub map: f64,
    /// Classes in the subset without a single test positive.
    pub excluded: Vec<u32>,
    pub n: usize,
}

impl EvalReport {
    pub fn ap_of(&self, class: u32) -> Option<f64> {
        self.class_ids.iter().position(|c| *c == class).map(|i| self.ap[i])
    }
}

/// Mean AP over `subset` (all of `class_ids` when `None`). `scores[i][c]`
/// is clip `i`'s score for `class_ids[c]`; `truth[i]` its class.
pub fn mean_average_precision(
    scores: &[Vec<f64>],
    truth: &[u32],
    class_ids: &[u32],
    subset: Option<&[u32]>,
) -> Result<EvalReport, AnalysisError> {
    let wanted: Vec<u32> = subset.map_or_else(|| class_ids.to_vec(), <[u32]>::to_vec);
    if wanted.is_empty() {
        return Err(AnalysisError::EmptySubset);
    }
    let mut report = EvalReport {
        class_ids: Vec::new(),
        ap: Vec::new(),
        map: 0.0,
        excluded: Vec::new(),
        n: wanted.len(),
    };
    for c in wanted {
        let Some(col) = class_ids.iter().position(|x| *x == c) else {
            report.excluded.push(c);
            continue;
        };
        let s: Vec<f64> = scores.iter().map(|r| r[col]).collect();
        let l: Vec<bool> = truth.iter().map(|t| *t == c).collect();
        match average_precision(&s, &l) {
            Ok(ap) => {
                report.class_ids.push(c);
                report.ap.push(ap);
            }
            Err(AnalysisError::NoPositives) => report.excluded.push(c),
            Err(e) => return Err(e),
        }
    }
    if report.ap.is_empty() {
        return Err(AnalysisError::EmptySubset);
    }
    report.map = report.ap.iter().sum::<f64>() / report.ap.len() as f64;
    Ok(report)
}

/// Torso-normalised reference pose and part lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePose {
    pub mean_pose: [Option<(f64, f64)>; NUM_JOINTS],
    pub mean_part_lengths: Vec<Option<f64>>,
}

fn normalized_joints(ann: &PoseAnnotation) -> Option<([Option<(f64, f64)>; NUM_JOINTS], f64)> {
    let pos = ann.positions();
    let t = torso_length(&pos).filter(|t| *t >= 1.0)?;
    let neck = pos[Joint::Neck.index()]?;
    Some((pos.map(|p| p.map(|p| ((p.0 - neck.0) / t, (p.1 - neck.1) / t))), t))
}

fn part_lengths(norm: &[Option<(f64, f64)>; NUM_JOINTS]) -> Vec<Option<f64>> {
    BODY_PARTS
        .iter()
        .map(|(a, b)| match (norm[a.index()], norm[b.index()]) {
            (Some(p), Some(q)) => Some((p.0 - q.0).hypot(p.1 - q.1)),
            _ => None,
        })
        .collect()
}

impl ReferencePose {
    /// Per-joint and per-part means over the annotations with a usable torso.
    pub fn from_annotations(anns: &[PoseAnnotation]) -> ReferencePose {
        let mut js = [(0.0, 0.0, 0usize); NUM_JOINTS];
        let mut ps = vec![(0.0, 0usize); BODY_PARTS.len()];
        for a in anns {
            let Some((norm, _)) = normalized_joints(a) else { continue };
            for (acc, p) in js.iter_mut().zip(norm.iter()) {
                if let Some(p) = p {
                    acc.0 += p.0;
                    acc.1 += p.1;
                    acc.2 += 1;
                }
            }
            for (acc, l) in ps.iter_mut().zip(part_lengths(&norm)) {
                if let Some(l) = l {
                    acc.0 += l;
                    acc.1 += 1;
                }
            }
        }
        ReferencePose {
            mean_pose: js.map(|(x, y, n)| (n > 0).then(|| (x / n as f64, y / n as f64))),
            mean_part_lengths: ps.iter().map(|(s, n)| (*n > 0).then(|| s / *n as f64)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticComplexity {
    pub pose_dev: f64,
    pub occlusion_count: usize,
    pub viewpoint_dev: f64,
    pub part_length_dev: f64,
    pub truncation_count: usize,
}

/// Rotation angle (degrees) of the yaw-pitch-roll rotation relative to the
/// frontal view.
pub fn viewpoint_deviation(yaw: f64, pitch: f64, roll: f64) -> f64 {
    if pitch == 0.0 && roll == 0.0 {
        let y = yaw.rem_euclid(360.0);
        return if y > 180.0 { 360.0 - y } else { y };
    }
    let (cy, sy) = (yaw.to_radians().cos(), yaw.to_radians().sin());
    let (cp, sp) = (pitch.to_radians().cos(), pitch.to_radians().sin());
    let (cr, sr) = (roll.to_radians().cos(), roll.to_radians().sin());
    // trace of Rz(yaw) Ry(pitch) Rx(roll)
    let trace = cy * cp + (sy * sp * sr + cy * cr) + cp * cr;
    ((trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn compute_static_complexity(ann: &PoseAnnotation, reference: &ReferencePose) -> Result<StaticComplexity, AnalysisError> {
    let (norm, _) = normalized_joints(ann).ok_or(PoseError::DegenerateTorso { frame: ann.frame })?;
    let mut sq = 0.0;
    let mut n = 0usize;
    for (p, m) in norm.iter().zip(reference.mean_pose.iter()) {
        if let (Some(p), Some(m)) = (p, m) {
            sq += (p.0 - m.0).powi(2) + (p.1 - m.1).powi(2);
            n += 1;
        }
    }
    let pose_dev = if n == 0 { 0.0 } else { (sq / n as f64).sqrt() };
    let mut sq = 0.0;
    let mut n = 0usize;
    for (l, m) in part_lengths(&norm).iter().zip(&reference.mean_part_lengths) {
        if let (Some(l), Some(m)) = (l, m) {
            if *m > 0.0 {
                sq += ((l - m) / m).powi(2);
                n += 1;
            }
        }
    }
    let part_length_dev = if n == 0 { 0.0 } else { (sq / n as f64).sqrt() };
    let viewpoint_dev = ann.torso_rotation.map_or(0.0, |r| {
        viewpoint_deviation(r.yaw, r.pitch.unwrap_or(0.0), r.roll.unwrap_or(0.0))
    });
    Ok(StaticComplexity {
        pose_dev,
        occlusion_count: ann.occluded_count(),
        viewpoint_dev,
        part_length_dev,
        truncation_count: ann.truncated_count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionComplexity {
    pub n_dt: usize,
    pub n_dt_body: Option<usize>,
    pub ms: f64,
    pub ms_body: Option<f64>,
    pub n_people: usize,
}

/// Mean single-step displacement over all steps of all trajectories; 0 for
/// an empty set.
pub fn mean_speed(trajs: &[Trajectory]) -> f64 {
    let (sum, n) = trajs
        .iter()
        .flat_map(|t| t.step_magnitudes())
        .fold((0.0, 0usize), |a, m| (a.0 + m, a.1 + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn compute_motion_complexity(trajs: &[Trajectory], mask: Option<&BodyMask>, n_people: usize) -> MotionComplexity {
    let body = mask.map(|m| filter_trajectories_by_mask(trajs, m));
    MotionComplexity {
        n_dt: trajs.len(),
        n_dt_body: body.as_ref().map(Vec::len),
        ms: mean_speed(trajs),
        ms_body: body.as_deref().map(mean_speed),
        n_people,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    PoseDev,
    OcclusionCount,
    ViewpointDev,
    PartLengthDev,
    TruncationCount,
    NDt,
    NDtBody,
    Ms,
    MsBody,
    NPeople,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
}

impl Measure {
    pub const ALL: [Measure; 10] = [
        Measure::PoseDev,
        Measure::OcclusionCount,
        Measure::ViewpointDev,
        Measure::PartLengthDev,
        Measure::TruncationCount,
        Measure::NDt,
        Measure::NDtBody,
        Measure::Ms,
        Measure::MsBody,
        Measure::NPeople,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measure::PoseDev => "pose_dev",
            Measure::OcclusionCount => "occlusion_count",
            Measure::ViewpointDev => "viewpoint_dev",
            Measure::PartLengthDev => "part_length_dev",
            Measure::TruncationCount => "truncation_count",
            Measure::NDt => "n_dt",
            Measure::NDtBody => "n_dt_body",
            Measure::Ms => "ms",
            Measure::MsBody => "ms_body",
            Measure::NPeople => "n_people",
        }
    }

    pub fn from_name(s: &str) -> Result<Measure, AnalysisError> {
        Measure::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| AnalysisError::UnknownMeasure(s.to_string()))
    }

    pub fn is_pose(self) -> bool {
        (self as usize) < 5
    }

    /// Pose measures rank from easy to hard (increasing), motion measures
    /// from most to least (decreasing).
    pub fn default_direction(self) -> Direction {
        if self.is_pose() {
            Direction::Increasing
        } else {
            Direction::Decreasing
        }
    }
}

/// The ten per-clip measures; absent values are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityProfile {
    pub clip_id: String,
    pub class_id: u32,
    pub static_measures: Option<StaticComplexity>,
    pub motion: MotionComplexity,
}

impl ComplexityProfile {
    pub fn get(&self, m: Measure) -> Option<f64> {
        let s = self.static_measures;
        match m {
            Measure::PoseDev => s.map(|s| s.pose_dev),
            Measure::OcclusionCount => s.map(|s| s.occlusion_count as f64),
            Measure::ViewpointDev => s.map(|s| s.viewpoint_dev),
            Measure::PartLengthDev => s.map(|s| s.part_length_dev),
            Measure::TruncationCount => s.map(|s| s.truncation_count as f64),
            Measure::NDt => Some(self.motion.n_dt as f64),
            Measure::NDtBody => self.motion.n_dt_body.map(|v| v as f64),
            Measure::Ms => Some(self.motion.ms),
            Measure::MsBody => self.motion.ms_body,
            Measure::NPeople => Some(self.motion.n_people as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassComplexity {
    pub class_id: u32,
    pub n_clips: usize,
    /// Mean of every measure over the class's clips that have it.
    pub means: BTreeMap<Measure, f64>,
}

impl ClassComplexity {
    pub fn mean(&self, m: Measure) -> Option<f64> {
        self.means.get(&m).copied()
    }
}

/// Per-class means, ordered by class id.
pub fn aggregate_by_class(profiles: &[ComplexityProfile]) -> Vec<ClassComplexity> {
    let mut acc: BTreeMap<u32, (usize, BTreeMap<Measure, (f64, usize)>)> = BTreeMap::new();
    for p in profiles {
        let e = acc.entry(p.class_id).or_default();
        e.0 += 1;
        for m in Measure::ALL {
            if let Some(v) = p.get(m) {
                let s = e.1.entry(m).or_insert((0.0, 0));
                s.0 += v;
                s.1 += 1;
            }
        }
    }
    acc.into_iter()
        .map(|(class_id, (n_clips, sums))| ClassComplexity {
            class_id,
            n_clips,
            means: sums.into_iter().map(|(m, (s, n))| (m, s / n as f64)).collect(),
        })
        .collect()
}

/// Orders classes by their mean of `measure`; ties go to the lower class id.
pub fn rank_classes(cc: &[ClassComplexity], measure: &str, direction: Option<Direction>) -> Result<Vec<u32>, AnalysisError> {
    let m = Measure::from_name(measure)?;
    let dir = direction.unwrap_or(m.default_direction());
    let mut keyed = Vec::with_capacity(cc.len());
    for c in cc {
        let v = c.mean(m).ok_or(AnalysisError::MissingMeasure {
            measure: m.name(),
            class: c.class_id,
        })?;
        keyed.push((v, c.class_id));
    }
    keyed.sort_by(|a, b| {
        let ord = match dir {
            Direction::Increasing => a.0.total_cmp(&b.0),
            Direction::Decreasing => b.0.total_cmp(&a.0),
        };
        ord.then(a.1.cmp(&b.1))
    });
    Ok(keyed.into_iter().map(|k| k.1).collect())
}

/// The `n` classes with the most training clips; ties by class id.
pub fn top_n_by_train_size(classes: &[(u32, usize)], n: usize) -> Result<Vec<u32>, AnalysisError> {
    if n > classes.len() {
        return Err(AnalysisError::NTooLarge {
            n,
            available: classes.len(),
        });
    }
    let mut v = classes.to_vec();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(v.into_iter().take(n).map(|c| c.0).collect())
}

/// Mean AP of every prefix of `ranked` (classes without an AP are skipped).
pub fn cumulative_map(ranked: &[u32], report: &EvalReport) -> Vec<(u32, f64)> {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut out = Vec::new();
    for &c in ranked {
        if let Some(ap) = report.ap_of(c) {
            sum += ap;
            n += 1;
            out.push((c, sum / n as f64));
        }
    }
    out
}

/// `class,ap,train_size,<measure means...>` rows.
pub fn per_class_csv(report: &EvalReport, train_sizes: &BTreeMap<u32, usize>, cc: &[ClassComplexity]) -> String {
    let mut s = String::from("class,ap,train_size");
    for m in Measure::ALL {
        s.push(',');
        s.push_str(m.name());
    }
    s.push('\n');
    for (c, ap) in report.class_ids.iter().zip(&report.ap) {
        let _ = write!(s, "{c},{ap:.6},{}", train_sizes.get(c).copied().unwrap_or(0));
        let row = cc.iter().find(|x| x.class_id == *c);
        for m in Measure::ALL {
            match row.and_then(|r| r.mean(m)) {
                Some(v) => {
                    let _ = write!(s, ",{v:.6}");
                }
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

/// `measure,rank,class,method,cumulative_map` rows.
pub fn curve_csv(curves: &[(Measure, String, Vec<(u32, f64)>)]) -> String {
    let mut s = String::from("measure,rank,class,method,cumulative_map\n");
    for (m, method, pts) in curves {
        for (i, (c, v)) in pts.iter().enumerate() {
            let _ = writeln!(s, "{},{},{c},{method},{v:.6}", m.name(), i + 1);
        }
    }
    s
}

const SERIES_COLOURS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Line plot of cumulative mAP against class rank, one series per method.
pub fn curve_svg(measure: Measure, series: &[(String, Vec<(u32, f64)>)]) -> String {
    let (w, h, pad) = (480.0, 320.0, 40.0);
    let n = series.iter().map(|s| s.1.len()).max().unwrap_or(1).max(2);
    let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (n - 1) as f64;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * v.clamp(0.0, 1.0);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{pad} {pad} V{} H{}" stroke="black" fill="none"/>"#,
        h - pad,
        w - pad
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, measure.name());
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="11">classes ranked by {}</text>"#, w / 2.0, h - 8.0, measure.name());
    for t in 0..=4 {
        let v = t as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="10">{v:.2}</text>"#, pad - 4.0, y(v) + 3.0);
    }
    for (k, (name, pts)) in series.iter().enumerate() {
        let colour = SERIES_COLOURS[k % SERIES_COLOURS.len()];
        let d: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(i, (_, v))| format!("{}{:.1} {:.1}", if i == 0 { "M" } else { "L" }, x(i), y(*v)))
            .collect();
        let _ = writeln!(s, r#"<path d="{}" stroke="{colour}" stroke-width="2" fill="none"/>"#, d.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{colour}">{name}</text>"#,
            w - pad - 90.0,
            pad + 14.0 * (k + 1) as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<(), AnalysisError> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.1, 0.5], &[true, false, true]).unwrap(), 1.0);
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - (6.0 + 5.0 * 2.0 / 3.0) / 11.0).abs() < 1e-15);
        assert_eq!(average_precision(&[0.1, 0.7], &[true, true]).unwrap(), 1.0);
        assert!(matches!(average_precision(&[0.1], &[false]), Err(AnalysisError::NoPositives)));
    }

    #[test]
    fn map_excludes_classes_without_positives() {
        let scores = vec![vec![0.9, 0.1, 0.0], vec![0.2, 0.8, 0.0], vec![0.1, 0.3, 0.0]];
        let r = mean_average_precision(&scores, &[0, 1, 1], &[0, 1, 2], None).unwrap();
        assert_eq!(r.excluded, vec![2]);
        assert_eq!(r.class_ids, vec![0, 1]);
        assert!((r.map - (r.ap[0] + r.ap[1]) / 2.0).abs() < 1e-15);
        assert!(matches!(
            mean_average_precision(&scores, &[0, 1, 1], &[0, 1, 2], Some(&[])),
            Err(AnalysisError::EmptySubset)
        ));
    }

    #[test]
    fn viewpoint() {
        assert!((viewpoint_deviation(90.0, 0.0, 0.0) - 90.0).abs() < 1e-9);
        assert!((viewpoint_deviation(-30.0, 0.0, 0.0) - 30.0).abs() < 1e-9);
        assert!((viewpoint_deviation(0.0, 0.0, 45.0) - 45.0).abs() < 1e-9);
        assert!(viewpoint_deviation(0.0, 0.0, 0.0).abs() < 1e-6);
    }

    #[test]
    fn top_n() {
        let c = [(0, 5), (1, 9), (2, 9), (3, 1)];
        assert_eq!(top_n_by_train_size(&c, 2).unwrap(), vec![1, 2]);
        assert_eq!(top_n_by_train_size(&c, 4).unwrap(), vec![1, 2, 0, 3]);
        assert!(matches!(top_n_by_train_size(&c, 5), Err(AnalysisError::NTooLarge { .. })));
    }

    #[test]
    fn unknown_measure() {
        assert!(matches!(rank_classes(&[], "speed", None), Err(AnalysisError::UnknownMeasure(_))));
    }
}
