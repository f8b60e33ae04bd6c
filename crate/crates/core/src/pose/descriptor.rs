//! Pose descriptors over a joint track.
//!
//! Three descriptor types are emitted per window:
//!
//! * **relative** positions of every joint with respect to the neck,
//!   divided by the torso length, `W x 13 x 2` values;
//! * **angles**: inner angles (degrees) of nine limb triples, `W x 9`;
//! * **temporal** differences: per-joint frame-to-frame displacement
//!   divided by the torso length, `(W - 1) x 14 x 2`.
//!
//! The layout is fixed so every type can be quantised against its own
//! codebook. A slot whose value would depend on an absent joint is left at
//! zero; no coordinate of an absent joint is ever read.

use serde::{Deserialize, Serialize};

use super::track::{JointFrame, JointTrack};
use super::{Joint, PoseError, NUM_JOINTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoseDescriptorKind {
    Relative,
    Angles,
    Temporal,
}

impl PoseDescriptorKind {
    pub const ALL: [PoseDescriptorKind; 3] = [
        PoseDescriptorKind::Relative,
        PoseDescriptorKind::Angles,
        PoseDescriptorKind::Temporal,
    ];

    /// Descriptor length for a window of `w` frames.
    pub fn dim(self, w: usize) -> usize {
        match self {
            PoseDescriptorKind::Relative => w * (NUM_JOINTS - 1) * 2,
            PoseDescriptorKind::Angles => w * ANGLE_TRIPLES.len(),
            PoseDescriptorKind::Temporal => w.saturating_sub(1) * NUM_JOINTS * 2,
        }
    }
}

/// End, vertex, end. `None` in the last slot stands for the hip centre.
pub const ANGLE_TRIPLES: [(Joint, Joint, Option<Joint>); 9] = [
    (Joint::RShoulder, Joint::RElbow, Some(Joint::RWrist)),
    (Joint::LShoulder, Joint::LElbow, Some(Joint::LWrist)),
    (Joint::RHip, Joint::RKnee, Some(Joint::RAnkle)),
    (Joint::LHip, Joint::LKnee, Some(Joint::LAnkle)),
    (Joint::Neck, Joint::RShoulder, Some(Joint::RElbow)),
    (Joint::Neck, Joint::LShoulder, Some(Joint::LElbow)),
    (Joint::Neck, Joint::RHip, Some(Joint::RKnee)),
    (Joint::Neck, Joint::LHip, Some(Joint::LKnee)),
    (Joint::Head, Joint::Neck, None),
];

#[derive(Debug, Clone, PartialEq)]
pub struct PoseDescriptors {
    pub start_frame: usize,
    pub relative: Vec<f64>,
    pub angles: Vec<f64>,
    pub temporal: Vec<f64>,
}

impl PoseDescriptors {
    pub fn get(&self, kind: PoseDescriptorKind) -> &[f64] {
        match kind {
            PoseDescriptorKind::Relative => &self.relative,
            PoseDescriptorKind::Angles => &self.angles,
            PoseDescriptorKind::Temporal => &self.temporal,
        }
    }
}

/// Mean of the present hips.
pub fn hip_center(f: &JointFrame) -> Option<(f64, f64)> {
    match (f[Joint::RHip.index()], f[Joint::LHip.index()]) {
        (Some(r), Some(l)) => Some(((r.0 + l.0) / 2.0, (r.1 + l.1) / 2.0)),
        (Some(p), None) | (None, Some(p)) => Some(p),
        (None, None) => None,
    }
}

/// Neck to hip-centre distance.
pub fn torso_length(f: &JointFrame) -> Option<f64> {
    let n = f[Joint::Neck.index()]?;
    let h = hip_center(f)?;
    Some((n.0 - h.0).hypot(n.1 - h.1))
}

/// Angle at `b` between rays to `a` and `c`, in degrees.
pub fn inner_angle(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    let u = (a.0 - b.0, a.1 - b.1);
    let v = (c.0 - b.0, c.1 - b.1);
    if (u.0 == 0.0 && u.1 == 0.0) || (v.0 == 0.0 && v.1 == 0.0) {
        return 0.0;
    }
    let cross = u.0 * v.1 - u.1 * v.0;
    let dot = u.0 * v.0 + u.1 * v.1;
    cross.abs().atan2(dot).to_degrees()
}

fn triple_points(f: &JointFrame, t: &(Joint, Joint, Option<Joint>)) -> Option<((f64, f64), (f64, f64), (f64, f64))> {
    let a = f[t.0.index()]?;
    let b = f[t.1.index()]?;
    let c = match t.2 {
        Some(j) => f[j.index()]?,
        None => hip_center(f)?,
    };
    Some((a, b, c))
}

/// Computes the three descriptor types of one joint track.
pub fn compute_pose_descriptors(track: &JointTrack) -> Result<PoseDescriptors, PoseError> {
    let w = track.frames.len();
    let mut torso = Vec::with_capacity(w);
    for (i, f) in track.frames.iter().enumerate() {
        match torso_length(f) {
            Some(t) if t >= 1.0 => torso.push(t),
            _ => {
                return Err(PoseError::DegenerateTorso {
                    frame: track.start_frame + i,
                })
            }
        }
    }

    let mut relative = Vec::with_capacity(PoseDescriptorKind::Relative.dim(w));
    for (f, t) in track.frames.iter().zip(&torso) {
        let neck = f[Joint::Neck.index()].expect("torso implies neck");
        for j in Joint::ALL.iter().filter(|j| **j != Joint::Neck) {
            match f[j.index()] {
                Some(p) => {
                    relative.push((p.0 - neck.0) / t);
                    relative.push((p.1 - neck.1) / t);
                }
                None => relative.extend([0.0, 0.0]),
            }
        }
    }

    let mut angles = Vec::with_capacity(PoseDescriptorKind::Angles.dim(w));
    for f in &track.frames {
        for t in &ANGLE_TRIPLES {
            angles.push(triple_points(f, t).map_or(0.0, |(a, b, c)| inner_angle(a, b, c)));
        }
    }

    let mut temporal = Vec::with_capacity(PoseDescriptorKind::Temporal.dim(w));
    for i in 1..w {
        let (prev, cur) = (&track.frames[i - 1], &track.frames[i]);
        let t = torso[i - 1];
        for j in 0..NUM_JOINTS {
            match (prev[j], cur[j]) {
                (Some(a), Some(b)) => {
                    temporal.push((b.0 - a.0) / t);
                    temporal.push((b.1 - a.1) / t);
                }
                _ => temporal.extend([0.0, 0.0]),
            }
        }
    }

    Ok(PoseDescriptors {
        start_frame: track.start_frame,
        relative,
        angles,
        temporal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::{figure_joints, FigureParams};
    use crate::pose::track::{TrackSource, POSE_WINDOW};

    fn figure_frame(p: &FigureParams, t: f64) -> JointFrame {
        figure_joints(p, t).map(Some)
    }

    fn track_of(frames: Vec<JointFrame>) -> JointTrack {
        JointTrack {
            start_frame: 0,
            frames,
            source: TrackSource::PsMulti,
        }
    }

    #[test]
    fn dimensions() {
        assert_eq!(PoseDescriptorKind::Relative.dim(7), 182);
        assert_eq!(PoseDescriptorKind::Angles.dim(7), 63);
        assert_eq!(PoseDescriptorKind::Temporal.dim(7), 168);
        let p = FigureParams::centered(64, 64);
        let d = compute_pose_descriptors(&track_of((0..7).map(|t| figure_frame(&p, t as f64)).collect())).unwrap();
        assert_eq!(d.relative.len(), 182);
        assert_eq!(d.angles.len(), 63);
        assert_eq!(d.temporal.len(), 168);
    }

    #[test]
    fn static_track_has_zero_temporal_difference() {
        let p = FigureParams::centered(64, 64);
        let d = compute_pose_descriptors(&JointTrack::single_pose(figure_frame(&p, 0.0), 0, POSE_WINDOW)).unwrap();
        assert!(d.temporal.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn extended_arm_is_straight() {
        assert!((inner_angle((0.0, 0.0), (1.0, 1.0), (2.0, 2.0)) - 180.0).abs() < 1e-9);
        let mut p = FigureParams::centered(64, 64);
        p.bend_base = 0.0;
        p.forearm_amp = 0.0;
        let d = compute_pose_descriptors(&JointTrack::single_pose(figure_frame(&p, 0.0), 0, 7)).unwrap();
        assert!((d.angles[0] - 180.0).abs() < 1e-6);
        assert!((d.angles[1] - 180.0).abs() < 1e-6);
    }

    #[test]
    fn missing_neck_is_degenerate() {
        let p = FigureParams::centered(64, 64);
        let mut f = figure_frame(&p, 0.0);
        f[Joint::Neck.index()] = None;
        assert!(matches!(
            compute_pose_descriptors(&JointTrack::single_pose(f, 4, 7)),
            Err(PoseError::DegenerateTorso { frame: 4 })
        ));
    }

    #[test]
    fn tiny_torso_is_degenerate() {
        let f: JointFrame = [Some((5.0, 5.0)); NUM_JOINTS];
        assert!(compute_pose_descriptors(&JointTrack::single_pose(f, 0, 7)).is_err());
    }
}
