use std::path::Path;

use super::descriptor::torso_length;
use super::{Joint, PoseAnnotation, PoseError};
use crate::trajectories::Trajectory;

pub const DEFAULT_PART_WIDTH_FRAC: f64 = 0.35;

/// Ten limbs plus head; the torso is handled separately as the box around
/// neck, shoulders and hips.
pub const BODY_PARTS: [(Joint, Joint); 11] = [
    (Joint::Neck, Joint::RShoulder),
    (Joint::Neck, Joint::LShoulder),
    (Joint::RShoulder, Joint::RElbow),
    (Joint::RElbow, Joint::RWrist),
    (Joint::LShoulder, Joint::LElbow),
    (Joint::LElbow, Joint::LWrist),
    (Joint::RHip, Joint::RKnee),
    (Joint::RKnee, Joint::RAnkle),
    (Joint::LHip, Joint::LKnee),
    (Joint::LKnee, Joint::LAnkle),
    (Joint::Head, Joint::Neck),
];

const TORSO: [Joint; 5] = [Joint::Neck, Joint::RShoulder, Joint::LShoulder, Joint::RHip, Joint::LHip];

/// Per-frame binary body masks for a whole clip.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyMask {
    pub width: usize,
    pub height: usize,
    masks: Vec<Vec<bool>>,
}

impl BodyMask {
    pub fn full(width: usize, height: usize, frames: usize) -> Self {
        BodyMask {
            width,
            height,
            masks: vec![vec![true; width * height]; frames],
        }
    }

    pub fn empty(width: usize, height: usize, frames: usize) -> Self {
        BodyMask {
            width,
            height,
            masks: vec![vec![false; width * height]; frames],
        }
    }

    /// Wraps externally produced row-major frame masks.
    pub fn from_frames(width: usize, height: usize, masks: Vec<Vec<bool>>) -> Result<Self, PoseError> {
        if let Some(i) = masks.iter().position(|m| m.len() != width * height) {
            return Err(PoseError::InvariantViolation(format!(
                "mask frame {i} has {} pixels, expected {}",
                masks[i].len(),
                width * height
            )));
        }
        Ok(BodyMask { width, height, masks })
    }

    pub fn frame_count(&self) -> usize {
        self.masks.len()
    }

    pub fn frame(&self, f: usize) -> &[bool] {
        &self.masks[f]
    }

    /// Membership of the pixel nearest to `(x, y)` in frame `f`. Frames and
    /// pixels outside the mask's extent are not covered.
    pub fn contains(&self, f: usize, x: f64, y: f64) -> bool {
        let (xi, yi) = (x.round(), y.round());
        if f >= self.masks.len() || xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
            return false;
        }
        self.masks[f][yi as usize * self.width + xi as usize]
    }

    pub fn density(&self, f: usize) -> f64 {
        self.masks[f].iter().filter(|b| **b).count() as f64 / (self.width * self.height) as f64
    }

    fn fill_rect(&mut self, f: usize, pts: &[(f64, f64)], half: f64) {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for p in pts {
            x0 = x0.min(p.0);
            y0 = y0.min(p.1);
            x1 = x1.max(p.0);
            y1 = y1.max(p.1);
        }
        let xa = (x0 - half).ceil().max(0.0) as usize;
        let ya = (y0 - half).ceil().max(0.0) as usize;
        let xb = (x1 + half).floor().min((self.width - 1) as f64);
        let yb = (y1 + half).floor().min((self.height - 1) as f64);
        if xb < 0.0 || yb < 0.0 {
            return;
        }
        let (xb, yb) = (xb as usize, yb as usize);
        for y in ya..=yb {
            for x in xa..=xb {
                self.masks[f][y * self.width + x] = true;
            }
        }
    }

    /// Dumps each frame as a PGM (255 inside, 0 outside).
    pub fn write_pgm_frames(&self, dir: &Path) -> Result<(), crate::media::MediaError> {
        std::fs::create_dir_all(dir)?;
        for (i, m) in self.masks.iter().enumerate() {
            let data: Vec<u8> = m.iter().map(|b| if *b { 255 } else { 0 }).collect();
            crate::media::write_gray8(&data, self.width, self.height, &dir.join(format!("mask_{i:05}.pgm")))?;
        }
        Ok(())
    }
}

/// Rasterises the union of axis-aligned part rectangles of every annotated
/// person in every frame. Each rectangle spans the part's endpoint joints
/// and is inflated to a thickness of `part_width_frac` torso lengths.
pub fn build_body_mask(
    annotations: &[PoseAnnotation],
    width: usize,
    height: usize,
    frame_count: usize,
    part_width_frac: f64,
) -> Result<BodyMask, PoseError> {
    if annotations.iter().all(|a| a.localized_count() == 0) {
        return Err(PoseError::NoJoints);
    }
    let mut mask = BodyMask::empty(width, height, frame_count);
    for ann in annotations {
        if ann.frame >= frame_count || ann.localized_count() == 0 {
            continue;
        }
        let pos = ann.positions();
        let reference = torso_length(&pos).filter(|t| *t >= 1.0).unwrap_or_else(|| {
            // without a torso, fall back to half the joint bounding-box diagonal
            let pts: Vec<(f64, f64)> = pos.iter().flatten().copied().collect();
            let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            for p in &pts {
                x0 = x0.min(p.0);
                y0 = y0.min(p.1);
                x1 = x1.max(p.0);
                y1 = y1.max(p.1);
            }
            ((x1 - x0).hypot(y1 - y0) / 2.0).max(1.0)
        });
        let half = (part_width_frac * reference / 2.0).max(0.5);
        for (a, b) in BODY_PARTS {
            if let (Some(pa), Some(pb)) = (pos[a.index()], pos[b.index()]) {
                mask.fill_rect(ann.frame, &[pa, pb], half);
            }
        }
        let torso: Vec<(f64, f64)> = TORSO.iter().filter_map(|j| pos[j.index()]).collect();
        if !torso.is_empty() {
            mask.fill_rect(ann.frame, &torso, half);
        }
        // joints whose partner is missing still get a square of their own
        for (j, p) in pos.iter().enumerate() {
            if let Some(p) = p {
                let paired = BODY_PARTS
                    .iter()
                    .any(|(a, b)| (a.index() == j && pos[b.index()].is_some()) || (b.index() == j && pos[a.index()].is_some()));
                if !paired {
                    mask.fill_rect(ann.frame, &[*p], half);
                }
            }
        }
    }
    Ok(mask)
}

/// Keeps the trajectories whose every point lies inside the mask of its frame.
pub fn filter_trajectories_by_mask(trajs: &[Trajectory], mask: &BodyMask) -> Vec<Trajectory> {
    trajs
        .iter()
        .filter(|t| {
            t.points
                .iter()
                .enumerate()
                .all(|(i, p)| mask.contains(t.start_frame + i, p.0, p.1))
        })
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::{figure_joints, FigureParams};
    use crate::pose::{JointObservation, PoseSource, NUM_JOINTS};

    fn ann(frame: usize, pos: [(f64, f64); NUM_JOINTS]) -> PoseAnnotation {
        PoseAnnotation {
            frame,
            person_id: 0,
            activity: 0,
            torso_rotation: None,
            joints: pos.map(|(x, y)| {
                Some(JointObservation {
                    x,
                    y,
                    occluded: false,
                })
            }),
            source: PoseSource::Ps,
        }
    }

    #[test]
    fn upright_figure_covers_its_joints() {
        let p = FigureParams::centered(64, 64);
        let j = figure_joints(&p, 0.0);
        let m = build_body_mask(&[ann(0, j)], 64, 64, 1, DEFAULT_PART_WIDTH_FRAC).unwrap();
        for q in j {
            assert!(m.contains(0, q.0, q.1), "{q:?}");
        }
    }

    #[test]
    fn frame_sized_figure_covers_most_of_frame() {
        let mut p = FigureParams::centered(64, 64);
        p.scale = 27.0;
        p.hip_y = 38.0;
        p.arm_base = 80.0;
        p.arm_amp = 0.0;
        p.bend_base = 0.0;
        p.forearm_amp = 0.0;
        p.leg_amp = 0.0;
        let j = figure_joints(&p, 0.0);
        let m = build_body_mask(&[ann(0, j)], 64, 64, 1, 1.5).unwrap();
        assert!(m.density(0) >= 0.9, "density {}", m.density(0));
    }

    #[test]
    fn left_figure_leaves_right_half_empty() {
        let mut p = FigureParams::centered(64, 64);
        p.hip_x = 14.0;
        p.scale = 14.0;
        let j = figure_joints(&p, 0.0);
        let m = build_body_mask(&[ann(0, j)], 64, 64, 1, DEFAULT_PART_WIDTH_FRAC).unwrap();
        let f = m.frame(0);
        let right = (0..64).flat_map(|y| (32..64).map(move |x| (x, y))).filter(|(x, y)| f[y * 64 + x]).count();
        assert_eq!(right, 0);
        assert!(m.density(0) > 0.0);
    }

    #[test]
    fn no_joints_is_an_error() {
        let mut a = ann(0, [(1.0, 1.0); NUM_JOINTS]);
        a.joints = [None; NUM_JOINTS];
        assert!(matches!(build_body_mask(&[a], 8, 8, 1, 0.35), Err(PoseError::NoJoints)));
    }

    fn traj(start: usize, pts: &[(f64, f64)]) -> Trajectory {
        Trajectory {
            start_frame: start,
            points: pts.to_vec(),
        }
    }

    #[test]
    fn full_and_empty_masks() {
        let ts = vec![traj(0, &[(1.0, 1.0), (2.0, 2.0)]), traj(1, &[(5.0, 5.0), (6.0, 5.0)])];
        assert_eq!(filter_trajectories_by_mask(&ts, &BodyMask::full(8, 8, 3)), ts);
        assert!(filter_trajectories_by_mask(&ts, &BodyMask::empty(8, 8, 3)).is_empty());
    }
}
