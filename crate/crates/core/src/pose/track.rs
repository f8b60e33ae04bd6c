use serde::{Deserialize, Serialize};

use super::{PoseAnnotation, PoseError, NUM_JOINTS};
use crate::media::{Frame, VideoClip};

/// Pose trajectory length in frames.
pub const POSE_WINDOW: usize = 7;
/// Offset between consecutive pose windows.
pub const POSE_STEP: usize = 3;
/// Side of the square correlation patch.
pub const NCC_PATCH: usize = 15;
/// Search radius per tracking step, in px.
pub const NCC_SEARCH: i32 = 8;

/// Joint positions for one frame; `None` marks an absent joint.
pub type JointFrame = [Option<(f64, f64)>; NUM_JOINTS];

/// How the joint positions of a track were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrackSource {
    /// Ground-truth key-frame joints, no motion.
    #[serde(rename = "GT")]
    Gt,
    /// Ground-truth key-frame joints tracked through the window.
    #[serde(rename = "GT-T")]
    GtTracked,
    /// Estimated key-frame joints tracked through the window.
    #[serde(rename = "PS-T")]
    PsTracked,
    /// Joints estimated independently in every frame.
    #[serde(rename = "PS-M")]
    PsMulti,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointTrack {
    pub start_frame: usize,
    pub frames: Vec<JointFrame>,
    pub source: TrackSource,
}

impl JointTrack {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// A motionless track that repeats a single pose for `window` frames.
    pub fn single_pose(pose: JointFrame, frame: usize, window: usize) -> Self {
        JointTrack {
            start_frame: frame,
            frames: vec![pose; window],
            source: TrackSource::Gt,
        }
    }
}

/// Start frames of the pose windows tiling an `n`-frame sequence.
pub fn window_starts(n: usize) -> Vec<usize> {
    if n < POSE_WINDOW {
        return Vec::new();
    }
    (0..=(n - POSE_WINDOW) / POSE_STEP).map(|i| i * POSE_STEP).collect()
}

/// Cuts a per-frame joint sequence (starting at frame `first`) into
/// overlapping 7-frame tracks.
pub fn tile_windows(per_frame: &[JointFrame], first: usize, source: TrackSource) -> Vec<JointTrack> {
    window_starts(per_frame.len())
        .into_iter()
        .map(|s| JointTrack {
            start_frame: first + s,
            frames: per_frame[s..s + POSE_WINDOW].to_vec(),
            source,
        })
        .collect()
}

fn sample_patch(frame: &Frame, cx: f64, cy: f64, out: &mut Vec<f32>) {
    out.clear();
    let half = (NCC_PATCH / 2) as f64;
    for dy in 0..NCC_PATCH {
        for dx in 0..NCC_PATCH {
            out.push(frame.sample((cx - half + dx as f64) as f32, (cy - half + dy as f64) as f32));
        }
    }
}

/// Zero-mean patch and its energy.
fn centre(patch: &mut [f32]) -> f64 {
    let mean = patch.iter().map(|&v| v as f64).sum::<f64>() / patch.len() as f64;
    let mut energy = 0.0;
    for v in patch.iter_mut() {
        *v -= mean as f32;
        energy += (*v as f64) * (*v as f64);
    }
    energy
}

fn parabolic_offset(left: f64, mid: f64, right: f64) -> f64 {
    let denom = left - 2.0 * mid + right;
    if denom.abs() < 1e-12 {
        0.0
    } else {
        (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
    }
}

/// One tracking step: finds where the patch around `p` in `a` moved to in
/// `b` by maximising normalised cross-correlation over integer offsets in
/// `±NCC_SEARCH`, then refines to sub-pixel with a parabola fit per axis.
pub fn ncc_step(a: &Frame, b: &Frame, p: (f64, f64)) -> (f64, f64) {
    let mut template = Vec::with_capacity(NCC_PATCH * NCC_PATCH);
    sample_patch(a, p.0, p.1, &mut template);
    let t_energy = centre(&mut template);
    if t_energy < 1e-10 {
        return p;
    }
    let side = (2 * NCC_SEARCH + 1) as usize;
    let mut scores = vec![f64::NEG_INFINITY; side * side];
    let mut cand = Vec::with_capacity(NCC_PATCH * NCC_PATCH);
    let mut best = (0i32, 0i32);
    let mut best_score = f64::NEG_INFINITY;
    for dy in -NCC_SEARCH..=NCC_SEARCH {
        for dx in -NCC_SEARCH..=NCC_SEARCH {
            sample_patch(b, p.0 + dx as f64, p.1 + dy as f64, &mut cand);
            let c_energy = centre(&mut cand);
            let ncc = if c_energy < 1e-10 {
                0.0
            } else {
                let dot: f64 = template.iter().zip(&cand).map(|(&t, &c)| t as f64 * c as f64).sum();
                dot / (t_energy * c_energy).sqrt()
            };
            let idx = ((dy + NCC_SEARCH) as usize) * side + (dx + NCC_SEARCH) as usize;
            scores[idx] = ncc;
            // a vanishing distance penalty prefers the nearest of equal peaks
            let ranked = ncc - 1e-9 * (dx * dx + dy * dy) as f64;
            if ranked > best_score {
                best_score = ranked;
                best = (dx, dy);
            }
        }
    }
    let at = |dx: i32, dy: i32| scores[((dy + NCC_SEARCH) as usize) * side + (dx + NCC_SEARCH) as usize];
    let (bx, by) = best;
    let ox = if bx.abs() < NCC_SEARCH {
        parabolic_offset(at(bx - 1, by), at(bx, by), at(bx + 1, by))
    } else {
        0.0
    };
    let oy = if by.abs() < NCC_SEARCH {
        parabolic_offset(at(bx, by - 1), at(bx, by), at(bx, by + 1))
    } else {
        0.0
    };
    let x = (p.0 + bx as f64 + ox).clamp(0.0, (b.width() - 1) as f64);
    let y = (p.1 + by as f64 + oy).clamp(0.0, (b.height() - 1) as f64);
    (x, y)
}

/// Tracks the present joints of `init` forwards and backwards from its key
/// frame, producing a `window`-frame track positioned around the key frame
/// and clamped to the clip. Absent joints stay absent in every frame.
pub fn track_joints(clip: &VideoClip, init: &PoseAnnotation, window: usize) -> Result<JointTrack, PoseError> {
    let n = clip.frame_count();
    let key = init.frame;
    if key >= n {
        return Err(PoseError::KeyFrameOutOfRange { key, frames: n });
    }
    if window == 0 || window > n {
        return Err(PoseError::WindowTooLong { window, frames: n });
    }
    let start = key.saturating_sub(window / 2).min(n - window);
    let mut frames: Vec<JointFrame> = vec![[None; NUM_JOINTS]; window];
    frames[key - start] = init.positions();
    for f in key..start + window - 1 {
        let prev = frames[f - start];
        let (a, b) = (clip.frame(f), clip.frame(f + 1));
        frames[f + 1 - start] = prev.map(|p| p.map(|p| ncc_step(a, b, p)));
    }
    for f in (start + 1..=key).rev() {
        let next = frames[f - start];
        let (a, b) = (clip.frame(f), clip.frame(f - 1));
        frames[f - 1 - start] = next.map(|p| p.map(|p| ncc_step(a, b, p)));
    }
    let source = match init.source {
        super::PoseSource::Gt => TrackSource::GtTracked,
        super::PoseSource::Ps => TrackSource::PsTracked,
    };
    Ok(JointTrack {
        start_frame: start,
        frames,
        source,
    })
}
