//! Body-joint annotations and everything computed from them: patch-based
//! joint tracking, 7-frame pose descriptors, and body masks for filtering
//! dense trajectories.

mod annotation;
mod descriptor;
mod mask;
mod track;

use thiserror::Error;

pub use annotation::{
    inject_noise, load_annotations, parse_annotations, write_annotations, Joint, JointObservation, PoseAnnotation,
    PoseSource, TorsoRotation, NUM_JOINTS,
};
pub use descriptor::{
    compute_pose_descriptors, hip_center, inner_angle, torso_length, PoseDescriptorKind, PoseDescriptors,
    ANGLE_TRIPLES,
};
pub use mask::{build_body_mask, filter_trajectories_by_mask, BodyMask, BODY_PARTS, DEFAULT_PART_WIDTH_FRAC};
pub use track::{
    ncc_step, tile_windows, track_joints, window_starts, JointFrame, JointTrack, TrackSource, NCC_PATCH, NCC_SEARCH,
    POSE_STEP, POSE_WINDOW,
};

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("annotation parse error: {0}")]
    Parse(String),
    #[error("annotation invariant violated: {0}")]
    InvariantViolation(String),
    #[error("key frame {key} outside clip of {frames} frames")]
    KeyFrameOutOfRange { key: usize, frames: usize },
    #[error("window of {window} frames does not fit a clip of {frames} frames")]
    WindowTooLong { window: usize, frames: usize },
    #[error("torso length undefined or below 1 px in window frame {frame}")]
    DegenerateTorso { frame: usize },
    #[error("no localized joints to build a body mask from")]
    NoJoints,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
