//! Activity recognition from holistic dense-trajectory features and
//! body-pose features.
//!
//! The crate is organised bottom-up:
//!
//! * [`media`] frame sequences, PGM/PNG ingestion and the synthetic clip generator
//! * [`flow`] dense pyramidal Lucas-Kanade flow, median filtering, affine camera motion
//! * [`trajectories`] dense point tracking, pruning and Traj/HOG/HOF/MBH descriptors
//! * [`pose`] joint annotations, patch tracking, pose descriptors and body masks
//! * [`encoding`] k-means codebooks and bag-of-words histograms
//! * [`learning`] chi-squared feature map, one-vs-all SGD SVMs and fusion
//! * [`analysis`] complexity measures, average precision and class ranking
//! * [`pipeline`] manifest-driven stages used by the command line tool

pub mod analysis;
pub mod encoding;
pub mod flow;
pub mod io;
pub mod learning;
pub mod media;
pub mod pipeline;
pub mod pose;
pub mod trajectories;

mod par;

pub use analysis::{average_precision, mean_average_precision, EvalReport};
pub use encoding::{encode_histogram, stack_features, train_codebook, BowHistogram, ClipFeature, Codebook};
pub use flow::{compute_flow, estimate_global_motion, median_filter_flow, FlowField, GlobalMotion};
pub use learning::{chi2_feature_map, predict_scores, train_one_vs_all, ClassifierBank, FeatureMapParams};
pub use media::{Frame, SyntheticSpec, VideoClip};
pub use pose::{Joint, JointTrack, PoseAnnotation};
pub use trajectories::{DescriptorSet, DtConfig, Trajectory};
