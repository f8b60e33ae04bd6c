//! Manifest-driven stages: dataset generation, extraction, codebooks,
//! encoding, training, prediction, evaluation, complexity analysis and
//! reporting. Every stage stamps its output directory with a config hash
//! and refuses upstream artifacts whose stamp does not match.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError, ComplexityProfile, EvalReport, Measure, ReferencePose};
use crate::encoding::{self, ClipFeature, Codebook, DescriptorType, EncodingError};
use crate::io::{config_hash, read_stamp, write_file, write_stamp};
use crate::learning::{self, ClassifierBank, FeatureMapParams, LearningError, ScoreVector, SvmParams};
use crate::media::{self, generate_synthetic_clip, MediaError, Motif, SyntheticSpec, VideoClip};
use crate::par;
use crate::pose::{
    self, build_body_mask, compute_pose_descriptors, inject_noise, tile_windows, track_joints, BodyMask, JointFrame,
    JointTrack, PoseAnnotation, PoseDescriptors, PoseError, TrackSource, NUM_JOINTS, POSE_WINDOW,
};
use crate::trajectories::{
    self, extract_dense_trajectories, DescriptorSet, DtConfig, FeatureDumpHeader, Trajectory, TrajectoryError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("clip {0} has no annotation file for a pose-based method")]
    MissingAnnotations(String),
    #[error("stale artifacts in {dir}: stamp {found:?}, expected {expected}")]
    StaleArtifacts {
        dir: PathBuf,
        expected: String,
        found: Option<String>,
    },
    #[error("unknown subset {0:?}")]
    UnknownSubset(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "DT")]
    Dt,
    #[serde(rename = "GT")]
    Gt,
    #[serde(rename = "GT-T")]
    GtT,
    #[serde(rename = "PS-T")]
    PsT,
    #[serde(rename = "PS-M")]
    PsM,
    #[serde(rename = "PSM+DT-features")]
    PsmDtFeatures,
    #[serde(rename = "PSM+DT-classifiers")]
    PsmDtClassifiers,
    #[serde(rename = "PSM-filter-DT")]
    PsmFilterDt,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Dt,
        Method::Gt,
        Method::GtT,
        Method::PsT,
        Method::PsM,
        Method::PsmDtFeatures,
        Method::PsmDtClassifiers,
        Method::PsmFilterDt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dt => "DT",
            Method::Gt => "GT",
            Method::GtT => "GT-T",
            Method::PsT => "PS-T",
            Method::PsM => "PS-M",
            Method::PsmDtFeatures => "PSM+DT-features",
            Method::PsmDtClassifiers => "PSM+DT-classifiers",
            Method::PsmFilterDt => "PSM-filter-DT",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s) || m.slug() == s)
    }

    /// Directory name under the output root.
    pub fn slug(self) -> &'static str {
        match self {
            Method::Dt => "dt",
            Method::Gt => "gt",
            Method::GtT => "gt-t",
            Method::PsT => "ps-t",
            Method::PsM => "ps-m",
            Method::PsmDtFeatures => "psm-dt-features",
            Method::PsmDtClassifiers => "psm-dt-classifiers",
            Method::PsmFilterDt => "psm-filter-dt",
        }
    }

    /// Feature channels the method extracts, in stacking order.
    pub fn channels(self) -> Vec<Channel> {
        match self {
            Method::Dt => vec![Channel::Dt],
            Method::Gt => vec![Channel::Pose(TrackSource::Gt)],
            Method::GtT => vec![Channel::Pose(TrackSource::GtTracked)],
            Method::PsT => vec![Channel::Pose(TrackSource::PsTracked)],
            Method::PsM => vec![Channel::Pose(TrackSource::PsMulti)],
            Method::PsmDtFeatures | Method::PsmDtClassifiers => vec![Channel::Dt, Channel::Pose(TrackSource::PsMulti)],
            Method::PsmFilterDt => vec![Channel::DtFiltered],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Dt,
    /// Dense trajectories kept by the body mask of the per-frame estimates.
    DtFiltered,
    Pose(TrackSource),
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Dt => "dt",
            Channel::DtFiltered => "dt-filtered",
            Channel::Pose(TrackSource::Gt) => "pose-gt",
            Channel::Pose(TrackSource::GtTracked) => "pose-gt-t",
            Channel::Pose(TrackSource::PsTracked) => "pose-ps-t",
            Channel::Pose(TrackSource::PsMulti) => "pose-ps-m",
        }
    }

    pub fn descriptor_types(self) -> &'static [DescriptorType] {
        match self {
            Channel::Dt | Channel::DtFiltered => &DescriptorType::DT,
            Channel::Pose(_) => &DescriptorType::POSE,
        }
    }

    fn is_dt(self) -> bool {
        matches!(self, Channel::Dt | Channel::DtFiltered)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dt: DtConfig,
    pub dt_words: usize,
    pub pose_words: usize,
    pub sample_cap: usize,
    pub kmeans_iters: usize,
    pub feature_map: FeatureMapParams,
    pub svm: SvmParams,
    pub part_width_frac: f64,
    /// Jitter (px) and dropout used to derive estimated joints from the
    /// synthetic ground truth.
    pub pose_noise_sigma: f64,
    pub pose_dropout: f64,
    /// Folds for the held-out first-stage scores of score fusion.
    pub score_folds: usize,
    pub allow_short: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dt: DtConfig::default(),
            dt_words: encoding::DT_WORDS,
            pose_words: encoding::POSE_WORDS,
            sample_cap: encoding::DEFAULT_SAMPLE_CAP,
            kmeans_iters: encoding::DEFAULT_MAX_ITERS,
            feature_map: FeatureMapParams::default(),
            svm: SvmParams::default(),
            part_width_frac: pose::DEFAULT_PART_WIDTH_FRAC,
            pose_noise_sigma: 1.0,
            pose_dropout: 0.05,
            score_folds: 5,
            allow_short: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEntry {
    pub clip_id: String,
    pub spec: SyntheticSpec,
    pub label: u32,
    pub split: Split,
}

/// One clip of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub clip_id: String,
    pub label: u32,
    pub split: Split,
    pub key_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Dataset directory; defaults to `<out>/dataset`.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Clips for `synth-gen`; empty means the standard five-motif benchmark.
    #[serde(default)]
    pub synthetic: Vec<SyntheticEntry>,
    pub method: Method,
    #[serde(default)]
    pub config: PipelineConfig,
    #[serde(default)]
    pub seed: u64,
    pub out: PathBuf,
}

impl RunManifest {
    /// Reads a manifest; relative paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path)?;
        let mut m: RunManifest = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if m.out.is_relative() {
            m.out = base.join(&m.out);
        }
        if let Some(d) = &m.dataset {
            if d.is_relative() {
                m.dataset = Some(base.join(d));
            }
        }
        Ok(m)
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.out.join("dataset"))
    }

    pub fn method_dir(&self) -> PathBuf {
        self.out.join(self.method.slug())
    }
}

/// The standard synthetic benchmark: every motif is a class with
/// `per_class` clips of randomised parameters; the first 75% of each class
/// is the training split.
pub fn benchmark_entries(per_class: usize, seed: u64, width: usize, height: usize, frames: usize) -> Vec<SyntheticEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_train = (per_class * 3).div_ceil(4);
    let mut out = Vec::new();
    for (label, motif) in Motif::ALL.into_iter().enumerate() {
        for i in 0..per_class {
            let clip_seed = rng.random::<u32>() as u64;
            let mut spec = SyntheticSpec::new(motif, clip_seed).with_size(width, height, frames);
            match motif {
                Motif::TranslatingBlob => {
                    let a = rng.random_range(0.0..std::f64::consts::TAU);
                    let s = rng.random_range(1.0..2.0);
                    spec = spec.with_param("vx", s * a.cos()).with_param("vy", s * a.sin());
                }
                Motif::RotatingTexture => {
                    let w = rng.random_range(0.04..0.08);
                    spec = spec.with_param("omega", if rng.random::<bool>() { w } else { -w });
                }
                Motif::OscillatingLimbFigure | Motif::TwoFigureScene => {
                    spec = spec
                        .with_param("period", rng.random_range(12.0..20.0))
                        .with_param("phase", rng.random_range(0.0..std::f64::consts::TAU))
                        .with_param("arm_amp", rng.random_range(30.0..50.0));
                }
                Motif::StaticTextured => {}
            }
            out.push(SyntheticEntry {
                clip_id: format!("{}-{i:03}", motif.name()),
                spec,
                label: label as u32,
                split: if i < n_train { Split::Train } else { Split::Test },
            });
        }
    }
    out
}

fn clip_dir(root: &Path, id: &str) -> PathBuf {
    root.join("clips").join(id)
}

fn annotation_path(root: &Path, id: &str, source: &str) -> PathBuf {
    root.join("annotations").join(format!("{id}.{source}.jsonl"))
}

/// Renders the manifest's synthetic clips into a dataset directory: frames,
/// ground-truth joints, noisy estimated joints and `index.json`.
pub fn synth_gen(m: &RunManifest) -> Result<Vec<DatasetEntry>> {
    let entries = if m.synthetic.is_empty() {
        benchmark_entries(20, m.seed, 64, 64, 45)
    } else {
        m.synthetic.clone()
    };
    let root = m.dataset_dir();
    std::fs::create_dir_all(root.join("annotations"))?;
    let cfg = &m.config;
    let results = par::map(&entries, |e| -> Result<DatasetEntry> {
        let s = generate_synthetic_clip(&e.spec)?;
        media::write_frame_sequence(&s.clip, &clip_dir(&root, &e.clip_id))?;
        pose::write_annotations(&annotation_path(&root, &e.clip_id, "gt"), &s.poses)?;
        let noisy = inject_noise(
            &s.poses,
            cfg.pose_noise_sigma,
            cfg.pose_dropout,
            s.clip.width(),
            s.clip.height(),
            m.seed ^ e.spec.seed.rotate_left(17),
        );
        pose::write_annotations(&annotation_path(&root, &e.clip_id, "ps"), &noisy)?;
        Ok(DatasetEntry {
            clip_id: e.clip_id.clone(),
            label: e.label,
            split: e.split,
            key_frame: s.clip.frame_count() / 2,
        })
    });
    let index = results.into_iter().collect::<Result<Vec<_>>>()?;
    write_file(&root.join("index.json"), serde_json::to_string_pretty(&index)?)?;
    Ok(index)
}

/// A run bound to its dataset.
pub struct Run {
    pub manifest: RunManifest,
    pub root: PathBuf,
    pub index: Vec<DatasetEntry>,
    index_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    All,
    SingleFullyVisible,
}

impl Subset {
    pub fn parse(s: &str) -> Result<Subset> {
        match s {
            "all" => Ok(Subset::All),
            "single-fully-visible" => Ok(Subset::SingleFullyVisible),
            other => Err(PipelineError::UnknownSubset(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::SingleFullyVisible => "single-fully-visible",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PoseDescriptorFile {
    relative: Vec<Vec<f64>>,
    angles: Vec<Vec<f64>>,
    temporal: Vec<Vec<f64>>,
}

impl PoseDescriptorFile {
    fn get(&self, t: DescriptorType) -> &[Vec<f64>] {
        match t {
            DescriptorType::PoseRelative => &self.relative,
            DescriptorType::PoseAngles => &self.angles,
            _ => &self.temporal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub top_n: Option<usize>,
    pub subset: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            top_n: None,
            subset: "all".into(),
        }
    }
}

impl Run {
    pub fn open(manifest: RunManifest) -> Result<Run> {
        let root = manifest.dataset_dir();
        let bytes = std::fs::read(root.join("index.json"))
            .map_err(|e| PipelineError::Manifest(format!("dataset index {}: {e}", root.join("index.json").display())))?;
        let index: Vec<DatasetEntry> = serde_json::from_slice(&bytes)?;
        Ok(Run {
            manifest,
            root,
            index,
            index_hash: crate::io::bytes_hash(&bytes),
        })
    }

    fn dir(&self, stage: &str) -> PathBuf {
        self.manifest.method_dir().join(stage)
    }

    fn cfg(&self) -> &PipelineConfig {
        &self.manifest.config
    }

    pub fn extract_hash(&self) -> String {
        let c = self.cfg();
        config_hash(&(
            "extract",
            self.manifest.method,
            &self.index_hash,
            &c.dt,
            c.part_width_frac,
            c.allow_short,
        ))
    }

    pub fn codebook_hash(&self) -> String {
        let c = self.cfg();
        config_hash(&(
            "codebooks",
            self.extract_hash(),
            c.dt_words,
            c.pose_words,
            c.sample_cap,
            c.kmeans_iters,
            self.manifest.seed,
        ))
    }

    pub fn encode_hash(&self) -> String {
        config_hash(&("encode", self.codebook_hash()))
    }

    pub fn train_hash(&self) -> String {
        let c = self.cfg();
        config_hash(&("train", self.encode_hash(), &c.feature_map, &c.svm, c.score_folds, self.manifest.seed))
    }

    pub fn predict_hash(&self) -> String {
        config_hash(&("predict", self.train_hash()))
    }

    pub fn analysis_hash(&self) -> String {
        let c = self.cfg();
        config_hash(&("analyze", &self.index_hash, &c.dt, c.part_width_frac, c.allow_short))
    }

    fn require(&self, stage: &str, expected: &str) -> Result<()> {
        let dir = self.dir(stage);
        let found = read_stamp(&dir).map(|s| s.config_hash);
        if found.as_deref() != Some(expected) {
            return Err(PipelineError::StaleArtifacts {
                dir,
                expected: expected.to_string(),
                found,
            });
        }
        Ok(())
    }

    fn load_clip(&self, id: &str) -> Result<VideoClip> {
        Ok(media::load_frame_sequence(
            &clip_dir(&self.root, id),
            "frame_*.pgm",
            self.cfg().allow_short,
        )?)
    }

    fn load_anns(&self, id: &str, source: &str, clip: &VideoClip) -> Result<Vec<PoseAnnotation>> {
        let p = annotation_path(&self.root, id, source);
        if !p.exists() {
            return Err(PipelineError::MissingAnnotations(id.to_string()));
        }
        Ok(pose::load_annotations(&p, Some((clip.width(), clip.height())))?)
    }

    fn split_entries(&self, split: Split) -> Vec<&DatasetEntry> {
        self.index.iter().filter(|e| e.split == split).collect()
    }

    // ---- extract -------------------------------------------------------

    pub fn extract(&self) -> Result<()> {
        let dir = self.dir("extract");
        let channels = self.manifest.method.channels();
        let results = par::map(&self.index, |e| self.extract_clip(e, &channels, &dir));
        results.into_iter().collect::<Result<Vec<_>>>()?;
        write_stamp(&dir, "extract", &self.extract_hash())?;
        Ok(())
    }

    fn extract_clip(&self, e: &DatasetEntry, channels: &[Channel], dir: &Path) -> Result<()> {
        let clip = self.load_clip(&e.clip_id)?;
        let cfg = &self.cfg().dt;
        let mut dt: Option<trajectories::DtExtraction> = None;
        for &ch in channels {
            let out = dir.join(ch.name());
            match ch {
                Channel::Dt | Channel::DtFiltered => {
                    if dt.is_none() {
                        dt = Some(extract_dense_trajectories(&clip, cfg)?);
                    }
                    let x = dt.as_ref().unwrap();
                    let (trajs, descs) = if ch == Channel::DtFiltered {
                        let anns = self.load_anns(&e.clip_id, "ps", &clip)?;
                        let mask = self.body_mask(&anns, &clip);
                        filter_with_descriptors(&x.trajectories, &x.descriptors, &mask)
                    } else {
                        (x.trajectories.clone(), x.descriptors.clone())
                    };
                    let header = FeatureDumpHeader {
                        config: *cfg,
                        count: trajs.len(),
                        record_len: cfg.record_len(),
                        track_points: cfg.track_length + 1,
                        width: clip.width(),
                        height: clip.height(),
                        frames: clip.frame_count(),
                        raw_count: x.raw_count,
                        config_hash: self.extract_hash(),
                    };
                    trajectories::write_feature_dump(&out, &e.clip_id, &trajs, &descs, &header)?;
                }
                Channel::Pose(src) => {
                    let descs = self.pose_descriptors(e, &clip, src)?;
                    let file = PoseDescriptorFile {
                        relative: descs.iter().map(|d| d.relative.clone()).collect(),
                        angles: descs.iter().map(|d| d.angles.clone()).collect(),
                        temporal: descs.iter().map(|d| d.temporal.clone()).collect(),
                    };
                    write_file(&out.join(format!("{}.pose.json", e.clip_id)), serde_json::to_string(&file)?)?;
                }
            }
        }
        Ok(())
    }

    /// Body mask from per-frame estimated joints; without any localised
    /// joint the mask is empty.
    fn body_mask(&self, anns: &[PoseAnnotation], clip: &VideoClip) -> BodyMask {
        build_body_mask(anns, clip.width(), clip.height(), clip.frame_count(), self.cfg().part_width_frac)
            .unwrap_or_else(|_| BodyMask::empty(clip.width(), clip.height(), clip.frame_count()))
    }

    /// Pose descriptor windows for every person of the clip.
    fn pose_descriptors(&self, e: &DatasetEntry, clip: &VideoClip, src: TrackSource) -> Result<Vec<PoseDescriptors>> {
        let source = match src {
            TrackSource::Gt | TrackSource::GtTracked => "gt",
            TrackSource::PsTracked | TrackSource::PsMulti => "ps",
        };
        let anns = self.load_anns(&e.clip_id, source, clip)?;
        let mut by_person: BTreeMap<u32, Vec<&PoseAnnotation>> = BTreeMap::new();
        for a in &anns {
            by_person.entry(a.person_id).or_default().push(a);
        }
        let mut tracks: Vec<JointTrack> = Vec::new();
        for person in by_person.values() {
            let key = person.iter().find(|a| a.frame == e.key_frame);
            match src {
                TrackSource::Gt => {
                    if let Some(a) = key {
                        tracks.push(JointTrack::single_pose(a.positions(), e.key_frame, POSE_WINDOW));
                    }
                }
                TrackSource::GtTracked | TrackSource::PsTracked => {
                    if let Some(a) = key {
                        tracks.push(track_joints(clip, a, POSE_WINDOW)?);
                    }
                }
                TrackSource::PsMulti => {
                    let mut per_frame: Vec<JointFrame> = vec![[None; NUM_JOINTS]; clip.frame_count()];
                    for a in person {
                        if a.frame < per_frame.len() {
                            per_frame[a.frame] = a.positions();
                        }
                    }
                    tracks.extend(tile_windows(&per_frame, 0, TrackSource::PsMulti));
                }
            }
        }
        // windows without a usable torso contribute nothing
        Ok(tracks.iter().filter_map(|t| compute_pose_descriptors(t).ok()).collect())
    }

    // ---- codebooks -----------------------------------------------------

    fn descriptor_counts(&self, ch: Channel, id: &str) -> Result<usize> {
        let dir = self.dir("extract").join(ch.name());
        if ch.is_dt() {
            let h: FeatureDumpHeader = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{id}.dt.json")))?)?;
            Ok(h.count)
        } else {
            Ok(self.read_pose_file(ch, id)?.relative.len())
        }
    }

    fn read_pose_file(&self, ch: Channel, id: &str) -> Result<PoseDescriptorFile> {
        let p = self.dir("extract").join(ch.name()).join(format!("{id}.pose.json"));
        Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?)
    }

    /// All descriptors of `ch` for one clip, grouped by type.
    fn clip_descriptors(&self, ch: Channel, id: &str) -> Result<BTreeMap<DescriptorType, Vec<Vec<f64>>>> {
        let mut out = BTreeMap::new();
        if ch.is_dt() {
            let d = trajectories::read_feature_dump(&self.dir("extract").join(ch.name()), id)?;
            let conv = |v: &Vec<f32>| v.iter().map(|x| *x as f64).collect::<Vec<f64>>();
            out.insert(DescriptorType::Traj, d.records.iter().map(|r| conv(&r.traj)).collect());
            out.insert(DescriptorType::Hog, d.records.iter().map(|r| conv(&r.hog)).collect());
            out.insert(DescriptorType::Hof, d.records.iter().map(|r| conv(&r.hof)).collect());
            out.insert(DescriptorType::Mbh, d.records.iter().map(|r| conv(&r.mbh)).collect());
        } else {
            let f = self.read_pose_file(ch, id)?;
            for t in DescriptorType::POSE {
                out.insert(t, f.get(t).to_vec());
            }
        }
        Ok(out)
    }

    fn codebook_path(&self, ch: Channel, t: DescriptorType) -> PathBuf {
        self.dir("codebooks").join(format!("{}.{}.cb", ch.name(), t.name()))
    }

    pub fn train_codebooks(&self) -> Result<()> {
        self.require("extract", &self.extract_hash())?;
        let cfg = self.cfg();
        let train = self.split_entries(Split::Train);
        for ch in self.manifest.method.channels() {
            let counts = train
                .iter()
                .map(|e| self.descriptor_counts(ch, &e.clip_id))
                .collect::<Result<Vec<_>>>()?;
            let total: usize = counts.iter().sum();
            let k = if ch.is_dt() { cfg.dt_words } else { cfg.pose_words };
            // one seeded subsample of descriptor slots shared by all types
            let mut rng = ChaCha8Rng::seed_from_u64(self.manifest.seed ^ config_hash(&ch.name()).len() as u64);
            let take = total.min(cfg.sample_cap.max(k));
            let mut chosen: Vec<usize> = sample(&mut rng, total, take).into_vec();
            chosen.sort_unstable();
            let mut samples: BTreeMap<DescriptorType, Vec<Vec<f64>>> = BTreeMap::new();
            let mut offset = 0usize;
            let mut cursor = 0usize;
            for (e, n) in train.iter().zip(&counts) {
                let end = offset + n;
                let mut local = Vec::new();
                while cursor < chosen.len() && chosen[cursor] < end {
                    local.push(chosen[cursor] - offset);
                    cursor += 1;
                }
                if !local.is_empty() {
                    let descs = self.clip_descriptors(ch, &e.clip_id)?;
                    for (t, v) in descs {
                        let dst = samples.entry(t).or_default();
                        dst.extend(local.iter().map(|&i| v[i].clone()));
                    }
                }
                offset = end;
            }
            for &t in ch.descriptor_types() {
                let s = samples.remove(&t).unwrap_or_default();
                let seed = self.manifest.seed.wrapping_add(t.tag() as u64);
                let cb = encoding::train_codebook_capped(&s, k, seed, cfg.kmeans_iters, t, cfg.sample_cap)?;
                std::fs::create_dir_all(self.dir("codebooks"))?;
                cb.write(&self.codebook_path(ch, t))?;
            }
        }
        write_stamp(&self.dir("codebooks"), "codebooks", &self.codebook_hash())?;
        Ok(())
    }

    // ---- encode --------------------------------------------------------

    pub fn encode(&self) -> Result<()> {
        self.require("codebooks", &self.codebook_hash())?;
        let channels = self.manifest.method.channels();
        let mut books: Vec<Vec<Codebook>> = Vec::new();
        for &ch in &channels {
            books.push(
                ch.descriptor_types()
                    .iter()
                    .map(|&t| Codebook::read(&self.codebook_path(ch, t)))
                    .collect::<std::result::Result<Vec<_>, _>>()?,
            );
        }
        let dir = self.dir("encode");
        let hash = self.encode_hash();
        let results = par::map(&self.index, |e| -> Result<()> {
            for (ch, cbs) in channels.iter().zip(&books) {
                let descs = self.clip_descriptors(*ch, &e.clip_id)?;
                let mut hists = Vec::new();
                let mut ids = Vec::new();
                for cb in cbs {
                    let d = descs.get(&cb.descriptor_type).map(Vec::as_slice).unwrap_or(&[]);
                    hists.push(encoding::encode_histogram(d, cb)?);
                    ids.push(format!("{}.{}", ch.name(), cb.descriptor_type.name()));
                }
                let f = encoding::stack_with_ids(&hists, ch.descriptor_types(), &ids)?;
                encoding::write_clip_feature(&dir.join(ch.name()), &e.clip_id, &e.clip_id, &f, &hash)?;
            }
            Ok(())
        });
        results.into_iter().collect::<Result<Vec<_>>>()?;
        write_stamp(&dir, "encode", &hash)?;
        Ok(())
    }

    fn read_feature(&self, ch: Channel, id: &str) -> Result<ClipFeature> {
        let (f, hash) = encoding::read_clip_feature(&self.dir("encode").join(ch.name()), id)?;
        if hash != self.encode_hash() {
            return Err(PipelineError::StaleArtifacts {
                dir: self.dir("encode"),
                expected: self.encode_hash(),
                found: Some(hash),
            });
        }
        Ok(f)
    }

    /// The feature a single-stage classifier sees: one channel, or DT and
    /// pose stacked for feature fusion.
    fn stage_feature(&self, id: &str) -> Result<ClipFeature> {
        let chans = self.manifest.method.channels();
        let mut f = self.read_feature(chans[0], id)?;
        for ch in &chans[1..] {
            let g = self.read_feature(*ch, id)?;
            f = learning::fuse_features(id, &f, id, &g)?;
        }
        Ok(f)
    }

    // ---- train / predict ----------------------------------------------

    pub fn train(&self) -> Result<()> {
        self.require("encode", &self.encode_hash())?;
        let cfg = self.cfg();
        let train = self.split_entries(Split::Train);
        let labels: Vec<u32> = train.iter().map(|e| e.label).collect();
        let seed = self.manifest.seed;
        let dir = self.dir("model");
        let hash = self.train_hash();
        let map = Some(&cfg.feature_map);
        if self.manifest.method == Method::PsmDtClassifiers {
            let mut first_stage = Vec::new();
            for ch in self.manifest.method.channels() {
                let feats = train
                    .iter()
                    .map(|e| self.read_feature(ch, &e.clip_id))
                    .collect::<Result<Vec<_>>>()?;
                let mut bank = learning::train_one_vs_all(&feats, &labels, map, &cfg.svm, seed)?;
                bank.manifest.config_hash = hash.clone();
                bank.save(&dir, ch.name())?;
                first_stage.push(learning::cross_fitted_scores(&feats, &labels, map, &cfg.svm, seed, cfg.score_folds)?);
            }
            let fused: Vec<ClipFeature> = (0..train.len())
                .map(|i| {
                    let mut v = first_stage[0][i].clone();
                    v.extend_from_slice(&first_stage[1][i]);
                    ClipFeature::raw(v)
                })
                .collect();
            let mut bank = learning::train_one_vs_all(&fused, &labels, None, &cfg.svm, seed)?;
            bank.manifest.config_hash = hash.clone();
            bank.save(&dir, "fusion")?;
        } else {
            let feats = train
                .iter()
                .map(|e| self.stage_feature(&e.clip_id))
                .collect::<Result<Vec<_>>>()?;
            let mut bank = learning::train_one_vs_all(&feats, &labels, map, &cfg.svm, seed)?;
            bank.manifest.config_hash = hash.clone();
            bank.save(&dir, "bank")?;
        }
        write_stamp(&dir, "train", &hash)?;
        Ok(())
    }

    fn load_bank(&self, stem: &str) -> Result<ClassifierBank> {
        let b = ClassifierBank::load(&self.dir("model"), stem)?;
        if b.manifest.config_hash != self.train_hash() {
            return Err(PipelineError::StaleArtifacts {
                dir: self.dir("model"),
                expected: self.train_hash(),
                found: Some(b.manifest.config_hash),
            });
        }
        Ok(b)
    }

    /// Scores every clip of the dataset; `predict/scores.csv`.
    pub fn predict(&self) -> Result<Vec<ScoreVector>> {
        self.require("model", &self.train_hash())?;
        let scores: Vec<ScoreVector> = if self.manifest.method == Method::PsmDtClassifiers {
            let chans = self.manifest.method.channels();
            let dt = self.load_bank(chans[0].name())?;
            let ps = self.load_bank(chans[1].name())?;
            let fusion = self.load_bank("fusion")?;
            par::map(&self.index, |e| -> Result<ScoreVector> {
                let a = learning::score_vector(&dt, &e.clip_id, &self.read_feature(chans[0], &e.clip_id)?)?;
                let b = learning::score_vector(&ps, &e.clip_id, &self.read_feature(chans[1], &e.clip_id)?)?;
                let f = learning::fuse_classifier_scores(&a, &b)?;
                Ok(learning::score_vector(&fusion, &e.clip_id, &f)?)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?
        } else {
            let bank = self.load_bank("bank")?;
            par::map(&self.index, |e| -> Result<ScoreVector> {
                Ok(learning::score_vector(&bank, &e.clip_id, &self.stage_feature(&e.clip_id)?)?)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?
        };
        let dir = self.dir("predict");
        std::fs::create_dir_all(&dir)?;
        learning::write_predictions_csv(&dir.join("scores.csv"), &scores)?;
        write_stamp(&dir, "predict", &self.predict_hash())?;
        Ok(scores)
    }

    // ---- eval ----------------------------------------------------------

    pub fn train_sizes(&self) -> BTreeMap<u32, usize> {
        let mut m = BTreeMap::new();
        for e in &self.index {
            let c = m.entry(e.label).or_insert(0);
            if e.split == Split::Train {
                *c += 1;
            }
        }
        m
    }

    /// Exactly one annotated person whose key-frame pose has no truncated
    /// joint.
    fn single_fully_visible(&self, e: &DatasetEntry) -> Result<bool> {
        let p = annotation_path(&self.root, &e.clip_id, "gt");
        if !p.exists() {
            return Ok(false);
        }
        let anns = pose::load_annotations(&p, None)?;
        let people: BTreeSet<u32> = anns.iter().map(|a| a.person_id).collect();
        if people.len() != 1 {
            return Ok(false);
        }
        Ok(anns
            .iter()
            .find(|a| a.frame == e.key_frame)
            .is_some_and(|a| a.truncated_count() == 0))
    }

    pub fn eval(&self, opts: &EvalOptions) -> Result<EvalReport> {
        self.require("predict", &self.predict_hash())?;
        let subset = Subset::parse(&opts.subset)?;
        let scores = learning::read_predictions_csv(&self.dir("predict").join("scores.csv"))?;
        let by_id: BTreeMap<&str, &ScoreVector> = scores.iter().map(|s| (s.clip_id.as_str(), s)).collect();
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        let mut class_ids: Vec<u32> = Vec::new();
        for e in self.split_entries(Split::Test) {
            if subset == Subset::SingleFullyVisible && !self.single_fully_visible(e)? {
                continue;
            }
            let s = by_id
                .get(e.clip_id.as_str())
                .ok_or_else(|| PipelineError::Manifest(format!("no scores for clip {}", e.clip_id)))?;
            class_ids = s.class_ids.clone();
            rows.push(s.scores.clone());
            truth.push(e.label);
        }
        let sizes = self.train_sizes();
        let classes: Vec<(u32, usize)> = sizes.iter().map(|(c, n)| (*c, *n)).collect();
        let wanted = match opts.top_n {
            Some(n) => analysis::top_n_by_train_size(&classes, n)?,
            None => classes.iter().map(|c| c.0).collect(),
        };
        let report = analysis::mean_average_precision(&rows, &truth, &class_ids, Some(&wanted))?;
        let dir = self.dir("eval");
        let stem = eval_stem(opts);
        write_file(&dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&report)?)?;
        let mut csv = String::from("class,ap,train_size\n");
        for (c, ap) in report.class_ids.iter().zip(&report.ap) {
            csv.push_str(&format!("{c},{ap:.6},{}\n", sizes.get(c).copied().unwrap_or(0)));
        }
        csv.push_str(&format!("mean,{:.6},\n", report.map));
        write_file(&dir.join(format!("{stem}.csv")), csv)?;
        write_stamp(&dir, "eval", &config_hash(&(self.predict_hash(), opts)))?;
        Ok(report)
    }

    // ---- analyze -------------------------------------------------------

    /// Per-clip complexity profiles and class means under `analysis/`.
    pub fn analyze(&self) -> Result<Vec<ComplexityProfile>> {
        let train_keys: Vec<PoseAnnotation> = self
            .split_entries(Split::Train)
            .iter()
            .filter_map(|e| self.key_annotation(e).transpose())
            .collect::<Result<Vec<_>>>()?;
        let reference = ReferencePose::from_annotations(&train_keys);
        let cached = read_stamp(&self.dir("extract")).is_some_and(|s| s.config_hash == self.extract_hash())
            && self.manifest.method.channels().contains(&Channel::Dt);
        let profiles = par::map(&self.index, |e| -> Result<ComplexityProfile> {
            let clip = self.load_clip(&e.clip_id)?;
            let trajs: Vec<Trajectory> = if cached {
                trajectories::read_feature_dump(&self.dir("extract").join(Channel::Dt.name()), &e.clip_id)?.tracks
            } else {
                extract_dense_trajectories(&clip, &self.cfg().dt)?.trajectories
            };
            let gt = self.load_anns_if_present(&e.clip_id, "gt", &clip)?;
            let ps = self.load_anns_if_present(&e.clip_id, "ps", &clip)?;
            let n_people = gt.iter().map(|a| a.person_id).collect::<BTreeSet<_>>().len();
            let mask = (ps.iter().any(|a| a.localized_count() > 0)).then(|| self.body_mask(&ps, &clip));
            let motion = analysis::compute_motion_complexity(&trajs, mask.as_ref(), n_people);
            let static_measures = match key_of(&gt, e.key_frame) {
                Some(a) => analysis::compute_static_complexity(a, &reference).ok(),
                None => None,
            };
            Ok(ComplexityProfile {
                clip_id: e.clip_id.clone(),
                class_id: e.label,
                static_measures,
                motion,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let dir = self.dir("analysis");
        write_file(&dir.join("complexity.json"), serde_json::to_string_pretty(&profiles)?)?;
        let classes = analysis::aggregate_by_class(&profiles);
        write_file(&dir.join("class_complexity.json"), serde_json::to_string_pretty(&classes)?)?;
        write_file(&dir.join("reference_pose.json"), serde_json::to_string_pretty(&reference)?)?;
        write_stamp(&dir, "analyze", &self.analysis_hash())?;
        Ok(profiles)
    }

    fn load_anns_if_present(&self, id: &str, source: &str, clip: &VideoClip) -> Result<Vec<PoseAnnotation>> {
        match self.load_anns(id, source, clip) {
            Err(PipelineError::MissingAnnotations(_)) => Ok(Vec::new()),
            other => other,
        }
    }

    /// Ground-truth key-frame annotation of the lowest person id.
    fn key_annotation(&self, e: &DatasetEntry) -> Result<Option<PoseAnnotation>> {
        let p = annotation_path(&self.root, &e.clip_id, "gt");
        if !p.exists() {
            return Ok(None);
        }
        let anns = pose::load_annotations(&p, None)?;
        Ok(key_of(&anns, e.key_frame).cloned())
    }
}

fn key_of(anns: &[PoseAnnotation], key: usize) -> Option<&PoseAnnotation> {
    anns.iter().filter(|a| a.frame == key).min_by_key(|a| a.person_id)
}

fn eval_stem(opts: &EvalOptions) -> String {
    match opts.top_n {
        Some(n) => format!("report_{}_top{n}", opts.subset),
        None => format!("report_{}", opts.subset),
    }
}

/// Keeps the trajectories (and their descriptors) that lie on the mask.
pub fn filter_with_descriptors(
    trajs: &[Trajectory],
    descs: &[DescriptorSet],
    mask: &BodyMask,
) -> (Vec<Trajectory>, Vec<DescriptorSet>) {
    let mut t = Vec::new();
    let mut d = Vec::new();
    for (tr, ds) in trajs.iter().zip(descs) {
        if !pose::filter_trajectories_by_mask(std::slice::from_ref(tr), mask).is_empty() {
            t.push(tr.clone());
            d.push(ds.clone());
        }
    }
    (t, d)
}

/// Runs every stage from extraction to evaluation.
pub fn run_all(m: &RunManifest, opts: &EvalOptions) -> Result<EvalReport> {
    let run = Run::open(m.clone())?;
    run.extract()?;
    run.train_codebooks()?;
    run.encode()?;
    run.train()?;
    run.predict()?;
    run.eval(opts)
}

/// Cross-method report under `<out>/report`: per-class tables, sorted
/// performance curves per complexity measure and their SVG plots.
pub fn report(m: &RunManifest, opts: &EvalOptions) -> Result<Vec<String>> {
    let out = m.out.as_path();
    let stem = eval_stem(opts);
    let mut methods: Vec<(Method, EvalReport)> = Vec::new();
    for m in Method::ALL {
        let p = out.join(m.slug()).join("eval").join(format!("{stem}.json"));
        if p.exists() {
            methods.push((m, serde_json::from_str(&std::fs::read_to_string(p)?)?));
        }
    }
    let complexity = Method::ALL
        .iter()
        .map(|m| out.join(m.slug()).join("analysis").join("class_complexity.json"))
        .find(|p| p.exists());
    let classes: Vec<analysis::ClassComplexity> = match complexity {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => Vec::new(),
    };
    let train_sizes: BTreeMap<u32, usize> = classes.iter().map(|c| (c.class_id, 0)).collect();
    let sizes = read_train_sizes(&m.dataset_dir()).unwrap_or(train_sizes);
    let dir = out.join("report");
    let mut written = Vec::new();
    let mut summary = String::from("method,map,classes,excluded\n");
    for (m, r) in &methods {
        let p = dir.join(format!("per_class_{}.csv", m.slug()));
        write_file(&p, analysis::per_class_csv(r, &sizes, &classes))?;
        written.push(p.display().to_string());
        summary.push_str(&format!("{},{:.6},{},{}\n", m.name(), r.map, r.class_ids.len(), r.excluded.len()));
    }
    write_file(&dir.join("summary.csv"), &summary)?;
    let mut curves = Vec::new();
    for measure in Measure::ALL {
        if classes.iter().any(|c| c.mean(measure).is_none()) || classes.is_empty() {
            continue;
        }
        let ranked = analysis::rank_classes(&classes, measure.name(), None)?;
        let mut series = Vec::new();
        for (m, r) in &methods {
            let pts = analysis::cumulative_map(&ranked, r);
            curves.push((measure, m.name().to_string(), pts.clone()));
            series.push((m.name().to_string(), pts));
        }
        let p = dir.join(format!("curve_{}.svg", measure.name()));
        write_file(&p, analysis::curve_svg(measure, &series))?;
        written.push(p.display().to_string());
    }
    write_file(&dir.join("curves.csv"), analysis::curve_csv(&curves))?;
    Ok(written)
}

fn read_train_sizes(dataset: &Path) -> Option<BTreeMap<u32, usize>> {
    let text = std::fs::read_to_string(dataset.join("index.json")).ok()?;
    let index: Vec<DatasetEntry> = serde_json::from_str(&text).ok()?;
    let mut m = BTreeMap::new();
    for e in index {
        let c = m.entry(e.label).or_insert(0);
        if e.split == Split::Train {
            *c += 1;
        }
    }
    Some(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()), Some(m));
            assert_eq!(Method::parse(m.slug()), Some(m));
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert_eq!(Method::PsmDtFeatures.channels().len(), 2);
    }

    #[test]
    fn benchmark_split() {
        let e = benchmark_entries(20, 1, 64, 64, 45);
        assert_eq!(e.len(), 100);
        for label in 0..5 {
            let train = e.iter().filter(|x| x.label == label && x.split == Split::Train).count();
            assert_eq!(train, 15);
        }
        assert_eq!(e, benchmark_entries(20, 1, 64, 64, 45));
    }

    #[test]
    fn manifest_defaults() {
        let m: RunManifest = serde_json::from_str(r#"{"method": "PS-M", "out": "runs/x"}"#).unwrap();
        assert_eq!(m.method, Method::PsM);
        assert_eq!(m.config, PipelineConfig::default());
        assert_eq!(m.dataset_dir(), PathBuf::from("runs/x/dataset"));
    }
}
