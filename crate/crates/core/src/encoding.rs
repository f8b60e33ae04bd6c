//! k-means codebooks, hard-assignment bag-of-words histograms and the
//! stacked per-clip feature vector.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

pub const CODEBOOK_MAGIC: &[u8; 8] = b"TJCBOOK\0";
pub const CODEBOOK_VERSION: u32 = 1;
pub const DEFAULT_SAMPLE_CAP: usize = 100_000;
pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DT_WORDS: usize = 4000;
pub const POSE_WORDS: usize = 20;

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error("{got} samples cannot train {k} clusters")]
    TooFewSamples { got: usize, k: usize },
    #[error("descriptor of dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("histogram order mismatch: expected {expected:?}, got {got:?}")]
    OrderMismatch {
        expected: Vec<DescriptorType>,
        got: Vec<DescriptorType>,
    },
    #[error("bad codebook file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DescriptorType {
    Traj,
    Hog,
    Hof,
    Mbh,
    PoseRelative,
    PoseAngles,
    PoseTemporal,
}

impl DescriptorType {
    pub const DT: [DescriptorType; 4] = [DescriptorType::Traj, DescriptorType::Hog, DescriptorType::Hof, DescriptorType::Mbh];
    pub const POSE: [DescriptorType; 3] = [
        DescriptorType::PoseRelative,
        DescriptorType::PoseAngles,
        DescriptorType::PoseTemporal,
    ];

    pub fn tag(self) -> u32 {
        self as u32
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        DescriptorType::DT.into_iter().chain(DescriptorType::POSE).find(|d| d.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            DescriptorType::Traj => "traj",
            DescriptorType::Hog => "hog",
            DescriptorType::Hof => "hof",
            DescriptorType::Mbh => "mbh",
            DescriptorType::PoseRelative => "pose-relative",
            DescriptorType::PoseAngles => "pose-angles",
            DescriptorType::PoseTemporal => "pose-temporal",
        }
    }

    pub fn is_pose(self) -> bool {
        DescriptorType::POSE.contains(&self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// Row-major `k x d`.
    pub centroids: Vec<f64>,
    pub k: usize,
    pub d: usize,
    pub descriptor_type: DescriptorType,
    /// Final mean squared distance of the training samples to their centroid.
    pub distortion: f64,
    /// Distortion after every Lloyd iteration.
    pub trace: Vec<f64>,
    pub seed: u64,
}

impl Codebook {
    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.d..(i + 1) * self.d]
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        nearest(&self.centroids, self.d, x)
    }

    /// Header followed by row-major f32 centroids.
    pub fn write(&self, path: &Path) -> Result<(), EncodingError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(CODEBOOK_MAGIC)?;
        for v in [CODEBOOK_VERSION, self.k as u32, self.d as u32, self.descriptor_type.tag()] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.distortion.to_le_bytes())?;
        for c in &self.centroids {
            w.write_all(&(*c as f32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Codebook, EncodingError> {
        let b = std::fs::read(path)?;
        let bad = |m: &str| EncodingError::BadFile(format!("{}: {m}", path.display()));
        if b.len() < 40 || &b[..8] != CODEBOOK_MAGIC {
            return Err(bad("missing magic"));
        }
        let u = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        if u(8) != CODEBOOK_VERSION {
            return Err(bad("unsupported version"));
        }
        let (k, d) = (u(12) as usize, u(16) as usize);
        let descriptor_type = DescriptorType::from_tag(u(20)).ok_or_else(|| bad("unknown descriptor tag"))?;
        let seed = u64::from_le_bytes(b[24..32].try_into().unwrap());
        let distortion = f64::from_le_bytes(b[32..40].try_into().unwrap());
        let body = &b[40..];
        if body.len() != k * d * 4 {
            return Err(bad("centroid block has the wrong length"));
        }
        let centroids = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Codebook {
            centroids,
            k,
            d,
            descriptor_type,
            distortion,
            trace: Vec::new(),
            seed,
        })
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[f64], d: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.chunks_exact(d).enumerate() {
        let dist = sq_dist(c, x);
        if dist < best.1 {
            best = (i, dist);
        }
    }
    best
}

fn check_dims(samples: &[Vec<f64>], d: usize) -> Result<(), EncodingError> {
    match samples.iter().find(|s| s.len() != d) {
        Some(s) => Err(EncodingError::DimensionMismatch { expected: d, got: s.len() }),
        None => Ok(()),
    }
}

/// k-means++ seeding: the first centre uniformly, each further one with
/// probability proportional to its squared distance to the chosen set.
fn kmeanspp(samples: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = samples[0].len();
    let mut centroids = Vec::with_capacity(k * d);
    centroids.extend_from_slice(&samples[rng.random_range(0..samples.len())]);
    let mut dist: Vec<f64> = samples.iter().map(|s| sq_dist(s, &centroids[..d])).collect();
    for _ in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..samples.len())
        } else {
            let mut r = rng.random::<f64>() * total;
            let mut idx = samples.len() - 1;
            for (i, w) in dist.iter().enumerate() {
                if r < *w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        };
        let start = centroids.len();
        centroids.extend_from_slice(&samples[pick]);
        let c = &centroids[start..];
        for (s, dd) in samples.iter().zip(dist.iter_mut()) {
            *dd = dd.min(sq_dist(s, c));
        }
    }
    centroids
}

/// Trains a `k`-word codebook with k-means++ seeding and Lloyd iterations
/// until the assignment stops changing or `max_iters` is reached. More than
/// `DEFAULT_SAMPLE_CAP` samples are subsampled with the same seed.
pub fn train_codebook(
    samples: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
    descriptor_type: DescriptorType,
) -> Result<Codebook, EncodingError> {
    train_codebook_capped(samples, k, seed, max_iters, descriptor_type, DEFAULT_SAMPLE_CAP)
}

pub fn train_codebook_capped(
    samples: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
    descriptor_type: DescriptorType,
    sample_cap: usize,
) -> Result<Codebook, EncodingError> {
    if k == 0 || samples.len() < k {
        return Err(EncodingError::TooFewSamples { got: samples.len(), k });
    }
    let d = samples[0].len();
    check_dims(samples, d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let owned;
    let samples: &[Vec<f64>] = if samples.len() > sample_cap.max(k) {
        let mut idx = sample(&mut rng, samples.len(), sample_cap.max(k)).into_vec();
        idx.sort_unstable();
        owned = idx.into_iter().map(|i| samples[i].clone()).collect::<Vec<_>>();
        &owned
    } else {
        samples
    };
    let n = samples.len();
    let mut centroids = kmeanspp(samples, k, &mut rng);
    let mut assign: Vec<usize> = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut prev = f64::INFINITY;
    for _ in 0..max_iters.max(1) {
        let found = par::map(samples, |s| nearest(&centroids, d, s));
        let changed = found.iter().zip(&assign).any(|(f, a)| f.0 != *a);
        for (a, f) in assign.iter_mut().zip(&found) {
            *a = f.0;
        }
        // the distortion after this assignment step bounds the one before
        // the following update; record it and check monotonicity
        let dist_now = found.iter().map(|f| f.1).sum::<f64>() / n as f64;
        assert!(
            dist_now <= prev * (1.0 + 1e-12) + 1e-300,
            "k-means distortion increased from {prev} to {dist_now}"
        );
        trace.push(dist_now);
        prev = dist_now;
        if !changed && trace.len() > 1 {
            break;
        }
        update_centroids(samples, &mut assign, &found, &mut centroids, k, d);
        let after = samples
            .iter()
            .zip(&assign)
            .map(|(s, a)| sq_dist(s, &centroids[a * d..(a + 1) * d]))
            .sum::<f64>()
            / n as f64;
        assert!(after <= prev * (1.0 + 1e-12) + 1e-300, "centroid update increased distortion");
        prev = after;
    }
    let final_dist = samples.iter().map(|s| nearest(&centroids, d, s).1).sum::<f64>() / n as f64;
    Ok(Codebook {
        centroids,
        k,
        d,
        descriptor_type,
        distortion: final_dist,
        trace,
        seed,
    })
}

/// Mean update; an empty cluster takes over the sample farthest from its
/// current centroid, which is then reassigned to it.
fn update_centroids(
    samples: &[Vec<f64>],
    assign: &mut [usize],
    found: &[(usize, f64)],
    centroids: &mut [f64],
    k: usize,
    d: usize,
) {
    let mut sums = vec![0.0f64; k * d];
    let mut counts = vec![0usize; k];
    for (s, &a) in samples.iter().zip(assign.iter()) {
        counts[a] += 1;
        for (acc, v) in sums[a * d..(a + 1) * d].iter_mut().zip(s) {
            *acc += v;
        }
    }
    let mut dists: Vec<f64> = found.iter().map(|f| f.1).collect();
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let far = dists
            .iter()
            .enumerate()
            .filter(|(i, _)| counts[assign[*i]] > 1)
            .fold((usize::MAX, -1.0), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        if far.0 == usize::MAX {
            continue;
        }
        let i = far.0;
        let old = assign[i];
        counts[old] -= 1;
        for (acc, v) in sums[old * d..(old + 1) * d].iter_mut().zip(&samples[i]) {
            *acc -= v;
        }
        assign[i] = c;
        counts[c] = 1;
        sums[c * d..(c + 1) * d].copy_from_slice(&samples[i]);
        dists[i] = 0.0;
    }
    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        let inv = 1.0 / counts[c] as f64;
        for (dst, s) in centroids[c * d..(c + 1) * d].iter_mut().zip(&sums[c * d..(c + 1) * d]) {
            *dst = s * inv;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowHistogram {
    pub bins: Vec<f64>,
    pub descriptor_type: DescriptorType,
}

impl BowHistogram {
    pub fn zeros(k: usize, descriptor_type: DescriptorType) -> Self {
        BowHistogram {
            bins: vec![0.0; k],
            descriptor_type,
        }
    }
}

/// Raw assignment counts.
pub fn assignment_counts(descs: &[Vec<f64>], cb: &Codebook) -> Result<Vec<usize>, EncodingError> {
    check_dims(descs, cb.d)?;
    let mut counts = vec![0usize; cb.k];
    for i in par::map(descs, |x| cb.nearest(x).0) {
        counts[i] += 1;
    }
    Ok(counts)
}

/// L2-normalised hard-assignment histogram; empty input gives all zeros.
pub fn encode_histogram(descs: &[Vec<f64>], cb: &Codebook) -> Result<BowHistogram, EncodingError> {
    let counts = assignment_counts(descs, cb)?;
    let norm = counts.iter().map(|c| (*c as f64).powi(2)).sum::<f64>().sqrt();
    let bins = if norm == 0.0 {
        vec![0.0; cb.k]
    } else {
        counts.iter().map(|c| *c as f64 / norm).collect()
    };
    Ok(BowHistogram {
        bins,
        descriptor_type: cb.descriptor_type,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub descriptor_type: DescriptorType,
    pub codebook_id: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeature {
    pub stacked: Vec<f64>,
    pub provenance: Vec<Provenance>,
}

impl ClipFeature {
    pub fn dim(&self) -> usize {
        self.stacked.len()
    }

    pub fn order(&self) -> Vec<DescriptorType> {
        self.provenance.iter().map(|p| p.descriptor_type).collect()
    }

    /// A bare vector without descriptor provenance (e.g. stacked scores).
    pub fn raw(stacked: Vec<f64>) -> Self {
        ClipFeature {
            stacked,
            provenance: Vec::new(),
        }
    }
}

/// Concatenates the histograms in `order`; no renormalisation across blocks.
pub fn stack_features(hists: &[BowHistogram], order: &[DescriptorType]) -> Result<ClipFeature, EncodingError> {
    stack_with_ids(hists, order, &[])
}

/// As [`stack_features`], recording the codebook each block came from.
pub fn stack_with_ids(hists: &[BowHistogram], order: &[DescriptorType], ids: &[String]) -> Result<ClipFeature, EncodingError> {
    let got: Vec<DescriptorType> = hists.iter().map(|h| h.descriptor_type).collect();
    if got != order {
        return Err(EncodingError::OrderMismatch {
            expected: order.to_vec(),
            got,
        });
    }
    let mut stacked = Vec::with_capacity(hists.iter().map(|h| h.bins.len()).sum());
    let mut provenance = Vec::with_capacity(hists.len());
    for (i, h) in hists.iter().enumerate() {
        stacked.extend_from_slice(&h.bins);
        provenance.push(Provenance {
            descriptor_type: h.descriptor_type,
            codebook_id: ids.get(i).cloned().unwrap_or_default(),
            len: h.bins.len(),
        });
    }
    Ok(ClipFeature { stacked, provenance })
}

#[derive(Serialize, Deserialize)]
struct ClipFeatureManifest {
    clip_id: String,
    dim: usize,
    provenance: Vec<Provenance>,
    config_hash: String,
}

/// Writes `<stem>.json` (manifest) and `<stem>.f32` (the vector).
pub fn write_clip_feature(dir: &Path, stem: &str, clip_id: &str, f: &ClipFeature, config_hash: &str) -> Result<(), EncodingError> {
    std::fs::create_dir_all(dir)?;
    let m = ClipFeatureManifest {
        clip_id: clip_id.to_string(),
        dim: f.dim(),
        provenance: f.provenance.clone(),
        config_hash: config_hash.to_string(),
    };
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&m)?)?;
    let bytes: Vec<u8> = f.stacked.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
    std::fs::write(dir.join(format!("{stem}.f32")), bytes)?;
    Ok(())
}

/// Reads a clip feature back, returning it with its config hash.
pub fn read_clip_feature(dir: &Path, stem: &str) -> Result<(ClipFeature, String), EncodingError> {
    let m: ClipFeatureManifest = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    let b = std::fs::read(dir.join(format!("{stem}.f32")))?;
    if b.len() != m.dim * 4 {
        return Err(EncodingError::BadFile(format!("{stem}.f32 has {} bytes, expected {}", b.len(), m.dim * 4)));
    }
    let stacked = b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Ok((
        ClipFeature {
            stacked,
            provenance: m.provenance,
        },
        m.config_hash,
    ))
}
