//! Explicit chi-squared feature map, one-vs-all linear SVMs trained with
//! tail-averaged stochastic gradient descent, and the two fusion schemes.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::ClipFeature;
use crate::par;

#[derive(Debug, Error)]
pub enum LearningError {
    #[error("feature entry {index} is negative ({value})")]
    NegativeInput { index: usize, value: f64 },
    #[error("training needs at least two classes")]
    SingleClass,
    #[error("no training features")]
    EmptyFeatures,
    #[error("feature of dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{features} features but {labels} labels")]
    LabelCount { features: usize, labels: usize },
    #[error("fused features come from different clips: {0} vs {1}")]
    ClipMismatch(String, String),
    #[error("score vectors cover different classes")]
    ClassUniverseMismatch,
    #[error("bad model file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Homogeneous kernel map parameters: `2n + 1` components per input
/// dimension sampled at period `L` of the kernel signature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureMapParams {
    pub order_n: usize,
    pub sampling_period: f64,
}

impl Default for FeatureMapParams {
    fn default() -> Self {
        FeatureMapParams {
            order_n: 3,
            sampling_period: 0.48,
        }
    }
}

impl FeatureMapParams {
    pub fn mapped_dim(&self, d: usize) -> usize {
        (2 * self.order_n + 1) * d
    }
}

/// Spectrum of the chi-squared kernel, `sech(pi * lambda)`.
fn chi2_spectrum(lambda: f64) -> f64 {
    1.0 / (std::f64::consts::PI * lambda).cosh()
}

/// Maps a nonnegative vector so that inner products approximate the
/// additive chi-squared kernel `sum 2 x y / (x + y)`. Output layout is
/// `[dim][component]`; zero entries map to zero components.
pub fn chi2_feature_map(x: &[f64], p: &FeatureMapParams) -> Result<Vec<f64>, LearningError> {
    let c = 2 * p.order_n + 1;
    let l = p.sampling_period;
    let k0 = (l * chi2_spectrum(0.0)).sqrt();
    let kj: Vec<f64> = (1..=p.order_n).map(|j| (2.0 * l * chi2_spectrum(j as f64 * l)).sqrt()).collect();
    let mut out = vec![0.0; c * x.len()];
    for (i, &v) in x.iter().enumerate() {
        if v < 0.0 || v.is_nan() {
            return Err(LearningError::NegativeInput { index: i, value: v });
        }
        if v == 0.0 {
            continue;
        }
        let s = v.sqrt();
        let lx = v.ln();
        let o = &mut out[i * c..(i + 1) * c];
        o[0] = s * k0;
        for (j, k) in kj.iter().enumerate() {
            let arg = (j + 1) as f64 * l * lx;
            o[1 + 2 * j] = s * k * arg.cos();
            o[2 + 2 * j] = s * k * arg.sin();
        }
    }
    Ok(out)
}

/// Exact additive chi-squared kernel.
pub fn chi2_kernel(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| if a + b > 0.0 { 2.0 * a * b / (a + b) } else { 0.0 })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub epochs: usize,
    pub lambda: f64,
    /// Value of the constant feature that carries the bias.
    pub bias_multiplier: f64,
    /// Fraction of the final updates averaged into the returned weights.
    pub average_tail: f64,
    pub balance_classes: bool,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            epochs: 100,
            lambda: 1e-5,
            bias_multiplier: 1.0,
            average_tail: 0.5,
            balance_classes: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankManifest {
    /// `None` means the identity map.
    pub feature_map: Option<FeatureMapParams>,
    pub input_dim: usize,
    pub svm: SvmParams,
    pub seed: u64,
    pub features: Vec<String>,
    /// Regularised weighted hinge objective after each epoch, per class.
    pub objective_trace: Vec<Vec<f64>>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierBank {
    pub class_ids: Vec<u32>,
    /// One weight vector per class over the mapped dimension.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub manifest: BankManifest,
}

/// Per-class decision values, ordered by class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub clip_id: String,
    pub class_ids: Vec<u32>,
    pub scores: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn map_input(x: &[f64], map: Option<&FeatureMapParams>) -> Result<Vec<f64>, LearningError> {
    match map {
        Some(p) => chi2_feature_map(x, p),
        None => Ok(x.to_vec()),
    }
}

struct BinaryResult {
    w: Vec<f64>,
    b: f64,
    trace: Vec<f64>,
}

fn objective(xs: &[Vec<f64>], y: &[f64], cw: &[f64], w: &[f64], b: f64, bm: f64, lambda: f64) -> f64 {
    let hinge: f64 = xs
        .iter()
        .zip(y)
        .zip(cw)
        .map(|((x, yi), c)| c * (1.0 - yi * (dot(w, x) + b * bm)).max(0.0))
        .sum();
    0.5 * lambda * (dot(w, w) + b * b) + hinge / xs.len() as f64
}

/// Pegasos-style hinge-loss SGD with step `1 / (lambda t)`; weights are
/// kept as `scale * v` so the shrink step is O(1).
fn train_binary(xs: &[Vec<f64>], y: &[f64], p: &SvmParams, seed: u64) -> BinaryResult {
    let n = xs.len();
    let d = xs[0].len();
    let npos = y.iter().filter(|v| **v > 0.0).count();
    let nneg = n - npos;
    let pos_weight = if p.balance_classes && npos > 0 {
        nneg.max(1) as f64 / npos as f64
    } else {
        1.0
    };
    let cw: Vec<f64> = y.iter().map(|v| if *v > 0.0 { pos_weight } else { 1.0 }).collect();
    let bm = p.bias_multiplier;
    let total = (p.epochs * n) as u64;
    let tail_start = total - ((total as f64 * p.average_tail).round() as u64).clamp(1, total);
    let mut v = vec![0.0f64; d];
    let mut vb = 0.0f64;
    let mut scale = 1.0f64;
    let mut avg = vec![0.0f64; d];
    let mut avg_b = 0.0f64;
    let mut averaged = 0u64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Vec::with_capacity(p.epochs);
    let mut t = 0u64;
    for _ in 0..p.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (p.lambda * t as f64);
            let margin = y[i] * scale * (dot(&v, &xs[i]) + vb * bm);
            let shrink = 1.0 - eta * p.lambda;
            if shrink <= 0.0 {
                v.iter_mut().for_each(|x| *x = 0.0);
                vb = 0.0;
                scale = 1.0;
            } else {
                scale *= shrink;
            }
            if margin < 1.0 {
                let g = eta * cw[i] * y[i] / scale;
                for (vj, xj) in v.iter_mut().zip(&xs[i]) {
                    *vj += g * xj;
                }
                vb += g * bm;
            }
            if scale < 1e-9 {
                v.iter_mut().for_each(|x| *x *= scale);
                vb *= scale;
                scale = 1.0;
            }
            if t > tail_start {
                for (a, vj) in avg.iter_mut().zip(&v) {
                    *a += scale * vj;
                }
                avg_b += scale * vb;
                averaged += 1;
            }
        }
        let w: Vec<f64> = v.iter().map(|x| x * scale).collect();
        trace.push(objective(xs, y, &cw, &w, vb * scale, bm, p.lambda));
    }
    let inv = 1.0 / averaged.max(1) as f64;
    BinaryResult {
        w: avg.iter().map(|a| a * inv).collect(),
        b: avg_b * inv * bm,
        trace,
    }
}

fn class_seed(seed: u64, class: u32) -> u64 {
    seed ^ (class as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains one binary SVM per class present in `labels` over the mapped
/// features. `map = None` trains on the raw features.
pub fn train_one_vs_all(
    features: &[ClipFeature],
    labels: &[u32],
    map: Option<&FeatureMapParams>,
    svm: &SvmParams,
    seed: u64,
) -> Result<ClassifierBank, LearningError> {
    if features.is_empty() {
        return Err(LearningError::EmptyFeatures);
    }
    if features.len() != labels.len() {
        return Err(LearningError::LabelCount {
            features: features.len(),
            labels: labels.len(),
        });
    }
    let input_dim = features[0].dim();
    if let Some(f) = features.iter().find(|f| f.dim() != input_dim) {
        return Err(LearningError::DimensionMismatch {
            expected: input_dim,
            got: f.dim(),
        });
    }
    let mut class_ids: Vec<u32> = labels.to_vec();
    class_ids.sort_unstable();
    class_ids.dedup();
    if class_ids.len() < 2 {
        return Err(LearningError::SingleClass);
    }
    let xs = par::map(features, |f| map_input(&f.stacked, map))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let results = par::map(&class_ids, |&c| {
        let y: Vec<f64> = labels.iter().map(|l| if *l == c { 1.0 } else { -1.0 }).collect();
        train_binary(&xs, &y, svm, class_seed(seed, c))
    });
    let mut weights = Vec::with_capacity(results.len());
    let mut biases = Vec::with_capacity(results.len());
    let mut objective_trace = Vec::with_capacity(results.len());
    for r in results {
        weights.push(r.w);
        biases.push(r.b);
        objective_trace.push(r.trace);
    }
    Ok(ClassifierBank {
        class_ids,
        weights,
        biases,
        manifest: BankManifest {
            feature_map: map.copied(),
            input_dim,
            svm: *svm,
            seed,
            features: features
                .first()
                .map(|f| f.provenance.iter().map(|p| p.descriptor_type.name().to_string()).collect())
                .unwrap_or_default(),
            objective_trace,
            config_hash: String::new(),
        },
    })
}

/// Affine decision value of every class for one feature.
pub fn predict_scores(bank: &ClassifierBank, feature: &ClipFeature) -> Result<Vec<f64>, LearningError> {
    if feature.dim() != bank.manifest.input_dim {
        return Err(LearningError::DimensionMismatch {
            expected: bank.manifest.input_dim,
            got: feature.dim(),
        });
    }
    let x = map_input(&feature.stacked, bank.manifest.feature_map.as_ref())?;
    Ok(bank.weights.iter().zip(&bank.biases).map(|(w, b)| dot(w, &x) + b).collect())
}

pub fn score_vector(bank: &ClassifierBank, clip_id: &str, feature: &ClipFeature) -> Result<ScoreVector, LearningError> {
    Ok(ScoreVector {
        clip_id: clip_id.to_string(),
        class_ids: bank.class_ids.clone(),
        scores: predict_scores(bank, feature)?,
    })
}

/// Feature-level fusion: DT blocks followed by pose blocks.
pub fn fuse_features(dt_clip: &str, dt: &ClipFeature, pose_clip: &str, pose: &ClipFeature) -> Result<ClipFeature, LearningError> {
    if dt_clip != pose_clip {
        return Err(LearningError::ClipMismatch(dt_clip.into(), pose_clip.into()));
    }
    let mut stacked = dt.stacked.clone();
    stacked.extend_from_slice(&pose.stacked);
    let mut provenance = dt.provenance.clone();
    provenance.extend(pose.provenance.iter().cloned());
    Ok(ClipFeature { stacked, provenance })
}

/// Score-level fusion: the concatenated `2C` score vector that feeds the
/// second-stage classifier.
pub fn fuse_classifier_scores(dt: &ScoreVector, pose: &ScoreVector) -> Result<ClipFeature, LearningError> {
    if dt.class_ids != pose.class_ids {
        return Err(LearningError::ClassUniverseMismatch);
    }
    if dt.clip_id != pose.clip_id {
        return Err(LearningError::ClipMismatch(dt.clip_id.clone(), pose.clip_id.clone()));
    }
    let mut v = dt.scores.clone();
    v.extend_from_slice(&pose.scores);
    Ok(ClipFeature::raw(v))
}

/// Scores for the training set itself, each clip scored by a bank that did
/// not see it (`folds`-fold, deterministic round-robin split). These feed
/// the second stage of score fusion so it learns from held-out behaviour.
pub fn cross_fitted_scores(
    features: &[ClipFeature],
    labels: &[u32],
    map: Option<&FeatureMapParams>,
    svm: &SvmParams,
    seed: u64,
    folds: usize,
) -> Result<Vec<Vec<f64>>, LearningError> {
    let full = train_one_vs_all(features, labels, map, svm, seed)?;
    let mut out = vec![Vec::new(); features.len()];
    let folds = folds.clamp(2, features.len().max(2));
    for f in 0..folds {
        let (train_idx, held): (Vec<usize>, Vec<usize>) = (0..features.len()).partition(|i| i % folds != f);
        let tf: Vec<ClipFeature> = train_idx.iter().map(|&i| features[i].clone()).collect();
        let tl: Vec<u32> = train_idx.iter().map(|&i| labels[i]).collect();
        let bank = train_one_vs_all(&tf, &tl, map, svm, seed.wrapping_add(f as u64 + 1)).ok();
        for i in held {
            // a class missing from the fold gets the full bank's score
            let full_scores = predict_scores(&full, &features[i])?;
            out[i] = match &bank {
                Some(b) => {
                    let s = predict_scores(b, &features[i])?;
                    full.class_ids
                        .iter()
                        .zip(&full_scores)
                        .map(|(c, fs)| b.class_ids.iter().position(|x| x == c).map_or(*fs, |k| s[k]))
                        .collect()
                }
                None => full_scores,
            };
        }
    }
    Ok(out)
}

impl ClassifierBank {
    /// `<stem>.json` manifest and `<stem>.f32` weights (row per class,
    /// bias last).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), LearningError> {
        #[derive(Serialize)]
        struct Header<'a> {
            class_ids: &'a [u32],
            dim: usize,
            manifest: &'a BankManifest,
        }
        std::fs::create_dir_all(dir)?;
        let dim = self.weights.first().map_or(0, Vec::len);
        let h = Header {
            class_ids: &self.class_ids,
            dim,
            manifest: &self.manifest,
        };
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&h)?)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}.f32")))?);
        for (row, b) in self.weights.iter().zip(&self.biases) {
            for v in row.iter().chain(std::iter::once(b)) {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<ClassifierBank, LearningError> {
        #[derive(Deserialize)]
        struct Header {
            class_ids: Vec<u32>,
            dim: usize,
            manifest: BankManifest,
        }
        let h: Header = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let b = std::fs::read(dir.join(format!("{stem}.f32")))?;
        let row = h.dim + 1;
        if b.len() != h.class_ids.len() * row * 4 {
            return Err(LearningError::BadFile(format!("{stem}.f32 length {}", b.len())));
        }
        let vals: Vec<f64> = b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for r in vals.chunks_exact(row) {
            weights.push(r[..h.dim].to_vec());
            biases.push(r[h.dim]);
        }
        Ok(ClassifierBank {
            class_ids: h.class_ids,
            weights,
            biases,
            manifest: h.manifest,
        })
    }
}

/// `clip_id,class_id,score` rows.
pub fn write_predictions_csv(path: &Path, scores: &[ScoreVector]) -> Result<(), LearningError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "clip_id,class_id,score")?;
    for s in scores {
        for (c, v) in s.class_ids.iter().zip(&s.scores) {
            writeln!(w, "{},{},{:.9e}", s.clip_id, c, v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<ScoreVector>, LearningError> {
    let text = std::fs::read_to_string(path)?;
    let mut out: Vec<ScoreVector> = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        let bad = || LearningError::BadFile(format!("{}:{}", path.display(), n + 1));
        if parts.len() != 3 {
            return Err(bad());
        }
        let class: u32 = parts[1].parse().map_err(|_| bad())?;
        let score: f64 = parts[2].parse().map_err(|_| bad())?;
        match out.last_mut() {
            Some(s) if s.clip_id == parts[0] => {
                s.class_ids.push(class);
                s.scores.push(score);
            }
            _ => out.push(ScoreVector {
                clip_id: parts[0].to_string(),
                class_ids: vec![class],
                scores: vec![score],
            }),
        }
    }
    Ok(out)
}
