//! Deterministic synthetic datasets with controllable base models.
//!
//! Each sample has a true class; each simulated model decides whether it is
//! right on that sample (probability = its accuracy target), picks a wrong
//! label uniformly otherwise, and emits `softmax(sharpness * (onehot + noise))`
//! around the label it settled on. Noise stays below the one-hot margin, so
//! the argmax is always the chosen label.
//!
//! Correlation is a mixture: with probability `correlation` a model reuses the
//! sample's shared latent draws (the ones model 0 always uses) instead of its
//! own, so correlated models make the same mistakes as model 0.
//!
//! Randomness is counter-based: every `(seed, sample, slot)` triple gets its
//! own ChaCha stream position, so output does not depend on generation order
//! or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{detection_label, ClassIndex, FaceRecord, Taxonomy, MAX_MANIPULATIONS};
use crate::ensemble::ScoreKind;
use crate::score_io::{format_score, FormatErrors, LabelMode, Manifest, RosterEntry, ScoreFile, ScoreRow};

/// Upper bound on the uniform noise added to each logit before scaling.
const NOISE_SPAN: f64 = 0.5;
/// ChaCha words reserved per `(sample, slot)`.
const WORDS_PER_SLOT: u128 = 512;

pub const PRESETS: [&str; 4] = ["confident", "weak-diverse", "weak-correlated", "specialists"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("unknown preset '{0}' (expected one of: confident, weak-diverse, weak-correlated, specialists)")]
    UnknownPreset(String),
    #[error("K must be between 1 and {MAX_MANIPULATIONS}, got {0}")]
    ClassCount(usize),
    #[error("samples_per_class and faces_per_video must be at least 1")]
    EmptyDataset,
    #[error("config has no models")]
    NoModels,
    #[error("model '{model}': {reason}")]
    Model { model: String, reason: String },
    #[error("generated data failed validation:\n{0}")]
    Invalid(FormatErrors),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum ModelKind {
    Binary,
    Multiclass,
    /// Specialist scoring manipulation `target` (1-based) against everything else.
    PerManipulation { target: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: String,
    pub kind: ModelKind,
    /// Probability that the argmax equals the true label, for every class.
    pub accuracy: f64,
    /// Softmax inverse temperature; larger values give more peaked rows.
    pub sharpness: f64,
    /// Probability of reusing model 0's latent draws. Ignored for model 0.
    pub correlation: f64,
    /// For specialists: accuracy on samples outside the target class.
    /// Defaults to `accuracy`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub off_target_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub seed: u64,
    pub k: usize,
    pub samples_per_class: usize,
    #[serde(default = "default_faces_per_video")]
    pub faces_per_video: usize,
    #[serde(default = "default_label_mode")]
    pub label_mode: LabelMode,
    pub models: Vec<ModelSpec>,
}

fn default_faces_per_video() -> usize {
    4
}

fn default_label_mode() -> LabelMode {
    LabelMode::Full
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        if self.k == 0 || self.k > MAX_MANIPULATIONS {
            return Err(OracleError::ClassCount(self.k));
        }
        if self.samples_per_class == 0 || self.faces_per_video == 0 {
            return Err(OracleError::EmptyDataset);
        }
        if self.models.is_empty() {
            return Err(OracleError::NoModels);
        }
        for (i, m) in self.models.iter().enumerate() {
            let fail = |reason: String| OracleError::Model {
                model: m.id.clone(),
                reason,
            };
            let open_unit = |v: f64| v > 0.0 && v < 1.0;
            if !open_unit(m.accuracy) || !m.off_target_accuracy.is_none_or(open_unit) {
                return Err(fail("accuracy targets must lie in (0, 1)".into()));
            }
            if !(m.sharpness > 0.0 && m.sharpness.is_finite()) {
                return Err(fail("sharpness must be positive and finite".into()));
            }
            if !(0.0..=1.0).contains(&m.correlation) {
                return Err(fail("correlation must lie in [0, 1]".into()));
            }
            if let ModelKind::PerManipulation { target } = m.kind {
                if target == 0 || target > self.k {
                    return Err(fail(format!("target {target} is not a manipulation of K={}", self.k)));
                }
            }
            if self.models[..i].iter().any(|other| other.id == m.id) {
                return Err(fail("duplicate model id".into()));
            }
        }
        Ok(())
    }

    pub fn taxonomy(&self) -> Taxonomy {
        Taxonomy::numbered(format!("synthetic-k{}", self.k), self.k).expect("validated K")
    }

    pub fn dataset_name(&self) -> String {
        format!("synthetic-seed{}", self.seed)
    }

    pub fn sample_count(&self) -> usize {
        (self.k + 1) * self.samples_per_class
    }
}

fn models(
    prefix: &str,
    count: usize,
    kind: ModelKind,
    accuracy: f64,
    sharpness: f64,
    correlation: f64,
) -> impl Iterator<Item = ModelSpec> + '_ {
    (0..count).map(move |i| ModelSpec {
        id: format!("{prefix}{i}"),
        kind,
        accuracy,
        sharpness,
        correlation,
        off_target_accuracy: None,
    })
}

fn specialists(k: usize, accuracy: f64, off_target: Option<f64>, sharpness: f64) -> impl Iterator<Item = ModelSpec> {
    (1..=k).map(move |target| ModelSpec {
        id: format!("sp{target}"),
        kind: ModelKind::PerManipulation { target },
        accuracy,
        sharpness,
        correlation: 0.0,
        off_target_accuracy: off_target,
    })
}

/// Named configurations. All use K = 5, 2,000 samples per class and seed 0.
///
/// * `confident`: 6 binary, 6 multiclass and 5 specialist models, all at
///   accuracy 0.999 with sharp outputs and independent errors.
/// * `weak-diverse`: 6 multiclass models at accuracy 0.75, independent errors.
/// * `weak-correlated`: as `weak-diverse` with correlation 0.9.
/// * `specialists`: 5 specialists, accurate on their own manipulation (0.95)
///   and weaker elsewhere (0.8).
pub fn preset(name: &str) -> Result<OracleConfig, OracleError> {
    const K: usize = 5;
    let models: Vec<ModelSpec> = match name {
        "confident" => models("bin", 6, ModelKind::Binary, 0.999, 20.0, 0.0)
            .chain(models("mc", 6, ModelKind::Multiclass, 0.999, 20.0, 0.0))
            .chain(specialists(K, 0.999, None, 20.0))
            .collect(),
        "weak-diverse" => models("mc", 6, ModelKind::Multiclass, 0.75, 3.0, 0.0).collect(),
        "weak-correlated" => models("mc", 6, ModelKind::Multiclass, 0.75, 3.0, 0.9).collect(),
        "specialists" => specialists(K, 0.95, Some(0.8), 4.0).collect(),
        other => return Err(OracleError::UnknownPreset(other.to_string())),
    };
    Ok(OracleConfig {
        seed: 0,
        k: K,
        samples_per_class: 2000,
        faces_per_video: default_faces_per_video(),
        label_mode: LabelMode::Full,
        models,
    })
}

/// Uniform draws backing one model's output on one sample.
struct Latent {
    correct: f64,
    wrong: f64,
}

fn stream(key: &[u8; 32], sample: usize, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(*key);
    rng.set_stream(sample as u64);
    rng.set_word_pos(slot as u128 * WORDS_PER_SLOT);
    rng
}

fn seed_key(seed: u64) -> [u8; 32] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut key = [0u8; 32];
    rng.fill(&mut key);
    key
}

/// The label a model should emit for a sample of class `truth`, the width of
/// its rows, and the accuracy that applies.
fn model_target(spec: &ModelSpec, k: usize, truth: usize) -> (usize, usize, f64) {
    match spec.kind {
        ModelKind::Binary => (detection_label(ClassIndex::new(truth).expect("class")).index(), 2, spec.accuracy),
        ModelKind::Multiclass => (truth, k + 1, spec.accuracy),
        ModelKind::PerManipulation { target } => {
            if truth == target {
                (1, 2, spec.accuracy)
            } else {
                (0, 2, spec.off_target_accuracy.unwrap_or(spec.accuracy))
            }
        }
    }
}

fn softmax(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

fn sample_rows(cfg: &OracleConfig, key: &[u8; 32], sample: usize, truth: usize) -> Vec<Vec<f64>> {
    let mut shared_rng = stream(key, sample, 0);
    let shared = Latent {
        correct: shared_rng.random(),
        wrong: shared_rng.random(),
    };
    cfg.models
        .iter()
        .enumerate()
        .map(|(m, spec)| {
            let mut rng = stream(key, sample, m + 1);
            let copy: f64 = rng.random();
            let own = Latent {
                correct: rng.random(),
                wrong: rng.random(),
            };
            let latent = if m == 0 || copy < spec.correlation { &shared } else { &own };
            let (target, width, accuracy) = model_target(spec, cfg.k, truth);
            let label = if latent.correct < accuracy {
                target
            } else {
                // uniform over the width - 1 wrong labels
                let pick = ((latent.wrong * (width - 1) as f64) as usize).min(width - 2);
                if pick >= target { pick + 1 } else { pick }
            };
            let mut row: Vec<f64> = (0..width)
                .map(|j| {
                    let noise: f64 = rng.random::<f64>() * NOISE_SPAN;
                    spec.sharpness * (if j == label { 1.0 } else { 0.0 } + noise)
                })
                .collect();
            softmax(&mut row);
            // Round to what the score file stores so in-memory and on-disk data agree.
            for v in row.iter_mut() {
                *v = format_score(*v).parse().expect("formatted score parses");
            }
            row
        })
        .collect()
}

fn record(cfg: &OracleConfig, sample: usize, taxonomy: &Taxonomy) -> FaceRecord {
    let class = sample / cfg.samples_per_class;
    let within = sample % cfg.samples_per_class;
    let video = format!("v{class}-{:05}", within / cfg.faces_per_video);
    let y = ClassIndex::new(class).expect("class within K");
    debug_assert!(taxonomy.contains(y));
    FaceRecord {
        sample_id: format!("s{sample:07}"),
        identity_id: format!("{video}-p0"),
        video_id: video,
        frame_index: (within % cfg.faces_per_video) as u64,
        label_y: (cfg.label_mode == LabelMode::Full).then_some(y),
        label_z: Some(detection_label(y)),
    }
}

fn roster_entry(spec: &ModelSpec) -> RosterEntry {
    let (kind, target) = match spec.kind {
        ModelKind::Binary => (ScoreKind::Binary, None),
        ModelKind::Multiclass => (ScoreKind::Multiclass, None),
        ModelKind::PerManipulation { target } => (ScoreKind::PerManipulation, ClassIndex::new(target)),
    };
    RosterEntry {
        model_id: spec.id.clone(),
        kind,
        target,
    }
}

/// Generates a manifest and a score file. Samples are laid out class by
/// class, `samples_per_class` each, grouped into single-identity videos of
/// `faces_per_video` faces. Score rows are ordered by sample, then model.
pub fn generate(cfg: &OracleConfig) -> Result<(Manifest, ScoreFile), OracleError> {
    cfg.validate()?;
    let taxonomy = cfg.taxonomy();
    let key = seed_key(cfg.seed);
    let n = cfg.sample_count();

    let records: Vec<FaceRecord> = (0..n).map(|i| record(cfg, i, &taxonomy)).collect();
    let per_sample: Vec<Vec<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| sample_rows(cfg, &key, i, i / cfg.samples_per_class))
        .collect();

    let mut rows = Vec::with_capacity(n * cfg.models.len());
    for (record, sample_rows) in records.iter().zip(per_sample) {
        for (spec, values) in cfg.models.iter().zip(sample_rows) {
            rows.push(ScoreRow {
                sample_id: record.sample_id.clone(),
                model_id: spec.id.clone(),
                values,
            });
        }
    }
    let manifest = Manifest::new(cfg.dataset_name(), taxonomy.clone(), cfg.label_mode, records)
        .map_err(OracleError::Invalid)?;
    let scores = ScoreFile::new(taxonomy, cfg.models.iter().map(roster_entry).collect(), rows)
        .map_err(OracleError::Invalid)?;
    Ok((manifest, scores))
}
