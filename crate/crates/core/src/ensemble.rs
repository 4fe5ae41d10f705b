//! The four score-level ensemble designs.
//!
//! Soft designs average the base models' probability vectors and take the
//! argmax. Max-pooling designs take one binary specialist per manipulation,
//! pool their fake scores and compare the maximum against a threshold.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{detection_label, Attribution, ClassIndex, DetectionLabel, MAX_MANIPULATIONS};
use crate::numeric::{argmax, exact_mean};

/// Rows must sum to one within this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Shape of the rows a model emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    /// `[p(real), p(fake)]`.
    Binary,
    /// One probability per attribution class, `K + 1` wide.
    Multiclass,
    /// `[p(negative), p(target manipulation)]` from a single-manipulation specialist.
    PerManipulation,
}

impl ScoreKind {
    pub fn width(self, k: usize) -> usize {
        match self {
            ScoreKind::Binary | ScoreKind::PerManipulation => 2,
            ScoreKind::Multiclass => k + 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Binary => "binary",
            ScoreKind::Multiclass => "multiclass",
            ScoreKind::PerManipulation => "per-manipulation",
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(ScoreKind::Binary),
            "multiclass" => Ok(ScoreKind::Multiclass),
            "per-manipulation" => Ok(ScoreKind::PerManipulation),
            other => Err(format!("unknown score kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    BinarySoft,
    MulticlassSoft,
    OneVsReal,
    OneVsRest,
}

impl Design {
    pub const ALL: [Design; 4] = [
        Design::BinarySoft,
        Design::MulticlassSoft,
        Design::OneVsReal,
        Design::OneVsRest,
    ];

    /// The kind of base model this design consumes.
    pub fn score_kind(self) -> ScoreKind {
        match self {
            Design::BinarySoft => ScoreKind::Binary,
            Design::MulticlassSoft => ScoreKind::Multiclass,
            Design::OneVsReal | Design::OneVsRest => ScoreKind::PerManipulation,
        }
    }

    pub fn uses_threshold(self) -> bool {
        matches!(self, Design::OneVsReal | Design::OneVsRest)
    }

    pub fn can_attribute(self) -> bool {
        self != Design::BinarySoft
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Design::BinarySoft => "binary-soft",
            Design::MulticlassSoft => "multiclass-soft",
            Design::OneVsReal => "one-vs-real",
            Design::OneVsRest => "one-vs-rest",
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Design {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Design::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown design '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnsembleError {
    #[error("score tensor has no rows")]
    EmptyTensor,
    #[error("row {row} has width {found}, expected {expected}")]
    WidthMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row} entry {index} = {value} is outside [0, 1]")]
    EntryOutOfRange { row: usize, index: usize, value: f64 },
    #[error("row {row} sums to {sum}, not 1 within {ROW_SUM_TOLERANCE}")]
    RowSum { row: usize, sum: f64 },
    #[error("tensor has {rows} rows but {models} model ids")]
    ModelCount { rows: usize, models: usize },
    #[error("design {design} expects {expected} scores, tensor holds {found}")]
    KindMismatch {
        design: Design,
        expected: ScoreKind,
        found: ScoreKind,
    },
    #[error("per-manipulation ensemble needs one specialist per manipulation: K={k}, N={n}")]
    SpecialistCount { k: usize, n: usize },
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("K must be between 1 and {MAX_MANIPULATIONS}, got {0}")]
    ClassCount(usize),
}

/// Per-face matrix of base-model outputs, one probability row per model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTensor {
    sample_id: String,
    model_ids: Vec<String>,
    kind: ScoreKind,
    width: usize,
    values: Vec<f64>,
}

impl ScoreTensor {
    /// Builds a tensor and checks the row invariants: equal widths, entries
    /// in `[0, 1]`, sums within [`ROW_SUM_TOLERANCE`] of one.
    pub fn new(
        sample_id: impl Into<String>,
        kind: ScoreKind,
        model_ids: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self, EnsembleError> {
        if rows.is_empty() {
            return Err(EnsembleError::EmptyTensor);
        }
        if model_ids.len() != rows.len() {
            return Err(EnsembleError::ModelCount {
                rows: rows.len(),
                models: model_ids.len(),
            });
        }
        let width = rows[0].len();
        let mut values = Vec::with_capacity(width * rows.len());
        for (r, row) in rows.iter().enumerate() {
            check_row(r, row, width)?;
            values.extend_from_slice(row);
        }
        if matches!(kind, ScoreKind::Binary | ScoreKind::PerManipulation) && width != 2 {
            return Err(EnsembleError::WidthMismatch {
                row: 0,
                expected: 2,
                found: width,
            });
        }
        if width < 2 {
            return Err(EnsembleError::WidthMismatch {
                row: 0,
                expected: 2,
                found: width,
            });
        }
        Ok(ScoreTensor {
            sample_id: sample_id.into(),
            model_ids,
            kind,
            width,
            values,
        })
    }

    pub fn sample_id(&self) -> &str {
        &self.sample_id
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of models `N`.
    pub fn len(&self) -> usize {
        self.model_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.width)
    }
}

fn check_row(r: usize, row: &[f64], width: usize) -> Result<(), EnsembleError> {
    if row.len() != width {
        return Err(EnsembleError::WidthMismatch {
            row: r,
            expected: width,
            found: row.len(),
        });
    }
    for (index, &value) in row.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(EnsembleError::EntryOutOfRange { row: r, index, value });
        }
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(EnsembleError::RowSum { row: r, sum });
    }
    Ok(())
}

/// Design, class count and threshold for one ensemble evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub design: Design,
    pub k: usize,
    /// Only read by the max-pooling designs.
    pub threshold: f64,
}

impl EnsembleConfig {
    pub fn new(design: Design, k: usize, threshold: f64) -> Result<Self, EnsembleError> {
        if k == 0 || k > MAX_MANIPULATIONS {
            return Err(EnsembleError::ClassCount(k));
        }
        if !(0.0..=1.0).contains(&threshold) {
            return Err(EnsembleError::Threshold(threshold));
        }
        Ok(EnsembleConfig { design, k, threshold })
    }
}

/// Ensemble output for one face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub y_hat: Attribution,
    pub z_hat: DetectionLabel,
    /// Continuous confidence that the face is fake, consumed by aggregation.
    pub fake_score: f64,
    /// Averaged probability vector for soft designs; the specialists' fake
    /// scores `s_1..s_K` for max-pooling designs.
    pub class_scores: Vec<f64>,
}

fn require_kind(t: &ScoreTensor, design: Design) -> Result<(), EnsembleError> {
    if t.is_empty() {
        return Err(EnsembleError::EmptyTensor);
    }
    let expected = design.score_kind();
    if t.kind() != expected {
        return Err(EnsembleError::KindMismatch {
            design,
            expected,
            found: t.kind(),
        });
    }
    Ok(())
}

/// Column-wise mean of the tensor rows.
fn soft_average(t: &ScoreTensor) -> Vec<f64> {
    let mut column = Vec::with_capacity(t.len());
    (0..t.width())
        .map(|c| {
            column.clear();
            column.extend(t.rows().map(|row| row[c]));
            exact_mean(&column).unwrap_or(0.0)
        })
        .collect()
}

/// Averages binary detectors. The result cannot name a manipulation, so a
/// fake verdict is reported as [`Attribution::UnattributedFake`].
pub fn combine_binary_soft(t: &ScoreTensor) -> Result<Decision, EnsembleError> {
    require_kind(t, Design::BinarySoft)?;
    let averaged = soft_average(t);
    let z_hat = match argmax(&averaged) {
        Some(1) => DetectionLabel::Fake,
        _ => DetectionLabel::Real,
    };
    let y_hat = match z_hat {
        DetectionLabel::Real => Attribution::Class(ClassIndex::REAL),
        DetectionLabel::Fake => Attribution::UnattributedFake,
    };
    Ok(Decision {
        y_hat,
        z_hat,
        fake_score: averaged[1],
        class_scores: averaged,
    })
}

/// Averages attribution models over `K + 1` classes; detection follows from
/// the argmax class.
pub fn combine_multiclass_soft(t: &ScoreTensor, k: usize) -> Result<Decision, EnsembleError> {
    require_kind(t, Design::MulticlassSoft)?;
    if t.width() != k + 1 {
        return Err(EnsembleError::WidthMismatch {
            row: 0,
            expected: k + 1,
            found: t.width(),
        });
    }
    let averaged = soft_average(t);
    let best = argmax(&averaged).unwrap_or(0);
    let y_hat = ClassIndex::new(best).ok_or(EnsembleError::ClassCount(k))?;
    let fake_score = averaged[1..].iter().sum::<f64>().clamp(0.0, 1.0);
    Ok(Decision {
        y_hat: Attribution::Class(y_hat),
        z_hat: detection_label(y_hat),
        fake_score,
        class_scores: averaged,
    })
}

/// Result of max-pooling the specialists' fake scores. Independent of the
/// threshold, so a sweep can pool once and re-threshold many times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PooledScore {
    /// Manipulation with the largest fake score (lowest index on ties).
    pub best: ClassIndex,
    pub max_score: f64,
}

impl PooledScore {
    /// Pools `s_1..s_K`, the fake entries of a per-manipulation tensor.
    pub fn from_tensor(t: &ScoreTensor) -> Result<Self, EnsembleError> {
        if t.is_empty() {
            return Err(EnsembleError::EmptyTensor);
        }
        let scores: Vec<f64> = t.rows().map(|row| row[1]).collect();
        Self::from_scores(&scores)
    }

    pub fn from_scores(scores: &[f64]) -> Result<Self, EnsembleError> {
        let best = argmax(scores).ok_or(EnsembleError::EmptyTensor)?;
        Ok(PooledScore {
            best: ClassIndex::new(best + 1).ok_or(EnsembleError::ClassCount(scores.len()))?,
            max_score: scores[best],
        })
    }

    /// Fake only when the pooled score is strictly above `threshold`; a
    /// score equal to the threshold counts as real.
    pub fn decide(self, threshold: f64) -> ClassIndex {
        if self.max_score > threshold {
            self.best
        } else {
            ClassIndex::REAL
        }
    }
}

fn combine_max_pool(
    t: &ScoreTensor,
    cfg: &EnsembleConfig,
    design: Design,
) -> Result<Decision, EnsembleError> {
    require_kind(t, design)?;
    if t.len() != cfg.k {
        return Err(EnsembleError::SpecialistCount { k: cfg.k, n: t.len() });
    }
    let pooled = PooledScore::from_tensor(t)?;
    let y_hat = pooled.decide(cfg.threshold);
    Ok(Decision {
        y_hat: Attribution::Class(y_hat),
        z_hat: detection_label(y_hat),
        fake_score: pooled.max_score,
        class_scores: t.rows().map(|row| row[1]).collect(),
    })
}

/// Max pooling over one-manipulation-vs-real specialists.
pub fn combine_one_vs_real(t: &ScoreTensor, cfg: &EnsembleConfig) -> Result<Decision, EnsembleError> {
    combine_max_pool(t, cfg, Design::OneVsReal)
}

/// Max pooling over one-manipulation-vs-rest specialists. The rule is the
/// same as [`combine_one_vs_real`]; only the external training differs.
pub fn combine_one_vs_rest(t: &ScoreTensor, cfg: &EnsembleConfig) -> Result<Decision, EnsembleError> {
    combine_max_pool(t, cfg, Design::OneVsRest)
}

/// Dispatches on `cfg.design`.
pub fn combine(t: &ScoreTensor, cfg: &EnsembleConfig) -> Result<Decision, EnsembleError> {
    match cfg.design {
        Design::BinarySoft => combine_binary_soft(t),
        Design::MulticlassSoft => combine_multiclass_soft(t, cfg.k),
        Design::OneVsReal => combine_one_vs_real(t, cfg),
        Design::OneVsRest => combine_one_vs_rest(t, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(kind: ScoreKind, rows: Vec<Vec<f64>>) -> ScoreTensor {
        let ids = (0..rows.len()).map(|i| format!("m{i}")).collect();
        ScoreTensor::new("s", kind, ids, rows).unwrap()
    }

    fn specialists(scores: &[f64]) -> ScoreTensor {
        tensor(
            ScoreKind::PerManipulation,
            scores.iter().map(|&s| vec![1.0 - s, s]).collect(),
        )
    }

    fn class(v: usize) -> Attribution {
        Attribution::Class(ClassIndex::new(v).unwrap())
    }

    #[test]
    fn binary_soft_averages() {
        let d = combine_binary_soft(&tensor(
            ScoreKind::Binary,
            vec![vec![0.2, 0.8], vec![0.4, 0.6]],
        ))
        .unwrap();
        assert!((d.fake_score - 0.7).abs() < 1e-15);
        assert_eq!(d.z_hat, DetectionLabel::Fake);
        assert_eq!(d.y_hat, Attribution::UnattributedFake);
    }

    #[test]
    fn binary_soft_single_model_is_identity() {
        let d = combine_binary_soft(&tensor(ScoreKind::Binary, vec![vec![0.9, 0.1]])).unwrap();
        assert_eq!(d.class_scores, vec![0.9, 0.1]);
        assert_eq!(d.fake_score, 0.1);
        assert_eq!(d.z_hat, DetectionLabel::Real);
        assert_eq!(d.y_hat, class(0));
    }

    #[test]
    fn binary_soft_tie_is_real() {
        let d = combine_binary_soft(&tensor(ScoreKind::Binary, vec![vec![0.5, 0.5]])).unwrap();
        assert_eq!(d.z_hat, DetectionLabel::Real);
    }

    #[test]
    fn multiclass_soft_examples() {
        let d = combine_multiclass_soft(
            &tensor(
                ScoreKind::Multiclass,
                vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.5, 0.4]],
            ),
            2,
        )
        .unwrap();
        for (got, want) in d.class_scores.iter().zip([0.3, 0.4, 0.3]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(d.y_hat, class(1));
        assert_eq!(d.z_hat, DetectionLabel::Fake);

        let d = combine_multiclass_soft(&tensor(ScoreKind::Multiclass, vec![vec![1.0, 0.0, 0.0]]), 2)
            .unwrap();
        assert_eq!(d.y_hat, class(0));
        assert_eq!(d.z_hat, DetectionLabel::Real);
        assert_eq!(d.fake_score, 0.0);
    }

    #[test]
    fn multiclass_soft_rejects_width_mismatch() {
        let t = tensor(ScoreKind::Multiclass, vec![vec![0.5, 0.3, 0.2]]);
        assert!(matches!(
            combine_multiclass_soft(&t, 5),
            Err(EnsembleError::WidthMismatch { expected: 6, found: 3, .. })
        ));
    }

    #[test]
    fn one_vs_real_examples() {
        let cfg = EnsembleConfig::new(Design::OneVsReal, 3, 0.5).unwrap();
        let d = combine_one_vs_real(&specialists(&[0.9, 0.2, 0.1]), &cfg).unwrap();
        assert_eq!(d.y_hat, class(1));
        assert_eq!(d.z_hat, DetectionLabel::Fake);
        assert_eq!(d.fake_score, 0.9);

        let d = combine_one_vs_real(&specialists(&[0.4, 0.45, 0.3]), &cfg).unwrap();
        assert_eq!(d.y_hat, class(0));
        assert_eq!(d.z_hat, DetectionLabel::Real);
    }

    #[test]
    fn one_vs_rest_examples() {
        let cfg = EnsembleConfig::new(Design::OneVsRest, 2, 0.5).unwrap();
        assert_eq!(
            combine_one_vs_rest(&specialists(&[0.6, 0.8]), &cfg).unwrap().y_hat,
            class(2)
        );
        // equality with the threshold is not "above" it
        assert_eq!(
            combine_one_vs_rest(&specialists(&[0.5, 0.5]), &cfg).unwrap().y_hat,
            class(0)
        );
    }

    #[test]
    fn max_pool_requires_one_specialist_per_manipulation() {
        let cfg = EnsembleConfig::new(Design::OneVsReal, 5, 0.5).unwrap();
        assert_eq!(
            combine_one_vs_real(&specialists(&[0.6, 0.8]), &cfg),
            Err(EnsembleError::SpecialistCount { k: 5, n: 2 })
        );
    }

    #[test]
    fn tensor_validation() {
        let ids = vec!["a".to_string()];
        assert_eq!(
            ScoreTensor::new("s", ScoreKind::Binary, vec![], vec![]),
            Err(EnsembleError::EmptyTensor)
        );
        assert!(matches!(
            ScoreTensor::new("s", ScoreKind::Binary, ids.clone(), vec![vec![0.5, 0.6]]),
            Err(EnsembleError::RowSum { .. })
        ));
        assert!(matches!(
            ScoreTensor::new("s", ScoreKind::Binary, ids.clone(), vec![vec![1.5, -0.5]]),
            Err(EnsembleError::EntryOutOfRange { .. })
        ));
        assert!(matches!(
            ScoreTensor::new("s", ScoreKind::Binary, ids, vec![vec![0.2, 0.3, 0.5]]),
            Err(EnsembleError::WidthMismatch { .. })
        ));
    }

    #[test]
    fn design_kind_mismatch_is_an_error() {
        let t = tensor(ScoreKind::Binary, vec![vec![0.2, 0.8]]);
        assert!(matches!(
            combine_multiclass_soft(&t, 1),
            Err(EnsembleError::KindMismatch { .. })
        ));
    }

    #[test]
    fn config_rejects_bad_threshold() {
        assert_eq!(
            EnsembleConfig::new(Design::OneVsReal, 2, 1.5),
            Err(EnsembleError::Threshold(1.5))
        );
        assert_eq!(
            EnsembleConfig::new(Design::OneVsReal, 0, 0.5),
            Err(EnsembleError::ClassCount(0))
        );
    }

    #[test]
    fn design_names_round_trip() {
        for d in Design::ALL {
            assert_eq!(d.as_str().parse::<Design>(), Ok(d));
        }
    }
}
