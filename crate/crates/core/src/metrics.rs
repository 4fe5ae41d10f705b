//! Confusion matrices and balanced accuracy for detection and attribution.
//!
//! Detection weighs the real and fake recalls equally. Attribution keeps the
//! real recall at weight one half and splits the other half evenly across the
//! `K` manipulation recalls.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("confusion matrix needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("cannot merge a {left}-class matrix with a {right}-class matrix")]
    ShapeMismatch { left: usize, right: usize },
    #[error("detection metrics need a 2-class matrix, got {0} classes")]
    NotBinary(usize),
    #[error("class {0} has no ground-truth samples (use lenient mode to exclude it)")]
    EmptyClass(usize),
    #[error("no class has any ground-truth samples")]
    NoSamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Detection,
    Attribution,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Detection => "detection",
            Task::Attribution => "attribution",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "detection" => Ok(Task::Detection),
            "attribution" => Ok(Task::Attribution),
            other => Err(format!("unknown task '{other}'")),
        }
    }
}

/// How classes without ground-truth samples are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricMode {
    /// An empty class is an error.
    #[default]
    Strict,
    /// An empty class is dropped from the average and listed in the report.
    Lenient,
}

/// `counts[truth][pred]` over `classes` labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Result<Self, MetricsError> {
        if classes < 2 {
            return Err(MetricsError::TooFewClasses(classes));
        }
        Ok(ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        })
    }

    /// Builds a matrix from explicit rows; `rows[truth][pred]`.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self, MetricsError> {
        let mut cm = Self::new(rows.len())?;
        for (t, row) in rows.iter().enumerate() {
            if row.len() != rows.len() {
                return Err(MetricsError::ShapeMismatch {
                    left: rows.len(),
                    right: row.len(),
                });
            }
            cm.counts[t * cm.classes..(t + 1) * cm.classes].copy_from_slice(row);
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn accumulate(&mut self, truth: usize, pred: usize) -> Result<(), MetricsError> {
        for label in [truth, pred] {
            if label >= self.classes {
                return Err(MetricsError::LabelOutOfRange {
                    label,
                    classes: self.classes,
                });
            }
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    /// Adds `other` cell by cell. Merging partial matrices gives the same
    /// result as accumulating the concatenated stream.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if other.classes != self.classes {
            return Err(MetricsError::ShapeMismatch {
                left: self.classes,
                right: other.classes,
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    /// Number of samples whose ground truth is `truth`.
    pub fn support(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes]
            .iter()
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `None` when the class has no ground-truth samples.
    pub fn recall(&self, class: usize) -> Option<f64> {
        let support = self.support(class);
        (support > 0).then(|| self.count(class, class) as f64 / support as f64)
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes).map(<[u64]>::to_vec).collect()
    }

    /// Folds every manipulation class into a single fake class.
    pub fn collapse_to_detection(&self) -> ConfusionMatrix {
        let mut out = ConfusionMatrix {
            classes: 2,
            counts: vec![0; 4],
        };
        for t in 0..self.classes {
            for p in 0..self.classes {
                out.counts[(t.min(1)) * 2 + p.min(1)] += self.count(t, p);
            }
        }
        out
    }
}

/// Balanced accuracy plus the classes that were dropped in lenient mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedAccuracy {
    pub value: f64,
    pub excluded_classes: Vec<usize>,
}

fn recall_or_exclude(
    cm: &ConfusionMatrix,
    class: usize,
    mode: MetricMode,
    excluded: &mut Vec<usize>,
) -> Result<Option<f64>, MetricsError> {
    match (cm.recall(class), mode) {
        (Some(r), _) => Ok(Some(r)),
        (None, MetricMode::Strict) => Err(MetricsError::EmptyClass(class)),
        (None, MetricMode::Lenient) => {
            excluded.push(class);
            Ok(None)
        }
    }
}

/// Balanced accuracy over `K + 1` classes: half weight on real, half spread
/// evenly over the manipulations. With two classes this is detection
/// balanced accuracy.
fn balanced(cm: &ConfusionMatrix, mode: MetricMode) -> Result<BalancedAccuracy, MetricsError> {
    let mut excluded = Vec::new();
    let real = recall_or_exclude(cm, 0, mode, &mut excluded)?;
    let mut fake_sum = 0.0;
    let mut fake_count = 0usize;
    for class in 1..cm.classes() {
        if let Some(r) = recall_or_exclude(cm, class, mode, &mut excluded)? {
            fake_sum += r;
            fake_count += 1;
        }
    }
    let fake = (fake_count > 0).then(|| fake_sum / fake_count as f64);
    let value = match (real, fake) {
        (Some(r), Some(f)) => 0.5 * r + 0.5 * f,
        (Some(r), None) => r,
        (None, Some(f)) => f,
        (None, None) => return Err(MetricsError::NoSamples),
    };
    Ok(BalancedAccuracy {
        value,
        excluded_classes: excluded,
    })
}

pub fn ba_detection_with(
    cm: &ConfusionMatrix,
    mode: MetricMode,
) -> Result<BalancedAccuracy, MetricsError> {
    if cm.classes() != 2 {
        return Err(MetricsError::NotBinary(cm.classes()));
    }
    balanced(cm, mode)
}

pub fn ba_attribution_with(
    cm: &ConfusionMatrix,
    mode: MetricMode,
) -> Result<BalancedAccuracy, MetricsError> {
    balanced(cm, mode)
}

/// Detection balanced accuracy, strict mode.
pub fn ba_detection(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    ba_detection_with(cm, MetricMode::Strict).map(|b| b.value)
}

/// Attribution balanced accuracy, strict mode.
pub fn ba_attribution(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    ba_attribution_with(cm, MetricMode::Strict).map(|b| b.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub balanced_accuracy: f64,
    /// `null` for classes without ground-truth samples.
    pub per_class_recall: Vec<Option<f64>>,
    pub sample_count: u64,
    pub excluded_classes: Vec<usize>,
    pub confusion_matrix: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn compute(task: Task, cm: &ConfusionMatrix, mode: MetricMode) -> Result<Self, MetricsError> {
        let ba = match task {
            Task::Detection => ba_detection_with(cm, mode)?,
            Task::Attribution => ba_attribution_with(cm, mode)?,
        };
        Ok(MetricsReport {
            task,
            balanced_accuracy: ba.value,
            per_class_recall: (0..cm.classes()).map(|c| cm.recall(c)).collect(),
            sample_count: cm.total(),
            excluded_classes: ba.excluded_classes,
            confusion_matrix: cm.rows(),
        })
    }
}
