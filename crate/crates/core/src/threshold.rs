//! Threshold grids and sweeps for the max-pooling designs.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::detection_label;
use crate::ensemble::{Design, PooledScore};
use crate::evaluation::{
    confusion_from_pairs, truth_labels, EvalError, EvaluationReport, EvaluationSpec,
};
use crate::metrics::{MetricMode, MetricsReport, Task};
use crate::score_io::{Manifest, ModelSelection, ScoreStore};

/// Grid points are rounded to nine decimals so accumulated steps land on the
/// intended values; this is also the slack for an inclusive upper bound.
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid bounds must satisfy 0 <= lo <= hi <= 1, got lo={lo} hi={hi}")]
    Bounds { lo: f64, hi: f64 },
    #[error("grid step must be positive and finite, got {0}")]
    Step(f64),
    #[error("grid is empty")]
    Empty,
    #[error("grid must be strictly increasing")]
    NotIncreasing,
    #[error("grid has {0} points; at most 100000 are allowed")]
    TooLarge(usize),
    #[error("grid '{0}' is not of the form lo:hi:step")]
    Syntax(String),
}

fn snap(x: f64) -> f64 {
    format!("{x:.9}").parse().expect("formatted float parses")
}

/// 0.05, 0.10, …, 0.95.
pub fn default_grid() -> Vec<f64> {
    (1..=19).map(|i| snap(i as f64 * 0.05)).collect()
}

/// `lo, lo+step, …` up to and including `hi`. `lo == hi` yields one point.
pub fn grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>, GridError> {
    if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(GridError::Bounds { lo, hi });
    }
    if lo == hi {
        return Ok(vec![lo]);
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(GridError::Step(step));
    }
    let n = ((hi - lo) / step + SNAP).floor() as usize;
    if n >= 100_000 {
        return Err(GridError::TooLarge(n + 1));
    }
    let mut points: Vec<f64> = (0..=n).map(|i| snap(lo + i as f64 * step)).collect();
    points.dedup();
    Ok(points)
}

/// Parses `lo:hi:step`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, GridError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, step] = parts.as_slice() else {
        return Err(GridError::Syntax(spec.to_string()));
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| GridError::Syntax(spec.to_string()));
    grid(num(lo)?, num(hi)?, num(step)?)
}

pub fn validate_grid(points: &[f64]) -> Result<(), GridError> {
    if points.is_empty() {
        return Err(GridError::Empty);
    }
    if let Some(&bad) = points.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(GridError::Bounds { lo: bad, hi: bad });
    }
    if points.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GridError::NotIncreasing);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub task: Task,
    pub balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub design: Design,
    pub task: Task,
    pub grid: Vec<f64>,
    pub points: Vec<SweepPoint>,
    /// Highest balanced accuracy; ties resolve to the smallest threshold.
    pub best: SweepPoint,
    /// Full report per grid point, identical to a direct evaluation there.
    #[serde(skip)]
    pub reports: Vec<EvaluationReport>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Pools every face once, then re-thresholds the pooled scores at each grid
/// point.
pub fn sweep(
    manifest: &Manifest,
    store: &ScoreStore,
    selection: &ModelSelection,
    grid: &[f64],
    task: Task,
    mode: MetricMode,
) -> Result<SweepResult, SweepError> {
    validate_grid(grid)?;
    let design = selection.design();
    if !design.uses_threshold() {
        return Err(EvalError::NotThresholded(design).into());
    }
    let truth = truth_labels(manifest, task)?;
    if manifest.len() != store.sample_count() || manifest.taxonomy() != store.taxonomy() {
        return Err(EvalError::SampleMismatch.into());
    }
    let k = manifest.taxonomy().k();
    let pooled: Vec<PooledScore> = (0..manifest.len())
        .into_par_iter()
        .map(|i| {
            let tensor = store.assemble_at(i, selection).map_err(EvalError::from)?;
            if tensor.len() != k {
                return Err(EvalError::from(crate::ensemble::EnsembleError::SpecialistCount {
                    k,
                    n: tensor.len(),
                }));
            }
            PooledScore::from_tensor(&tensor).map_err(EvalError::from)
        })
        .collect::<Result<_, _>>()?;
    let classes = match task {
        Task::Detection => 2,
        Task::Attribution => manifest.taxonomy().class_count(),
    };

    let reports: Vec<EvaluationReport> = grid
        .par_iter()
        .map(|&t| {
            let pairs: Vec<(usize, usize)> = truth
                .iter()
                .zip(&pooled)
                .map(|(&truth, p)| {
                    let y = p.decide(t);
                    let pred = match task {
                        Task::Detection => detection_label(y).index(),
                        Task::Attribution => y.get(),
                    };
                    (truth, pred)
                })
                .collect();
            let cm = confusion_from_pairs(classes, &pairs).map_err(EvalError::from)?;
            let metrics = MetricsReport::compute(task, &cm, mode).map_err(EvalError::from)?;
            let mut spec = EvaluationSpec::new(design, task);
            spec.threshold = t;
            spec.mode = mode;
            Ok(EvaluationReport::new(manifest, selection, &spec, metrics))
        })
        .collect::<Result<_, EvalError>>()?;

    let points: Vec<SweepPoint> = grid
        .iter()
        .zip(&reports)
        .map(|(&threshold, r)| SweepPoint {
            threshold,
            task,
            balanced_accuracy: r.metrics.balanced_accuracy,
        })
        .collect();
    let best = points
        .iter()
        .copied()
        .reduce(|best, p| if p.balanced_accuracy > best.balanced_accuracy { p } else { best })
        .expect("grid is non-empty");
    Ok(SweepResult {
        design,
        task,
        grid: grid.to_vec(),
        points,
        best,
        reports,
    })
}

/// `threshold,ba_detection,ba_attribution` with one row per grid point. The
/// column for the other task is left empty.
pub fn to_csv(result: &SweepResult) -> String {
    let mut out = String::from("threshold,ba_detection,ba_attribution\n");
    for p in &result.points {
        let ba = format!("{}", p.balanced_accuracy);
        let (det, att) = match p.task {
            Task::Detection => (ba.as_str(), ""),
            Task::Attribution => ("", ba.as_str()),
        };
        writeln!(out, "{},{det},{att}", p.threshold).expect("writing to a String");
    }
    out
}

/// Merges a detection and an attribution sweep over the same grid into one
/// table.
pub fn to_csv_pair(detection: &SweepResult, attribution: Option<&SweepResult>) -> String {
    let mut out = String::from("threshold,ba_detection,ba_attribution\n");
    for (i, p) in detection.points.iter().enumerate() {
        let att = attribution
            .and_then(|a| a.points.get(i))
            .map(|a| format!("{}", a.balanced_accuracy))
            .unwrap_or_default();
        writeln!(out, "{},{},{att}", p.threshold, p.balanced_accuracy).expect("writing to a String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_values() {
        let g = default_grid();
        assert_eq!(g.len(), 19);
        assert_eq!(g[0], 0.05);
        assert_eq!(g[9], 0.5);
        assert_eq!(g[18], 0.95);
        assert!((g[1] - g[0] - 0.05).abs() < 1e-12);
        assert_eq!(grid(0.05, 0.95, 0.05).unwrap(), g);
    }

    #[test]
    fn single_point_grid() {
        assert_eq!(grid(0.5, 0.5, 0.0).unwrap(), vec![0.5]);
        assert_eq!(grid(0.5, 0.5, 7.0).unwrap(), vec![0.5]);
        assert_eq!(parse_grid("0.5:0.5:0.1").unwrap(), vec![0.5]);
    }

    #[test]
    fn grid_errors() {
        assert!(matches!(grid(0.6, 0.5, 0.1), Err(GridError::Bounds { .. })));
        assert!(matches!(grid(-0.1, 0.5, 0.1), Err(GridError::Bounds { .. })));
        assert!(matches!(grid(0.1, 0.5, 0.0), Err(GridError::Step(_))));
        assert!(matches!(grid(0.0, 1.0, 1e-9), Err(GridError::TooLarge(_))));
        assert!(matches!(parse_grid("0.1:0.2"), Err(GridError::Syntax(_))));
        assert!(matches!(parse_grid("a:0.2:0.1"), Err(GridError::Syntax(_))));
        assert_eq!(validate_grid(&[0.2, 0.2]), Err(GridError::NotIncreasing));
        assert_eq!(validate_grid(&[]), Err(GridError::Empty));
    }

    #[test]
    fn endpoints_inclusive() {
        let g = grid(0.0, 1.0, 0.1).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[3], 0.3);
        assert_eq!(*g.last().unwrap(), 1.0);
        validate_grid(&g).unwrap();
    }
}
