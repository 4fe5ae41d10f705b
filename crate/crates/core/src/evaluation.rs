//! End-to-end evaluation over a manifest and an indexed score store.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{aggregate_faces, AggregationError, AggregationPolicy, FaceScore, VideoVerdict};
use crate::domain::{Attribution, DetectionLabel};
use crate::ensemble::{combine, Design, Decision, EnsembleConfig, EnsembleError};
use crate::metrics::{ConfusionMatrix, MetricMode, MetricsError, MetricsReport, Task};
use crate::score_io::{Manifest, ModelSelection, ScoreStore, StoreError};

pub const REPORT_FORMAT: &str = "fe-report/1";
pub const VERDICT_FORMAT: &str = "fe-verdicts/1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(
        "sample '{sample}' has no {label} label; attribution needs a fully labelled manifest \
         (detection-only manifests support the detection task only)"
    )]
    MissingLabel { sample: String, label: &'static str },
    #[error("design {0} cannot attribute manipulations; use the detection task")]
    DesignCannotAttribute(Design),
    #[error("attribution is evaluated per face; use --level face")]
    AttributionAtVideoLevel,
    #[error("design {0} has no threshold to sweep")]
    NotThresholded(Design),
    #[error("manifest and score store describe different sample sets")]
    SampleMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    #[default]
    Face,
    Video,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Face => "face",
            Level::Video => "video",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "face" => Ok(Level::Face),
            "video" => Ok(Level::Video),
            other => Err(format!("unknown level '{other}'")),
        }
    }
}

/// One evaluation request.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationSpec {
    pub design: Design,
    pub threshold: f64,
    pub task: Task,
    pub level: Level,
    pub mode: MetricMode,
    /// Explicit model ids; `None` takes every roster model of the design's kind.
    pub models: Option<Vec<String>>,
    pub aggregation: AggregationPolicy,
}

impl EvaluationSpec {
    pub fn new(design: Design, task: Task) -> Self {
        EvaluationSpec {
            design,
            threshold: 0.5,
            task,
            level: Level::Face,
            mode: MetricMode::Strict,
            models: None,
            aggregation: AggregationPolicy::default(),
        }
    }
}

/// Serialized evaluation result, one per (dataset, design, task, level).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format: String,
    pub dataset: String,
    pub taxonomy: String,
    pub level: Level,
    pub design: Design,
    pub models: Vec<String>,
    /// `null` for the soft designs, which ignore it.
    pub threshold: Option<f64>,
    pub mode: MetricMode,
    /// Row/column labels of the confusion matrix.
    pub class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<AggregationPolicy>,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

impl EvaluationReport {
    pub fn new(
        manifest: &Manifest,
        selection: &ModelSelection,
        spec: &EvaluationSpec,
        metrics: MetricsReport,
    ) -> Self {
        let class_names = match spec.task {
            Task::Detection => vec!["real".to_string(), "fake".to_string()],
            Task::Attribution => manifest.taxonomy().class_names().to_vec(),
        };
        EvaluationReport {
            format: REPORT_FORMAT.to_string(),
            dataset: manifest.dataset_name().to_string(),
            taxonomy: manifest.taxonomy().name().to_string(),
            level: spec.level,
            design: spec.design,
            models: selection.model_ids().to_vec(),
            threshold: spec.design.uses_threshold().then_some(spec.threshold),
            mode: spec.mode,
            class_names,
            aggregation: (spec.level == Level::Video).then_some(spec.aggregation),
            metrics,
        }
    }
}

fn check_alignment(manifest: &Manifest, store: &ScoreStore) -> Result<(), EvalError> {
    if manifest.len() != store.sample_count() || manifest.taxonomy() != store.taxonomy() {
        return Err(EvalError::SampleMismatch);
    }
    Ok(())
}

/// Runs the ensemble on every face, in manifest order.
pub fn decide_all(
    manifest: &Manifest,
    store: &ScoreStore,
    selection: &ModelSelection,
    threshold: f64,
) -> Result<Vec<Decision>, EvalError> {
    check_alignment(manifest, store)?;
    let cfg = EnsembleConfig::new(selection.design(), manifest.taxonomy().k(), threshold)?;
    (0..manifest.len())
        .into_par_iter()
        .map(|i| {
            let tensor = store.assemble_at(i, selection)?;
            Ok(combine(&tensor, &cfg)?)
        })
        .collect()
}

/// Ground-truth class per face for `task`: detection label index or
/// attribution class index.
pub fn truth_labels(manifest: &Manifest, task: Task) -> Result<Vec<usize>, EvalError> {
    manifest
        .records()
        .iter()
        .map(|r| {
            let missing = |label| EvalError::MissingLabel {
                sample: r.sample_id.clone(),
                label,
            };
            match task {
                Task::Detection => r.label_z.map(DetectionLabel::index).ok_or_else(|| missing("z")),
                Task::Attribution => r.label_y.map(|y| y.get()).ok_or_else(|| missing("y")),
            }
        })
        .collect()
}

fn predicted_label(decision: &Decision, task: Task, design: Design) -> Result<usize, EvalError> {
    match task {
        Task::Detection => Ok(decision.z_hat.index()),
        Task::Attribution => match decision.y_hat {
            Attribution::Class(y) => Ok(y.get()),
            Attribution::UnattributedFake => Err(EvalError::DesignCannotAttribute(design)),
        },
    }
}

fn class_count(manifest: &Manifest, task: Task) -> usize {
    match task {
        Task::Detection => 2,
        Task::Attribution => manifest.taxonomy().class_count(),
    }
}

/// Confusion matrix over `pairs` of (truth, prediction), merged from
/// per-chunk partial matrices.
pub fn confusion_from_pairs(
    classes: usize,
    pairs: &[(usize, usize)],
) -> Result<ConfusionMatrix, MetricsError> {
    pairs
        .par_chunks(4096)
        .map(|chunk| {
            let mut cm = ConfusionMatrix::new(classes)?;
            for &(t, p) in chunk {
                cm.accumulate(t, p)?;
            }
            Ok(cm)
        })
        .try_reduce(
            || ConfusionMatrix::new(classes).expect("classes >= 2"),
            |mut a, b| {
                a.merge(&b)?;
                Ok(a)
            },
        )
}

/// Folds face decisions into video verdicts.
pub fn aggregate_decisions(
    manifest: &Manifest,
    decisions: &[Decision],
    policy: &AggregationPolicy,
) -> Result<Vec<VideoVerdict>, EvalError> {
    if decisions.len() != manifest.len() {
        return Err(EvalError::SampleMismatch);
    }
    let faces = manifest.records().iter().zip(decisions).map(|(r, d)| FaceScore {
        video_id: &r.video_id,
        identity_id: &r.identity_id,
        fake_score: d.fake_score,
    });
    Ok(aggregate_faces(faces, policy)?)
}

/// A video is fake when any of its faces is labelled fake.
pub fn video_truth(manifest: &Manifest) -> Result<BTreeMap<String, DetectionLabel>, EvalError> {
    let mut truth = BTreeMap::new();
    for r in manifest.records() {
        let z = r.label_z.ok_or_else(|| EvalError::MissingLabel {
            sample: r.sample_id.clone(),
            label: "z",
        })?;
        let entry = truth.entry(r.video_id.clone()).or_insert(DetectionLabel::Real);
        *entry = (*entry).max(z);
    }
    Ok(truth)
}

/// Detection metrics over video verdicts.
pub fn video_metrics(
    manifest: &Manifest,
    verdicts: &[VideoVerdict],
    mode: MetricMode,
) -> Result<MetricsReport, EvalError> {
    let truth = video_truth(manifest)?;
    let pairs: Vec<(usize, usize)> = verdicts
        .iter()
        .map(|v| (truth[&v.video_id].index(), v.video_z_hat.index()))
        .collect();
    let cm = confusion_from_pairs(2, &pairs)?;
    Ok(MetricsReport::compute(Task::Detection, &cm, mode)?)
}

/// Evaluates one design on one task at face or video level.
pub fn evaluate(
    manifest: &Manifest,
    store: &ScoreStore,
    spec: &EvaluationSpec,
) -> Result<EvaluationReport, EvalError> {
    if spec.task == Task::Attribution {
        if !spec.design.can_attribute() {
            return Err(EvalError::DesignCannotAttribute(spec.design));
        }
        if spec.level == Level::Video {
            return Err(EvalError::AttributionAtVideoLevel);
        }
    }
    let selection = store.select(spec.design, spec.models.as_deref())?;
    let truth = truth_labels(manifest, spec.task)?;
    let decisions = decide_all(manifest, store, &selection, spec.threshold)?;
    let metrics = match spec.level {
        Level::Face => {
            let pairs = truth
                .iter()
                .zip(&decisions)
                .map(|(&t, d)| Ok((t, predicted_label(d, spec.task, spec.design)?)))
                .collect::<Result<Vec<_>, EvalError>>()?;
            let cm = confusion_from_pairs(class_count(manifest, spec.task), &pairs)?;
            MetricsReport::compute(spec.task, &cm, spec.mode)?
        }
        Level::Video => {
            spec.aggregation.validate()?;
            let verdicts = aggregate_decisions(manifest, &decisions, &spec.aggregation)?;
            video_metrics(manifest, &verdicts, spec.mode)?
        }
    };
    Ok(EvaluationReport::new(manifest, &selection, spec, metrics))
}

/// Per-video verdicts plus, when the manifest carries detection labels, a
/// video-level detection report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictFile {
    pub format: String,
    pub dataset: String,
    pub design: Design,
    pub models: Vec<String>,
    pub threshold: Option<f64>,
    pub aggregation: AggregationPolicy,
    pub verdicts: Vec<VideoVerdict>,
    pub report: Option<MetricsReport>,
}

pub fn aggregate(
    manifest: &Manifest,
    store: &ScoreStore,
    spec: &EvaluationSpec,
) -> Result<VerdictFile, EvalError> {
    spec.aggregation.validate()?;
    let selection = store.select(spec.design, spec.models.as_deref())?;
    let decisions = decide_all(manifest, store, &selection, spec.threshold)?;
    let verdicts = aggregate_decisions(manifest, &decisions, &spec.aggregation)?;
    let labelled = manifest.records().iter().all(|r| r.label_z.is_some());
    let report = if labelled {
        Some(video_metrics(manifest, &verdicts, spec.mode)?)
    } else {
        None
    };
    Ok(VerdictFile {
        format: VERDICT_FORMAT.to_string(),
        dataset: manifest.dataset_name().to_string(),
        design: spec.design,
        models: selection.model_ids().to_vec(),
        threshold: spec.design.uses_threshold().then_some(spec.threshold),
        aggregation: spec.aggregation,
        verdicts,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score_io::{parse_manifest, parse_scores, to_json_string};

    fn fixture() -> (Manifest, ScoreStore) {
        let manifest = parse_manifest(
            "format\tfe-manifest\t1\ndataset\td\ntaxonomy\tt\treal\tA\tB\nlabels\tfull\n\
             columns\tsample_id\tvideo_id\tframe_index\tidentity_id\ty\tz\n\
             r1\tv1\t0\tp\treal\t0\nr2\tv1\t1\tp\treal\t0\n\
             a1\tv2\t0\tp\tA\t1\nb1\tv3\t0\tp\tB\t1\nb2\tv3\t1\tq\tB\t1\n"
                .as_bytes(),
        )
        .unwrap();
        let scores = parse_scores(
            "format\tfe-scores\t1\ntaxonomy\tt\treal\tA\tB\n\
             model\tm\tmulticlass\t-\t3\nmodel\tsa\tper-manipulation\tA\t2\n\
             model\tsb\tper-manipulation\tB\t2\nmodel\tbin\tbinary\t-\t2\n\
             columns\tsample_id\tmodel_id\tscores\n\
             r1\tm\t0.8\t0.1\t0.1\nr1\tsa\t0.9\t0.1\nr1\tsb\t0.7\t0.3\nr1\tbin\t0.9\t0.1\n\
             r2\tm\t0.3\t0.6\t0.1\nr2\tsa\t0.4\t0.6\nr2\tsb\t0.8\t0.2\nr2\tbin\t0.4\t0.6\n\
             a1\tm\t0.1\t0.8\t0.1\na1\tsa\t0.1\t0.9\na1\tsb\t0.6\t0.4\na1\tbin\t0.2\t0.8\n\
             b1\tm\t0.1\t0.2\t0.7\nb1\tsa\t0.5\t0.5\nb1\tsb\t0.2\t0.8\nb1\tbin\t0.3\t0.7\n\
             b2\tm\t0.2\t0.5\t0.3\nb2\tsa\t0.3\t0.7\nb2\tsb\t0.5\t0.5\nb2\tbin\t0.6\t0.4\n"
                .as_bytes(),
        )
        .unwrap();
        let store = ScoreStore::index(&scores, &manifest).unwrap();
        (manifest, store)
    }

    #[test]
    fn multiclass_attribution_report() {
        let (m, s) = fixture();
        let r = evaluate(&m, &s, &EvaluationSpec::new(Design::MulticlassSoft, Task::Attribution)).unwrap();
        // real: r1 ok, r2 -> A; A: ok; B: b1 ok, b2 -> A
        assert_eq!(r.metrics.confusion_matrix, vec![vec![1, 1, 0], vec![0, 1, 0], vec![0, 1, 1]]);
        assert_eq!(r.metrics.balanced_accuracy, 0.5 * 0.5 + 0.5 * (1.0 + 0.5) / 2.0);
        assert_eq!(r.threshold, None);
        assert_eq!(r.class_names, ["real", "A", "B"]);
    }

    #[test]
    fn one_vs_real_detection_report() {
        let (m, s) = fixture();
        let mut spec = EvaluationSpec::new(Design::OneVsReal, Task::Detection);
        spec.threshold = 0.65;
        let r = evaluate(&m, &s, &spec).unwrap();
        // pooled maxima: r1 .3, r2 .6, a1 .9, b1 .8, b2 .7
        assert_eq!(r.metrics.confusion_matrix, vec![vec![2, 0], vec![0, 3]]);
        assert_eq!(r.threshold, Some(0.65));
        assert_eq!(r.models, ["sa", "sb"]);
    }

    #[test]
    fn binary_soft_cannot_attribute() {
        let (m, s) = fixture();
        assert_eq!(
            evaluate(&m, &s, &EvaluationSpec::new(Design::BinarySoft, Task::Attribution)),
            Err(EvalError::DesignCannotAttribute(Design::BinarySoft))
        );
        let r = evaluate(&m, &s, &EvaluationSpec::new(Design::BinarySoft, Task::Detection)).unwrap();
        // fake mass: r1 .1, r2 .6, a1 .8, b1 .7, b2 .4
        assert_eq!(r.metrics.confusion_matrix, vec![vec![1, 1], vec![1, 2]]);
    }

    #[test]
    fn video_level_uses_aggregated_verdicts() {
        let (m, s) = fixture();
        let mut spec = EvaluationSpec::new(Design::OneVsReal, Task::Detection);
        spec.level = Level::Video;
        let r = evaluate(&m, &s, &spec).unwrap();
        // v1 mean(.3,.6)=.45 real; v2 .9 fake; v3 max(.8,.7) fake
        assert_eq!(r.metrics.confusion_matrix, vec![vec![1, 0], vec![0, 2]]);
        assert!(r.aggregation.is_some());

        spec.task = Task::Attribution;
        assert_eq!(evaluate(&m, &s, &spec), Err(EvalError::AttributionAtVideoLevel));
    }

    #[test]
    fn verdict_file() {
        let (m, s) = fixture();
        let v = aggregate(&m, &s, &EvaluationSpec::new(Design::OneVsReal, Task::Detection)).unwrap();
        assert_eq!(v.verdicts.len(), 3);
        assert_eq!(v.verdicts[2].per_identity_scores.len(), 2);
        assert!(v.report.is_some());
        assert_eq!(to_json_string(&v), to_json_string(&v.clone()));
    }

    #[test]
    fn report_json_round_trips() {
        let (m, s) = fixture();
        let r = evaluate(&m, &s, &EvaluationSpec::new(Design::OneVsRest, Task::Attribution)).unwrap();
        let text = to_json_string(&r);
        let back: EvaluationReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }
}
