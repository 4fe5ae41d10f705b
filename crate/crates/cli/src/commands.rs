use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use forgery_ensemble::domain::detection_label;
use forgery_ensemble::ensemble::{EnsembleError, ScoreKind};
use forgery_ensemble::evaluation::{aggregate, evaluate, EvalError, EvaluationSpec};
use forgery_ensemble::metrics::Task;
use forgery_ensemble::numeric::argmax;
use forgery_ensemble::oracle::{self, OracleConfig, OracleError};
use forgery_ensemble::score_io::{
    read_json, read_manifest, read_score_file, read_scores, to_json_string, LabelMode, Manifest,
    ReadError, ScoreFile, ScoreStore,
};
use forgery_ensemble::threshold::{default_grid, parse_grid, sweep, to_csv, to_csv_pair, SweepError};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{
    table, AggregateArgs, CliError, Command, EvaluateArgs, Output, SimulateArgs, SweepArgs, SweepFormat,
    ValidateArgs, EXIT_VALIDATION,
};

pub const VALIDATION_FORMAT: &str = "fe-validation/1";

pub fn run_command(command: &Command) -> Result<Output, CliError> {
    match command {
        Command::Validate(args) => validate(args),
        Command::Evaluate(args) => evaluate_cmd(args),
        Command::Sweep(args) => sweep_cmd(args),
        Command::Aggregate(args) => aggregate_cmd(args),
        Command::Simulate(args) => simulate(args),
    }
}

fn read_error(e: ReadError) -> CliError {
    match e {
        ReadError::Io { .. } => CliError::Io(e.to_string()),
        ReadError::Format { .. } | ReadError::Json { .. } => CliError::Validation(e.to_string()),
        ReadError::Store { .. } => CliError::Mismatch(e.to_string()),
    }
}

fn eval_error(e: EvalError) -> CliError {
    match e {
        EvalError::DesignCannotAttribute(_)
        | EvalError::AttributionAtVideoLevel
        | EvalError::NotThresholded(_)
        | EvalError::Aggregation(_)
        | EvalError::Ensemble(EnsembleError::Threshold(_)) => CliError::Usage(e.to_string()),
        _ => CliError::Mismatch(e.to_string()),
    }
}

fn write_output(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Writes `body` to `out` when given, otherwise returns it for stdout.
fn emit(body: String, out: Option<&Path>) -> Result<Output, CliError> {
    match out {
        Some(path) => {
            write_output(path, &body)?;
            Ok(Output::ok(String::new()))
        }
        None => Ok(Output::ok(body)),
    }
}

fn load(manifest: &Path, scores: &Path) -> Result<(Manifest, ScoreStore), CliError> {
    let manifest = read_manifest(manifest).map_err(read_error)?;
    let store = read_scores(scores, &manifest).map_err(read_error)?;
    Ok((manifest, store))
}

#[derive(Debug, Serialize)]
struct Violation {
    file: &'static str,
    /// `None` for problems that span both files.
    line: Option<usize>,
    message: String,
}

#[derive(Debug, Serialize)]
struct ValidationReport {
    format: &'static str,
    checked: Vec<&'static str>,
    valid: bool,
    violations: Vec<Violation>,
}

fn collect_read_error(file: &'static str, e: ReadError, violations: &mut Vec<Violation>) -> Result<(), CliError> {
    match e {
        ReadError::Format { errors, .. } => {
            violations.extend(errors.0.into_iter().map(|err| Violation {
                file,
                line: Some(err.line),
                message: err.issue.to_string(),
            }));
            Ok(())
        }
        ReadError::Io { .. } => Err(CliError::Io(e.to_string())),
        other => {
            violations.push(Violation {
                file,
                line: None,
                message: other.to_string(),
            });
            Ok(())
        }
    }
}

fn validate(args: &ValidateArgs) -> Result<Output, CliError> {
    let mut violations = Vec::new();
    let mut checked = vec!["manifest"];
    let manifest = match read_manifest(&args.manifest) {
        Ok(m) => Some(m),
        Err(e) => {
            collect_read_error("manifest", e, &mut violations)?;
            None
        }
    };
    if let Some(path) = &args.scores {
        checked.push("scores");
        let file = match read_score_file(path) {
            Ok(f) => Some(f),
            Err(e) => {
                collect_read_error("scores", e, &mut violations)?;
                None
            }
        };
        if let (Some(manifest), Some(file)) = (&manifest, &file) {
            match ScoreStore::index(file, manifest) {
                Ok(store) => violations.extend(store.coverage_gaps().into_iter().map(|(sample, model)| {
                    Violation {
                        file: "scores",
                        line: None,
                        message: format!("missing score for sample '{sample}' from model '{model}'"),
                    }
                })),
                Err(e) => violations.push(Violation {
                    file: "scores",
                    line: None,
                    message: e.to_string(),
                }),
            }
        }
    }

    let valid = violations.is_empty();
    let report = ValidationReport {
        format: VALIDATION_FORMAT,
        checked,
        valid,
        violations,
    };
    Ok(Output {
        stdout: to_json_string(&report),
        exit_code: if valid { 0 } else { EXIT_VALIDATION },
    })
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<Output, CliError> {
    let (manifest, store) = load(&args.inputs.manifest, &args.inputs.scores)?;
    let mut spec = EvaluationSpec::new(args.design, args.task);
    spec.threshold = args.threshold;
    spec.level = args.level;
    spec.mode = args.mode.mode();
    spec.models = args.models.clone();
    spec.aggregation = args.aggregation.policy();
    let report = evaluate(&manifest, &store, &spec).map_err(eval_error)?;
    let body = to_json_string(&report);
    if args.table {
        if let Some(path) = &args.out {
            write_output(path, &body)?;
        }
        return Ok(Output::ok(table::render_report(&report)));
    }
    emit(body, args.out.as_deref())
}

fn sweep_error(e: SweepError) -> CliError {
    match e {
        SweepError::Grid(g) => CliError::Usage(g.to_string()),
        SweepError::Eval(e) => eval_error(e),
    }
}

fn sweep_cmd(args: &SweepArgs) -> Result<Output, CliError> {
    let grid = match &args.grid {
        Some(spec) => parse_grid(spec).map_err(|e| CliError::Usage(e.to_string()))?,
        None => default_grid(),
    };
    if !args.design.uses_threshold() {
        return Err(eval_error(EvalError::NotThresholded(args.design)));
    }
    let (manifest, store) = load(&args.inputs.manifest, &args.inputs.scores)?;
    let selection = store
        .select(args.design, args.models.as_deref())
        .map_err(|e| eval_error(e.into()))?;
    let tasks = match args.task {
        Some(task) => vec![task],
        None if manifest.label_mode() == LabelMode::Full => vec![Task::Detection, Task::Attribution],
        None => vec![Task::Detection],
    };
    let results = tasks
        .iter()
        .map(|&task| sweep(&manifest, &store, &selection, &grid, task, args.mode.mode()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(sweep_error)?;
    let body = match args.format {
        SweepFormat::Json => to_json_string(&results),
        SweepFormat::Csv => match results.as_slice() {
            [single] => to_csv(single),
            [det, att] => to_csv_pair(det, Some(att)),
            _ => unreachable!("one or two tasks"),
        },
    };
    emit(body, args.out.as_deref())
}

fn aggregate_cmd(args: &AggregateArgs) -> Result<Output, CliError> {
    let (manifest, store) = load(&args.inputs.manifest, &args.inputs.scores)?;
    let mut spec = EvaluationSpec::new(args.design, Task::Detection);
    spec.threshold = args.threshold;
    spec.mode = args.mode.mode();
    spec.models = args.models.clone();
    spec.aggregation = args.aggregation.policy();
    let verdicts = aggregate(&manifest, &store, &spec).map_err(eval_error)?;
    emit(to_json_string(&verdicts), args.out.as_deref())
}

fn oracle_error(e: OracleError) -> CliError {
    match e {
        OracleError::UnknownPreset(_) => CliError::Usage(e.to_string()),
        _ => CliError::Validation(e.to_string()),
    }
}

fn simulate(args: &SimulateArgs) -> Result<Output, CliError> {
    let mut cfg: OracleConfig = match (&args.preset, &args.config) {
        (Some(name), None) => oracle::preset(name).map_err(oracle_error)?,
        (None, Some(path)) => read_json(path).map_err(read_error)?,
        _ => return Err(CliError::Usage("pass exactly one of --preset and --config".into())),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let (manifest, scores) = oracle::generate(&cfg).map_err(oracle_error)?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    let manifest_text = manifest.to_canonical_string();
    let scores_text = scores.to_canonical_string();
    write_output(&args.out.join("manifest.tsv"), &manifest_text)?;
    write_output(&args.out.join("scores.tsv"), &scores_text)?;

    let mut out = String::new();
    let videos: BTreeSet<&str> = manifest.records().iter().map(|r| r.video_id.as_str()).collect();
    writeln!(out, "dataset\t{}", manifest.dataset_name()).unwrap();
    writeln!(out, "samples\t{}", manifest.len()).unwrap();
    writeln!(out, "videos\t{}", videos.len()).unwrap();
    writeln!(out, "models\t{}", scores.roster().len()).unwrap();
    writeln!(out, "manifest.tsv\tsha256:{}", hex::encode(Sha256::digest(&manifest_text))).unwrap();
    writeln!(out, "scores.tsv\tsha256:{}", hex::encode(Sha256::digest(&scores_text))).unwrap();
    for (model, kind, accuracy) in model_accuracy(&manifest, &scores) {
        let accuracy = accuracy.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
        writeln!(out, "model\t{model}\t{kind}\ttop1\t{accuracy}").unwrap();
    }
    Ok(Output::ok(out))
}

/// Fraction of rows whose argmax matches the label the model is trained on;
/// `None` when the manifest lacks the needed labels.
fn model_accuracy(manifest: &Manifest, scores: &ScoreFile) -> Vec<(String, ScoreKind, Option<f64>)> {
    scores
        .roster()
        .iter()
        .map(|entry| {
            let mut hits = 0usize;
            let mut total = 0usize;
            let mut labelled = true;
            for row in scores.rows().iter().filter(|r| r.model_id == entry.model_id) {
                let Some(record) = manifest.position(&row.sample_id).map(|i| &manifest.records()[i]) else {
                    continue;
                };
                let expected = match (entry.kind, record.label_y) {
                    (ScoreKind::Binary, _) => record
                        .label_z
                        .or(record.label_y.map(detection_label))
                        .map(|z| z.index()),
                    (ScoreKind::Multiclass, Some(y)) => Some(y.get()),
                    (ScoreKind::PerManipulation, Some(y)) => Some(usize::from(Some(y) == entry.target)),
                    _ => None,
                };
                let Some(expected) = expected else {
                    labelled = false;
                    break;
                };
                total += 1;
                hits += usize::from(argmax(&row.values) == Some(expected));
            }
            let accuracy = (labelled && total > 0).then(|| hits as f64 / total as f64);
            (entry.model_id.clone(), entry.kind, accuracy)
        })
        .collect()
}
