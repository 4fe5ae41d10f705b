use std::fmt::Write as _;

use forgery_ensemble::evaluation::EvaluationReport;

/// Plain-text rendering of a report: a header block, then one line per class.
pub fn render_report(report: &EvaluationReport) -> String {
    let m = &report.metrics;
    let mut out = String::new();
    let threshold = report.threshold.map_or_else(|| "-".to_string(), |t| t.to_string());
    writeln!(out, "dataset            {}", report.dataset).unwrap();
    writeln!(out, "design             {} ({})", report.design, report.models.join(",")).unwrap();
    writeln!(out, "task               {} at {} level", m.task, report.level).unwrap();
    writeln!(out, "threshold          {threshold}").unwrap();
    writeln!(out, "samples            {}", m.sample_count).unwrap();
    writeln!(out, "balanced accuracy  {:.4}", m.balanced_accuracy).unwrap();
    writeln!(out).unwrap();

    let width = report.class_names.iter().map(String::len).max().unwrap_or(0).max(5);
    writeln!(out, "{:<width$}  {:>8}  {:>8}", "class", "recall", "support").unwrap();
    for (i, name) in report.class_names.iter().enumerate() {
        let support: u64 = m.confusion_matrix.get(i).map_or(0, |row| row.iter().sum());
        let recall = match m.per_class_recall.get(i).copied().flatten() {
            Some(r) => format!("{r:.4}"),
            None => "-".to_string(),
        };
        let note = if m.excluded_classes.contains(&i) { "  excluded" } else { "" };
        writeln!(out, "{name:<width$}  {recall:>8}  {support:>8}{note}").unwrap();
    }
    out
}
