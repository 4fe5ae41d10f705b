use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{
    check_format_line, expect_key, format_score, next_header, numbered_lines, parse_taxonomy_line,
    taxonomy_line, valid_identifier, FormatErrors, Issue, LineError, ReadError, MISSING,
    SCORES_FORMAT,
};
use crate::domain::{ClassIndex, Taxonomy};
use crate::ensemble::{ScoreKind, ROW_SUM_TOLERANCE};

/// One model in a score file header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RosterEntry {
    pub model_id: String,
    pub kind: ScoreKind,
    /// Manipulation a per-manipulation specialist scores; `None` otherwise.
    pub target: Option<ClassIndex>,
}

impl RosterEntry {
    pub fn width(&self, taxonomy: &Taxonomy) -> usize {
        self.kind.width(taxonomy.k())
    }
}

/// One probability vector as it appears in the file (not renormalized).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub sample_id: String,
    pub model_id: String,
    pub values: Vec<f64>,
}

/// Parsed score file: header plus rows in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFile {
    taxonomy: Taxonomy,
    roster: Vec<RosterEntry>,
    rows: Vec<ScoreRow>,
}

/// Header lines before the first row for a roster of `models` entries.
fn header_lines(models: usize) -> usize {
    3 + models
}

impl ScoreFile {
    /// Validates roster and rows. Errors carry the line each item would
    /// occupy in the canonical file.
    pub fn new(
        taxonomy: Taxonomy,
        roster: Vec<RosterEntry>,
        rows: Vec<ScoreRow>,
    ) -> Result<Self, FormatErrors> {
        let mut errors = Vec::new();
        let mut models = HashMap::new();
        for (i, entry) in roster.iter().enumerate() {
            let line = 3 + i;
            if let Err(issue) = check_roster_entry(entry, &taxonomy) {
                errors.push(LineError::new(line, issue));
            }
            if models.insert(entry.model_id.clone(), i).is_some() {
                errors.push(LineError::new(line, Issue::DuplicateModel(entry.model_id.clone())));
            }
        }
        if !errors.is_empty() {
            return Err(FormatErrors(errors));
        }
        let first = header_lines(roster.len()) + 1;
        let mut seen = HashSet::new();
        for (i, row) in rows.iter().enumerate() {
            for issue in check_row(row, &roster, &models, &taxonomy, &mut seen) {
                errors.push(LineError::new(first + i, issue));
            }
        }
        if !errors.is_empty() {
            return Err(FormatErrors(errors));
        }
        Ok(ScoreFile { taxonomy, roster, rows })
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn roster(&self) -> &[RosterEntry] {
        &self.roster
    }

    pub fn rows(&self) -> &[ScoreRow] {
        &self.rows
    }

    pub fn to_canonical_string(&self) -> String {
        let mut buf = Vec::new();
        write_scores(self, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("score text is UTF-8")
    }
}

fn check_roster_entry(entry: &RosterEntry, taxonomy: &Taxonomy) -> Result<(), Issue> {
    if !valid_identifier(&entry.model_id) {
        return Err(Issue::BadIdentifier { field: "model_id" });
    }
    let reason = match (entry.kind, entry.target) {
        (ScoreKind::PerManipulation, None) => Some("a target manipulation is required".to_string()),
        (ScoreKind::PerManipulation, Some(t)) if t.is_real() || !taxonomy.contains(t) => {
            Some(format!("target class {t} is not a manipulation"))
        }
        (ScoreKind::Binary | ScoreKind::Multiclass, Some(_)) => {
            Some("only per-manipulation models take a target".to_string())
        }
        _ => None,
    };
    match reason {
        Some(reason) => Err(Issue::RosterEntry {
            model: entry.model_id.clone(),
            kind: entry.kind.to_string(),
            reason,
        }),
        None => Ok(()),
    }
}

fn check_row(
    row: &ScoreRow,
    roster: &[RosterEntry],
    models: &HashMap<String, usize>,
    taxonomy: &Taxonomy,
    seen: &mut HashSet<(String, String)>,
) -> Vec<Issue> {
    let mut issues = Vec::new();
    if !valid_identifier(&row.sample_id) {
        issues.push(Issue::BadIdentifier { field: "sample_id" });
    }
    let Some(&m) = models.get(&row.model_id) else {
        issues.push(Issue::UnknownModel(row.model_id.clone()));
        return issues;
    };
    let expected = roster[m].width(taxonomy);
    if row.values.len() != expected {
        issues.push(Issue::Width {
            expected,
            found: row.values.len(),
        });
        return issues;
    }
    let mut in_range = true;
    for (index, &value) in row.values.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            issues.push(Issue::ScoreRange { index, value });
            in_range = false;
        }
    }
    if in_range {
        let sum: f64 = row.values.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            issues.push(Issue::ScoreSum { sum });
        }
    }
    if !seen.insert((row.sample_id.clone(), row.model_id.clone())) {
        issues.push(Issue::DuplicateScore {
            sample: row.sample_id.clone(),
            model: row.model_id.clone(),
        });
    }
    issues
}

fn parse_roster_line(fields: &[&str], taxonomy: &Taxonomy) -> Result<RosterEntry, Issue> {
    let [model_id, kind, target, width] = fields else {
        return Err(Issue::FieldCount {
            expected: 5,
            found: fields.len() + 1,
        });
    };
    let kind: ScoreKind = kind.parse().map_err(|_| Issue::InvalidValue {
        field: "kind",
        value: kind.to_string(),
    })?;
    let target = match *target {
        MISSING => None,
        name => Some(
            taxonomy
                .index_of(name)
                .ok_or_else(|| Issue::UnknownClass(name.to_string()))?,
        ),
    };
    let entry = RosterEntry {
        model_id: model_id.to_string(),
        kind,
        target,
    };
    check_roster_entry(&entry, taxonomy)?;
    let declared: usize = width.parse().map_err(|_| Issue::InvalidValue {
        field: "width",
        value: width.to_string(),
    })?;
    let expected = entry.width(taxonomy);
    if declared != expected {
        return Err(Issue::Width {
            expected,
            found: declared,
        });
    }
    Ok(entry)
}

pub fn parse_scores<R: BufRead>(reader: R) -> Result<ScoreFile, FormatErrors> {
    let mut lines = numbered_lines(reader).peekable();
    let mut last = 0;

    let (n, text) = next_header(&mut lines, "format", &mut last)?;
    check_format_line(n, &text, SCORES_FORMAT)?;
    let (n, text) = next_header(&mut lines, "taxonomy", &mut last)?;
    let taxonomy = parse_taxonomy_line(n, &text)?;

    let mut errors = Vec::new();
    let mut roster = Vec::new();
    let mut models = HashMap::new();
    loop {
        let (n, text) = next_header(&mut lines, "columns", &mut last)?;
        if text.starts_with("model\t") {
            let fields = expect_key(n, &text, "model")?;
            match parse_roster_line(&fields, &taxonomy) {
                Ok(entry) => {
                    if models.insert(entry.model_id.clone(), roster.len()).is_some() {
                        errors.push(LineError::new(n, Issue::DuplicateModel(entry.model_id)));
                    } else {
                        roster.push(entry);
                    }
                }
                Err(issue) => errors.push(LineError::new(n, issue)),
            }
            continue;
        }
        let fields = expect_key(n, &text, "columns")?;
        if fields != ["sample_id", "model_id", "scores"] {
            return Err(FormatErrors::single(
                n,
                Issue::BadHeader {
                    expected: "columns\tsample_id\tmodel_id\tscores".to_string(),
                    found: text,
                },
            ));
        }
        break;
    }
    if !errors.is_empty() {
        // Rows cannot be checked against a broken roster.
        return Err(FormatErrors(errors));
    }
    if roster.is_empty() {
        return Err(FormatErrors::single(last, Issue::MissingHeader("model")));
    }

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in lines {
        let text = match line {
            Ok(t) => t,
            Err(e) => {
                errors.push(LineError::new(
                    n,
                    Issue::InvalidValue { field: "line", value: e.to_string() },
                ));
                break;
            }
        };
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() < 3 {
            errors.push(LineError::new(
                n,
                Issue::FieldCount {
                    expected: 3,
                    found: fields.len(),
                },
            ));
            continue;
        }
        let mut values = Vec::with_capacity(fields.len() - 2);
        let mut bad = false;
        for raw in &fields[2..] {
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    errors.push(LineError::new(
                        n,
                        Issue::InvalidValue {
                            field: "score",
                            value: raw.to_string(),
                        },
                    ));
                    bad = true;
                }
            }
        }
        if bad {
            continue;
        }
        let row = ScoreRow {
            sample_id: fields[0].to_string(),
            model_id: fields[1].to_string(),
            values,
        };
        let issues = check_row(&row, &roster, &models, &taxonomy, &mut seen);
        if issues.is_empty() {
            rows.push(row);
        } else {
            errors.extend(issues.into_iter().map(|i| LineError::new(n, i)));
        }
    }
    if !errors.is_empty() {
        return Err(FormatErrors(errors));
    }
    Ok(ScoreFile { taxonomy, roster, rows })
}

pub fn write_scores<W: Write>(file: &ScoreFile, mut w: W) -> std::io::Result<()> {
    writeln!(w, "format\t{SCORES_FORMAT}\t{}", super::FORMAT_VERSION)?;
    writeln!(w, "{}", taxonomy_line(&file.taxonomy))?;
    for entry in &file.roster {
        let target = entry
            .target
            .and_then(|t| file.taxonomy.class_name(t))
            .unwrap_or(MISSING);
        writeln!(
            w,
            "model\t{}\t{}\t{}\t{}",
            entry.model_id,
            entry.kind,
            target,
            entry.width(&file.taxonomy)
        )?;
    }
    writeln!(w, "columns\tsample_id\tmodel_id\tscores")?;
    let mut line = String::new();
    for row in &file.rows {
        line.clear();
        line.push_str(&row.sample_id);
        line.push('\t');
        line.push_str(&row.model_id);
        for &v in &row.values {
            line.push('\t');
            line.push_str(&format_score(v));
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()
}

/// Parses a score file without checking it against a manifest.
pub fn read_score_file(path: impl AsRef<Path>) -> Result<ScoreFile, ReadError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| ReadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scores(BufReader::new(file)).map_err(|errors| ReadError::Format {
        path: path.to_path_buf(),
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "format\tfe-scores\t1\n\
        taxonomy\tt\treal\tDeepfakes\tFace2Face\n\
        model\tb0\tbinary\t-\t2\n\
        model\tm0\tmulticlass\t-\t3\n\
        model\tdf\tper-manipulation\tDeepfakes\t2\n\
        columns\tsample_id\tmodel_id\tscores\n";

    fn parse(body: &str) -> Result<ScoreFile, FormatErrors> {
        parse_scores(format!("{HEADER}{body}").as_bytes())
    }

    #[test]
    fn accepts_valid_rows() {
        let f = parse("s1\tb0\t0.3\t0.7\ns1\tm0\t0.2\t0.3\t0.5\ns1\tdf\t1\t0\n").unwrap();
        assert_eq!(f.rows().len(), 3);
        assert_eq!(f.roster()[2].target, ClassIndex::new(1));
        assert_eq!(f.to_canonical_string(), format!("{HEADER}s1\tb0\t0.3\t0.7\ns1\tm0\t0.2\t0.3\t0.5\ns1\tdf\t1\t0\n"));
    }

    #[test]
    fn rejects_bad_sum() {
        let err = parse("s1\tb0\t0.5\t0.6\n").unwrap_err();
        assert_eq!(err.0[0].line, 7);
        assert!(matches!(err.0[0].issue, Issue::ScoreSum { sum } if (sum - 1.1).abs() < 1e-12));
    }

    #[test]
    fn tolerates_small_sum_error() {
        let f = parse("s1\tb0\t0.5000004\t0.5000001\n").unwrap();
        assert_eq!(f.rows()[0].values, vec![0.5000004, 0.5000001]);
    }

    #[test]
    fn row_errors() {
        let err = parse(
            "s1\tb0\t0.5\t0.5\ns1\tb0\t0.5\t0.5\ns1\tzz\t1\t0\ns1\tm0\t1\t0\ns3\tb0\t1.5\t-0.5\ns2\tb0\tx\t1\n",
        )
        .unwrap_err();
        let issues: Vec<_> = err.0.iter().map(|e| (e.line, e.issue.clone())).collect();
        assert!(matches!(issues[0], (8, Issue::DuplicateScore { .. })));
        assert_eq!(issues[1], (9, Issue::UnknownModel("zz".into())));
        assert_eq!(issues[2], (10, Issue::Width { expected: 3, found: 2 }));
        assert!(matches!(issues[3], (11, Issue::ScoreRange { index: 0, .. })));
        assert!(matches!(issues[4], (11, Issue::ScoreRange { index: 1, .. })));
        assert!(matches!(issues[5], (12, Issue::InvalidValue { field: "score", .. })));
    }

    #[test]
    fn roster_errors() {
        let text = HEADER.replace("per-manipulation\tDeepfakes", "per-manipulation\treal");
        let err = parse_scores(text.as_bytes()).unwrap_err();
        assert_eq!(err.0[0].line, 5);
        let text = HEADER.replace("multiclass\t-\t3", "multiclass\t-\t2");
        let err = parse_scores(text.as_bytes()).unwrap_err();
        assert_eq!(err.0[0], LineError::new(4, Issue::Width { expected: 3, found: 2 }));
        let text = HEADER.replace("model\tm0", "model\tb0");
        let err = parse_scores(text.as_bytes()).unwrap_err();
        assert_eq!(err.0[0], LineError::new(4, Issue::DuplicateModel("b0".into())));
    }

    #[test]
    fn canonical_number_formatting() {
        let f = parse("s1\tb0\t0.30\t7e-1\n").unwrap();
        assert!(f.to_canonical_string().ends_with("s1\tb0\t0.3\t0.7\n"));
    }
}
