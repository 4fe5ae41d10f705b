//! Line-delimited wire formats for manifests and score files, plus JSON
//! report output.
//!
//! Both text formats are tab-separated, one record per line, behind a short
//! header whose first line carries the format name and version. Every
//! invariant is checked while reading; problems are reported with the line
//! they occur on.

mod manifest;
mod report;
mod scores;
mod store;

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::domain::{TaxonomyError, Violation};

pub use manifest::{
    parse_manifest, read_manifest, write_manifest, LabelMode, Manifest, MANIFEST_HEADER_LINES,
};
pub use report::{read_json, to_json_string, write_json};
pub use scores::{
    parse_scores, read_score_file, write_scores, RosterEntry, ScoreFile, ScoreRow,
};
pub use store::{read_scores, ModelSelection, ScoreStore, StoreError};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FORMAT: &str = "fe-manifest";
pub const SCORES_FORMAT: &str = "fe-scores";
/// Placeholder for an absent label or roster target.
pub const MISSING: &str = "-";

/// What is wrong with a single line.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Issue {
    #[error("unexpected end of file, expected the '{0}' header line")]
    MissingHeader(&'static str),
    #[error("expected header line '{expected}', found '{found}'")]
    BadHeader { expected: String, found: String },
    #[error("unsupported format '{format}' version '{version}'")]
    UnsupportedFormat { format: String, version: String },
    #[error("invalid taxonomy: {0}")]
    Taxonomy(#[from] TaxonomyError),
    #[error("unknown label mode '{0}'")]
    LabelMode(String),
    #[error("expected {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
    #[error("field '{field}' is empty or contains whitespace control characters")]
    BadIdentifier { field: &'static str },
    #[error("field '{field}' has invalid value '{value}'")]
    InvalidValue { field: &'static str, value: String },
    #[error("unknown class name '{0}'")]
    UnknownClass(String),
    #[error("{0}")]
    Record(#[from] Violation),
    #[error("duplicate sample_id '{0}'")]
    DuplicateSample(String),
    #[error("label '{0}' is required in this label mode")]
    MissingLabel(&'static str),
    #[error("label '{0}' must be absent in detection-only manifests")]
    UnexpectedLabel(&'static str),
    #[error("duplicate model '{0}' in roster")]
    DuplicateModel(String),
    #[error("model '{model}' of kind {kind}: {reason}")]
    RosterEntry {
        model: String,
        kind: String,
        reason: String,
    },
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("duplicate score for sample '{sample}' and model '{model}'")]
    DuplicateScore { sample: String, model: String },
    #[error("expected {expected} scores, found {found}")]
    Width { expected: usize, found: usize },
    #[error("score {index} = {value} outside [0, 1]")]
    ScoreRange { index: usize, value: f64 },
    #[error("scores sum to {sum}, not 1 within 1e-6")]
    ScoreSum { sum: f64 },
}

/// An [`Issue`] together with the 1-based line it was found on.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {issue}")]
pub struct LineError {
    pub line: usize,
    pub issue: Issue,
}

impl LineError {
    pub fn new(line: usize, issue: impl Into<Issue>) -> Self {
        LineError {
            line,
            issue: issue.into(),
        }
    }
}

/// Every problem found in one file, in line order.
#[derive(Debug, Clone, PartialEq)]
pub struct FormatErrors(pub Vec<LineError>);

impl FormatErrors {
    pub fn single(line: usize, issue: impl Into<Issue>) -> Self {
        FormatErrors(vec![LineError::new(line, issue)])
    }

    pub fn first_line(&self) -> Option<usize> {
        self.0.first().map(|e| e.line)
    }
}

impl fmt::Display for FormatErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for FormatErrors {}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}:\n{errors}", path.display())]
    Format { path: PathBuf, errors: FormatErrors },
    #[error("{}: {source}", path.display())]
    Store { path: PathBuf, source: StoreError },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

/// Formats a score with 9 significant digits in positional notation,
/// without trailing zeros.
pub fn format_score(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v.is_finite() { "0".to_string() } else { v.to_string() };
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();

    let mut out = String::new();
    if negative {
        out.push('-');
    }
    if exp >= 0 {
        let int_len = exp as usize + 1;
        if int_len >= digits.len() {
            out.push_str(&digits);
            out.extend(std::iter::repeat_n('0', int_len - digits.len()));
        } else {
            out.push_str(&digits[..int_len]);
            out.push('.');
            out.push_str(&digits[int_len..]);
        }
    } else {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
        out.push_str(&digits);
    }
    if out.contains('.') {
        let trimmed = out.trim_end_matches('0').trim_end_matches('.').len();
        out.truncate(trimmed);
    }
    out
}

/// Identifiers must be non-empty and free of tabs and line breaks.
fn valid_identifier(s: &str) -> bool {
    !s.is_empty() && !s.contains(['\t', '\n', '\r'])
}

/// Physical lines with their 1-based numbers; a trailing `\r` is dropped
/// and blank lines are skipped.
fn numbered_lines<R: std::io::BufRead>(
    reader: R,
) -> impl Iterator<Item = (usize, std::io::Result<String>)> {
    reader
        .lines()
        .enumerate()
        .map(|(i, line)| {
            (
                i + 1,
                line.map(|mut l| {
                    if l.ends_with('\r') {
                        l.pop();
                    }
                    l
                }),
            )
        })
        .filter(|(_, line)| !matches!(line, Ok(l) if l.trim().is_empty()))
}

/// Reads the next non-blank line, mapping EOF to a missing-header error.
fn next_header(
    lines: &mut impl Iterator<Item = (usize, std::io::Result<String>)>,
    name: &'static str,
    last_line: &mut usize,
) -> Result<(usize, String), FormatErrors> {
    match lines.next() {
        Some((n, Ok(line))) => {
            *last_line = n;
            Ok((n, line))
        }
        Some((n, Err(e))) => Err(FormatErrors::single(
            n,
            Issue::InvalidValue {
                field: "line",
                value: e.to_string(),
            },
        )),
        None => Err(FormatErrors::single(*last_line + 1, Issue::MissingHeader(name))),
    }
}

fn expect_key<'a>(line: usize, text: &'a str, key: &'static str) -> Result<Vec<&'a str>, FormatErrors> {
    let fields: Vec<&str> = text.split('\t').collect();
    if fields[0] != key {
        return Err(FormatErrors::single(
            line,
            Issue::BadHeader {
                expected: key.to_string(),
                found: fields[0].to_string(),
            },
        ));
    }
    Ok(fields[1..].to_vec())
}

fn check_format_line(line: usize, text: &str, format: &str) -> Result<(), FormatErrors> {
    let fields = expect_key(line, text, "format")?;
    let version = FORMAT_VERSION.to_string();
    if fields.len() != 2 || fields[0] != format || fields[1] != version {
        return Err(FormatErrors::single(
            line,
            Issue::UnsupportedFormat {
                format: fields.first().copied().unwrap_or("").to_string(),
                version: fields.get(1).copied().unwrap_or("").to_string(),
            },
        ));
    }
    Ok(())
}

fn parse_taxonomy_line(line: usize, text: &str) -> Result<crate::domain::Taxonomy, FormatErrors> {
    let fields = expect_key(line, text, "taxonomy")?;
    let (name, classes) = fields.split_first().ok_or_else(|| {
        FormatErrors::single(line, Issue::FieldCount { expected: 3, found: 1 })
    })?;
    crate::domain::Taxonomy::new(*name, classes.iter().map(|c| c.to_string()).collect())
        .map_err(|e| FormatErrors::single(line, e))
}

fn taxonomy_line(tax: &crate::domain::Taxonomy) -> String {
    let mut line = format!("taxonomy\t{}", tax.name());
    for class in tax.class_names() {
        line.push('\t');
        line.push_str(class);
    }
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_formatting() {
        assert_eq!(format_score(0.0), "0");
        assert_eq!(format_score(1.0), "1");
        assert_eq!(format_score(0.7), "0.7");
        assert_eq!(format_score(0.1 + 0.2), "0.3");
        assert_eq!(format_score(0.123456789123), "0.123456789");
        assert_eq!(format_score(0.0000012345678912), "0.00000123456789");
        assert_eq!(format_score(0.99999999999), "1");
        assert_eq!(format_score(12.5), "12.5");
        assert_eq!(format_score(-0.25), "-0.25");
    }

    #[test]
    fn score_formatting_round_trips_at_nine_digits() {
        for v in [0.880797077977882, 0.119202922022118, 1e-12, 0.333333333333] {
            let s = format_score(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(format_score(back), s);
            assert!((back - v).abs() <= v * 5e-9);
        }
    }
}
