use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    check_format_line, expect_key, next_header, numbered_lines, parse_taxonomy_line, taxonomy_line,
    valid_identifier, FormatErrors, Issue, LineError, ReadError, MANIFEST_FORMAT, MISSING,
};
use crate::domain::{validate_record, DetectionLabel, FaceRecord, Taxonomy};

const COLUMNS: [&str; 6] = ["sample_id", "video_id", "frame_index", "identity_id", "y", "z"];

/// Lines before the first record in canonical form.
pub const MANIFEST_HEADER_LINES: usize = 5;

/// Which labels the records carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    /// Attribution and detection labels on every record.
    Full,
    /// Detection labels only, for corpora whose classes do not match the
    /// taxonomy.
    DetectionOnly,
}

impl LabelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelMode::Full => "full",
            LabelMode::DetectionOnly => "detection-only",
        }
    }
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(LabelMode::Full),
            "detection-only" => Ok(LabelMode::DetectionOnly),
            other => Err(other.to_string()),
        }
    }
}

/// A validated set of face records under one taxonomy.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    dataset_name: String,
    taxonomy: Taxonomy,
    label_mode: LabelMode,
    records: Vec<FaceRecord>,
    index: HashMap<String, usize>,
}

impl Manifest {
    /// Validates every record. Errors carry the line each record would occupy
    /// in the canonical file.
    pub fn new(
        dataset_name: impl Into<String>,
        taxonomy: Taxonomy,
        label_mode: LabelMode,
        records: Vec<FaceRecord>,
    ) -> Result<Self, FormatErrors> {
        let dataset_name = dataset_name.into();
        if !valid_identifier(&dataset_name) {
            return Err(FormatErrors::single(
                2,
                Issue::BadIdentifier { field: "dataset" },
            ));
        }
        let mut errors = Vec::new();
        let mut index = HashMap::with_capacity(records.len());
        for (i, record) in records.iter().enumerate() {
            let line = MANIFEST_HEADER_LINES + i + 1;
            for (field, value) in [
                ("sample_id", &record.sample_id),
                ("video_id", &record.video_id),
                ("identity_id", &record.identity_id),
            ] {
                if !valid_identifier(value) {
                    errors.push(LineError::new(line, Issue::BadIdentifier { field }));
                }
            }
            errors.extend(
                check_record(record, &taxonomy, label_mode)
                    .into_iter()
                    .map(|issue| LineError::new(line, issue)),
            );
            if index.insert(record.sample_id.clone(), i).is_some() {
                errors.push(LineError::new(
                    line,
                    Issue::DuplicateSample(record.sample_id.clone()),
                ));
            }
        }
        if !errors.is_empty() {
            return Err(FormatErrors(errors));
        }
        Ok(Manifest {
            dataset_name,
            taxonomy,
            label_mode,
            records,
            index,
        })
    }

    pub fn dataset_name(&self) -> &str {
        &self.dataset_name
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn label_mode(&self) -> LabelMode {
        self.label_mode
    }

    pub fn records(&self) -> &[FaceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn position(&self, sample_id: &str) -> Option<usize> {
        self.index.get(sample_id).copied()
    }

    /// Canonical text form.
    pub fn to_canonical_string(&self) -> String {
        let mut buf = Vec::new();
        write_manifest(self, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("manifest text is UTF-8")
    }
}

/// Label-mode and label-consistency checks for one record.
fn check_record(record: &FaceRecord, taxonomy: &Taxonomy, mode: LabelMode) -> Vec<Issue> {
    let mut issues: Vec<Issue> = Vec::new();
    match mode {
        LabelMode::Full => {
            if record.label_y.is_none() {
                issues.push(Issue::MissingLabel("y"));
            }
        }
        LabelMode::DetectionOnly => {
            if record.label_y.is_some() {
                issues.push(Issue::UnexpectedLabel("y"));
            }
        }
    }
    if record.label_z.is_none() {
        issues.push(Issue::MissingLabel("z"));
    }
    issues.extend(validate_record(record, taxonomy).into_iter().map(Issue::from));
    issues
}

pub fn parse_manifest<R: BufRead>(reader: R) -> Result<Manifest, FormatErrors> {
    let mut lines = numbered_lines(reader);
    let mut last = 0;

    let (n, text) = next_header(&mut lines, "format", &mut last)?;
    check_format_line(n, &text, MANIFEST_FORMAT)?;

    let (n, text) = next_header(&mut lines, "dataset", &mut last)?;
    let fields = expect_key(n, &text, "dataset")?;
    if fields.len() != 1 || !valid_identifier(fields[0]) {
        return Err(FormatErrors::single(n, Issue::BadIdentifier { field: "dataset" }));
    }
    let dataset_name = fields[0].to_string();

    let (n, text) = next_header(&mut lines, "taxonomy", &mut last)?;
    let taxonomy = parse_taxonomy_line(n, &text)?;

    let (n, text) = next_header(&mut lines, "labels", &mut last)?;
    let fields = expect_key(n, &text, "labels")?;
    let label_mode = match fields[..] {
        [mode] => mode
            .parse::<LabelMode>()
            .map_err(|m| FormatErrors::single(n, Issue::LabelMode(m)))?,
        _ => {
            return Err(FormatErrors::single(
                n,
                Issue::FieldCount { expected: 2, found: fields.len() + 1 },
            ))
        }
    };

    let (n, text) = next_header(&mut lines, "columns", &mut last)?;
    let fields = expect_key(n, &text, "columns")?;
    if fields != COLUMNS {
        return Err(FormatErrors::single(
            n,
            Issue::BadHeader {
                expected: format!("columns\t{}", COLUMNS.join("\t")),
                found: text.clone(),
            },
        ));
    }

    let mut errors = Vec::new();
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
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
        match parse_record(&text, &taxonomy) {
            Ok(record) => {
                let issues = check_record(&record, &taxonomy, label_mode);
                if !issues.is_empty() {
                    errors.extend(issues.into_iter().map(|i| LineError::new(n, i)));
                    continue;
                }
                if seen.insert(record.sample_id.clone(), records.len()).is_some() {
                    errors.push(LineError::new(n, Issue::DuplicateSample(record.sample_id)));
                    continue;
                }
                records.push(record);
            }
            Err(issues) => errors.extend(issues.into_iter().map(|i| LineError::new(n, i))),
        }
    }
    if !errors.is_empty() {
        return Err(FormatErrors(errors));
    }
    Ok(Manifest {
        dataset_name,
        taxonomy,
        label_mode,
        records,
        index: seen,
    })
}

fn parse_record(text: &str, taxonomy: &Taxonomy) -> Result<FaceRecord, Vec<Issue>> {
    let fields: Vec<&str> = text.split('\t').collect();
    if fields.len() != COLUMNS.len() {
        return Err(vec![Issue::FieldCount {
            expected: COLUMNS.len(),
            found: fields.len(),
        }]);
    }
    let mut issues = Vec::new();
    for (field, value) in [
        ("sample_id", fields[0]),
        ("video_id", fields[1]),
        ("identity_id", fields[3]),
    ] {
        if !valid_identifier(value) {
            issues.push(Issue::BadIdentifier { field });
        }
    }
    let frame_index = fields[2].parse::<u64>().map_err(|_| Issue::InvalidValue {
        field: "frame_index",
        value: fields[2].to_string(),
    });
    let label_y = match fields[4] {
        MISSING => Ok(None),
        name => taxonomy
            .index_of(name)
            .map(Some)
            .ok_or_else(|| Issue::UnknownClass(name.to_string())),
    };
    let label_z = match fields[5] {
        MISSING => Ok(None),
        "0" => Ok(Some(DetectionLabel::Real)),
        "1" => Ok(Some(DetectionLabel::Fake)),
        other => Err(Issue::InvalidValue {
            field: "z",
            value: other.to_string(),
        }),
    };
    let (frame_index, label_y, label_z) = match (frame_index, label_y, label_z) {
        (Ok(f), Ok(y), Ok(z)) if issues.is_empty() => (f, y, z),
        (f, y, z) => {
            issues.extend(f.err());
            issues.extend(y.err());
            issues.extend(z.err());
            return Err(issues);
        }
    };
    Ok(FaceRecord {
        sample_id: fields[0].to_string(),
        video_id: fields[1].to_string(),
        frame_index,
        identity_id: fields[3].to_string(),
        label_y,
        label_z,
    })
}

pub fn write_manifest<W: Write>(manifest: &Manifest, mut w: W) -> std::io::Result<()> {
    writeln!(w, "format\t{MANIFEST_FORMAT}\t{}", super::FORMAT_VERSION)?;
    writeln!(w, "dataset\t{}", manifest.dataset_name)?;
    writeln!(w, "{}", taxonomy_line(&manifest.taxonomy))?;
    writeln!(w, "labels\t{}", manifest.label_mode)?;
    writeln!(w, "columns\t{}", COLUMNS.join("\t"))?;
    for r in &manifest.records {
        let y = r
            .label_y
            .and_then(|y| manifest.taxonomy.class_name(y))
            .unwrap_or(MISSING);
        let z = r.label_z.map(|z| z.to_string());
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.sample_id,
            r.video_id,
            r.frame_index,
            r.identity_id,
            y,
            z.as_deref().unwrap_or(MISSING)
        )?;
    }
    w.flush()
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest, ReadError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| ReadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(BufReader::new(file)).map_err(|errors| ReadError::Format {
        path: path.to_path_buf(),
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ClassIndex;

    const MINIMAL: &str = "format\tfe-manifest\t1\n\
        dataset\tmini\n\
        taxonomy\tt\treal\tDeepfakes\n\
        labels\tfull\n\
        columns\tsample_id\tvideo_id\tframe_index\tidentity_id\ty\tz\n\
        s1\tv1\t0\tp1\treal\t0\n";

    fn parse(text: &str) -> Result<Manifest, FormatErrors> {
        parse_manifest(text.as_bytes())
    }

    #[test]
    fn minimal_manifest() {
        let m = parse(MINIMAL).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.taxonomy().k(), 1);
        assert_eq!(m.records()[0].label_y, Some(ClassIndex::REAL));
        assert_eq!(m.to_canonical_string(), MINIMAL);
    }

    #[test]
    fn inconsistent_labels_cite_the_line() {
        let text = MINIMAL.replace(
            "taxonomy\tt\treal\tDeepfakes\n",
            "taxonomy\tt\treal\tDeepfakes\tFace2Face\n",
        ) + "s2\tv1\t1\tp1\tFace2Face\t0\n";
        let err = parse(&text).unwrap_err();
        assert_eq!(err.0.len(), 1);
        assert_eq!(err.0[0].line, 7);
        assert!(matches!(err.0[0].issue, Issue::Record(_)));
        assert!(err.to_string().contains("z≠g(y)"));
    }

    #[test]
    fn duplicate_and_unknown_class() {
        let text = MINIMAL.to_string() + "s1\tv1\t1\tp1\treal\t0\ns3\tv1\t2\tp1\tNeural\t1\n";
        let err = parse(&text).unwrap_err();
        assert_eq!(err.0[0], LineError::new(7, Issue::DuplicateSample("s1".into())));
        assert_eq!(err.0[1], LineError::new(8, Issue::UnknownClass("Neural".into())));
    }

    #[test]
    fn detection_only_mode() {
        let text = MINIMAL
            .replace("labels\tfull", "labels\tdetection-only")
            .replace("real\t0\n", "-\t0\n")
            + "s2\tv2\t0\tp2\t-\t1\n";
        let m = parse(&text).unwrap();
        assert_eq!(m.label_mode(), LabelMode::DetectionOnly);
        assert_eq!(m.records()[1].label_z, Some(DetectionLabel::Fake));

        let err = parse(&(text + "s3\tv2\t1\tp2\tDeepfakes\t1\n")).unwrap_err();
        assert_eq!(err.0[0], LineError::new(8, Issue::UnexpectedLabel("y")));
    }

    #[test]
    fn header_errors() {
        let err = parse("format\tfe-scores\t1\n").unwrap_err();
        assert_eq!(err.first_line(), Some(1));
        let err = parse("format\tfe-manifest\t1\ndataset\tx\n").unwrap_err();
        assert_eq!(err.0[0], LineError::new(3, Issue::MissingHeader("taxonomy")));
        let err = parse(&MINIMAL.replace("labels\tfull", "labels\tsome")).unwrap_err();
        assert_eq!(err.0[0].line, 4);
    }

    #[test]
    fn canonicalizes_noncanonical_input() {
        let text = MINIMAL.replace("\n", "\r\n").replace("\t0\tp1", "\t000\tp1") + "\n\n";
        let m = parse(&text).unwrap();
        assert_eq!(m.to_canonical_string(), MINIMAL);
    }

    #[test]
    fn bad_fields_are_all_reported() {
        let text = MINIMAL.to_string() + "\tv1\tx\tp1\treal\t2\n";
        let err = parse(&text).unwrap_err();
        assert_eq!(err.0.len(), 3);
        assert!(err.0.iter().all(|e| e.line == 7));
    }
}
