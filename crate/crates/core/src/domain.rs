//! Label space shared by every stage of the engine.
//!
//! A face carries an attribution label `y` over `K + 1` classes (index 0 is
//! the real class, `1..=K` are manipulation methods) and a binary detection
//! label `z`. The two are tied together by [`detection_label`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest number of manipulation classes a taxonomy may declare.
pub const MAX_MANIPULATIONS: usize = 64;

/// Position of a class inside a [`Taxonomy`]. `0` is always the real class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassIndex(u8);

impl ClassIndex {
    pub const REAL: ClassIndex = ClassIndex(0);

    /// Returns `None` when `value` exceeds the engine-wide class cap.
    pub fn new(value: usize) -> Option<Self> {
        (value <= MAX_MANIPULATIONS).then_some(ClassIndex(value as u8))
    }

    pub fn get(self) -> usize {
        self.0 as usize
    }

    pub fn is_real(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for ClassIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Binary real/fake label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionLabel {
    Real,
    Fake,
}

impl DetectionLabel {
    pub fn from_index(value: usize) -> Option<Self> {
        match value {
            0 => Some(DetectionLabel::Real),
            1 => Some(DetectionLabel::Fake),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            DetectionLabel::Real => 0,
            DetectionLabel::Fake => 1,
        }
    }
}

impl fmt::Display for DetectionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Maps an attribution label onto the detection label: real stays real,
/// every manipulation is fake.
pub fn detection_label(y: ClassIndex) -> DetectionLabel {
    if y.is_real() {
        DetectionLabel::Real
    } else {
        DetectionLabel::Fake
    }
}

/// Predicted attribution. Designs that only see real-vs-fake scores cannot
/// name the manipulation, so they report [`Attribution::UnattributedFake`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attribution {
    Class(ClassIndex),
    UnattributedFake,
}

impl Attribution {
    pub fn detection(self) -> DetectionLabel {
        match self {
            Attribution::Class(y) => detection_label(y),
            Attribution::UnattributedFake => DetectionLabel::Fake,
        }
    }

    pub fn class(self) -> Option<ClassIndex> {
        match self {
            Attribution::Class(y) => Some(y),
            Attribution::UnattributedFake => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaxonomyError {
    #[error("taxonomy needs at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("taxonomy declares {0} manipulations, the limit is {MAX_MANIPULATIONS}")]
    TooManyClasses(usize),
    #[error("class 0 must be named \"real\", found \"{0}\"")]
    FirstClassNotReal(String),
    #[error("duplicate class name \"{0}\"")]
    DuplicateClass(String),
    #[error("empty class or taxonomy name")]
    EmptyName,
    #[error("name \"{0}\" is reserved or contains a tab or line break")]
    InvalidName(String),
}

/// `-` marks a missing label in the text formats, so it cannot name a class.
fn printable_name(name: &str) -> bool {
    name != "-" && !name.contains(['\t', '\n', '\r'])
}

/// Ordered class names; position 0 is "real", positions `1..=K` name the
/// manipulation methods.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    name: String,
    class_names: Vec<String>,
}

impl Taxonomy {
    pub const REAL_CLASS: &'static str = "real";

    pub fn new(name: impl Into<String>, class_names: Vec<String>) -> Result<Self, TaxonomyError> {
        let name = name.into();
        if name.is_empty() {
            return Err(TaxonomyError::EmptyName);
        }
        if !printable_name(&name) {
            return Err(TaxonomyError::InvalidName(name));
        }
        if class_names.len() < 2 {
            return Err(TaxonomyError::TooFewClasses(class_names.len()));
        }
        if class_names.len() - 1 > MAX_MANIPULATIONS {
            return Err(TaxonomyError::TooManyClasses(class_names.len() - 1));
        }
        if class_names[0] != Self::REAL_CLASS {
            return Err(TaxonomyError::FirstClassNotReal(class_names[0].clone()));
        }
        for (i, class) in class_names.iter().enumerate() {
            if class.is_empty() {
                return Err(TaxonomyError::EmptyName);
            }
            if !printable_name(class) {
                return Err(TaxonomyError::InvalidName(class.clone()));
            }
            if class_names[..i].contains(class) {
                return Err(TaxonomyError::DuplicateClass(class.clone()));
            }
        }
        Ok(Taxonomy { name, class_names })
    }

    /// Taxonomy `real, manip1, ..., manipK`.
    pub fn numbered(name: impl Into<String>, k: usize) -> Result<Self, TaxonomyError> {
        let mut classes = vec![Self::REAL_CLASS.to_string()];
        classes.extend((1..=k).map(|i| format!("manip{i}")));
        Self::new(name, classes)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of manipulation classes `K`.
    pub fn k(&self) -> usize {
        self.class_names.len() - 1
    }

    /// Total number of attribution classes, `K + 1`.
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_name(&self, y: ClassIndex) -> Option<&str> {
        self.class_names.get(y.get()).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<ClassIndex> {
        self.class_names
            .iter()
            .position(|c| c == name)
            .and_then(ClassIndex::new)
    }

    pub fn contains(&self, y: ClassIndex) -> bool {
        y.get() <= self.k()
    }
}

/// One face observation. The image itself is only referenced by `sample_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceRecord {
    pub sample_id: String,
    pub video_id: String,
    pub frame_index: u64,
    pub identity_id: String,
    pub label_y: Option<ClassIndex>,
    pub label_z: Option<DetectionLabel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("class {value} out of range for K={k}")]
    ClassOutOfRange { value: usize, k: usize },
    #[error("z≠g(y): y={y} implies z={expected}, found z={found}")]
    InconsistentLabels {
        y: ClassIndex,
        expected: DetectionLabel,
        found: DetectionLabel,
    },
}

/// Every record-level invariant that `record` breaks under `taxonomy`.
/// An empty list means the record is valid.
pub fn validate_record(record: &FaceRecord, taxonomy: &Taxonomy) -> Vec<Violation> {
    let mut violations = Vec::new();
    if let Some(y) = record.label_y {
        if !taxonomy.contains(y) {
            violations.push(Violation::ClassOutOfRange {
                value: y.get(),
                k: taxonomy.k(),
            });
        }
        if let Some(z) = record.label_z {
            let expected = detection_label(y);
            if z != expected {
                violations.push(Violation::InconsistentLabels {
                    y,
                    expected,
                    found: z,
                });
            }
        }
    }
    violations
}
