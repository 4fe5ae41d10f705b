use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use super::{read_score_file, Manifest, ReadError, RosterEntry, ScoreFile};
use crate::domain::{ClassIndex, Taxonomy};
use crate::ensemble::{Design, EnsembleError, ScoreKind, ScoreTensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StoreError {
    #[error("score taxonomy '{scores}' does not match manifest taxonomy '{manifest}'")]
    TaxonomyMismatch { manifest: String, scores: String },
    #[error("score row for sample '{sample}' (model '{model}') is not in the manifest")]
    UnknownSample { sample: String, model: String },
    #[error("missing score for sample '{sample}' from model '{model}'")]
    MissingScore { sample: String, model: String },
    #[error("model '{0}' is not in the roster")]
    UnknownModel(String),
    #[error("design {design} needs {expected} models, but '{model}' is {found}")]
    KindMismatch {
        design: Design,
        model: String,
        expected: ScoreKind,
        found: ScoreKind,
    },
    #[error("no {0} models in the roster")]
    NoModels(ScoreKind),
    #[error(
        "specialists must cover each manipulation exactly once \
         (missing {missing:?}, repeated {repeated:?}); pick a set with an explicit model list"
    )]
    SpecialistCoverage {
        missing: Vec<String>,
        repeated: Vec<String>,
    },
    #[error("sample '{0}' is not in the manifest")]
    UnknownSampleId(String),
    #[error(transparent)]
    Tensor(#[from] EnsembleError),
}

/// Models feeding one ensemble, in tensor row order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSelection {
    design: Design,
    kind: ScoreKind,
    indices: Vec<usize>,
    model_ids: Vec<String>,
}

impl ModelSelection {
    pub fn design(&self) -> Design {
        self.design
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Renormalized score rows indexed by manifest position and roster position.
#[derive(Debug, Clone)]
pub struct ScoreStore {
    taxonomy: Taxonomy,
    roster: Vec<RosterEntry>,
    sample_ids: Vec<String>,
    positions: HashMap<String, usize>,
    rows: Vec<Option<Box<[f64]>>>,
}

impl ScoreStore {
    /// Checks the score file against `manifest` and indexes every row. Rows
    /// are divided by their sum, which moves each entry by at most the sum
    /// tolerance.
    pub fn index(file: &ScoreFile, manifest: &Manifest) -> Result<Self, StoreError> {
        if file.taxonomy() != manifest.taxonomy() {
            return Err(StoreError::TaxonomyMismatch {
                manifest: manifest.taxonomy().name().to_string(),
                scores: file.taxonomy().name().to_string(),
            });
        }
        let models: HashMap<&str, usize> = file
            .roster()
            .iter()
            .enumerate()
            .map(|(i, e)| (e.model_id.as_str(), i))
            .collect();
        let n_models = file.roster().len();
        let mut rows = vec![None; manifest.len() * n_models];
        for row in file.rows() {
            let sample = manifest
                .position(&row.sample_id)
                .ok_or_else(|| StoreError::UnknownSample {
                    sample: row.sample_id.clone(),
                    model: row.model_id.clone(),
                })?;
            let model = models[row.model_id.as_str()];
            let sum: f64 = row.values.iter().sum();
            rows[sample * n_models + model] = Some(row.values.iter().map(|v| v / sum).collect());
        }
        let sample_ids: Vec<String> = manifest.records().iter().map(|r| r.sample_id.clone()).collect();
        let positions = sample_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(ScoreStore {
            taxonomy: file.taxonomy().clone(),
            roster: file.roster().to_vec(),
            sample_ids,
            positions,
            rows,
        })
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn roster(&self) -> &[RosterEntry] {
        &self.roster
    }

    pub fn sample_count(&self) -> usize {
        self.sample_ids.len()
    }

    /// Renormalized row for a manifest position and roster position.
    pub fn row(&self, sample: usize, model: usize) -> Option<&[f64]> {
        self.rows
            .get(sample * self.roster.len() + model)
            .and_then(|r| r.as_deref())
    }

    /// `(sample_id, model_id)` pairs with no score, in manifest order.
    pub fn coverage_gaps(&self) -> Vec<(String, String)> {
        let mut gaps = Vec::new();
        for (s, sample) in self.sample_ids.iter().enumerate() {
            for (m, entry) in self.roster.iter().enumerate() {
                if self.row(s, m).is_none() {
                    gaps.push((sample.clone(), entry.model_id.clone()));
                }
            }
        }
        gaps
    }

    /// Picks the models a design consumes. With `explicit` the listed models
    /// are used, otherwise every roster model of the design's kind. Soft
    /// designs keep roster order; specialists are ordered by target class and
    /// must cover manipulations `1..=K` exactly once.
    pub fn select(&self, design: Design, explicit: Option<&[String]>) -> Result<ModelSelection, StoreError> {
        let kind = design.score_kind();
        let mut indices: Vec<usize> = match explicit {
            Some(ids) => ids
                .iter()
                .map(|id| {
                    let i = self
                        .roster
                        .iter()
                        .position(|e| &e.model_id == id)
                        .ok_or_else(|| StoreError::UnknownModel(id.clone()))?;
                    if self.roster[i].kind != kind {
                        return Err(StoreError::KindMismatch {
                            design,
                            model: id.clone(),
                            expected: kind,
                            found: self.roster[i].kind,
                        });
                    }
                    Ok(i)
                })
                .collect::<Result<_, _>>()?,
            None => (0..self.roster.len())
                .filter(|&i| self.roster[i].kind == kind)
                .collect(),
        };
        if indices.is_empty() {
            return Err(StoreError::NoModels(kind));
        }
        if kind == ScoreKind::PerManipulation {
            indices.sort_by_key(|&i| self.roster[i].target);
            let k = self.taxonomy.k();
            let mut counts = vec![0usize; k + 1];
            for &i in &indices {
                if let Some(t) = self.roster[i].target {
                    counts[t.get()] += 1;
                }
            }
            let name = |c: usize| {
                ClassIndex::new(c)
                    .and_then(|c| self.taxonomy.class_name(c))
                    .unwrap_or("?")
                    .to_string()
            };
            let missing: Vec<String> = (1..=k).filter(|&c| counts[c] == 0).map(name).collect();
            let repeated: Vec<String> = (1..=k).filter(|&c| counts[c] > 1).map(name).collect();
            if !missing.is_empty() || !repeated.is_empty() {
                return Err(StoreError::SpecialistCoverage { missing, repeated });
            }
        }
        let model_ids = indices.iter().map(|&i| self.roster[i].model_id.clone()).collect();
        Ok(ModelSelection {
            design,
            kind,
            indices,
            model_ids,
        })
    }

    /// Tensor for one sample with rows in selection order. A missing score is
    /// an error; nothing is imputed.
    pub fn assemble_tensor(&self, sample_id: &str, selection: &ModelSelection) -> Result<ScoreTensor, StoreError> {
        let sample = *self
            .positions
            .get(sample_id)
            .ok_or_else(|| StoreError::UnknownSampleId(sample_id.to_string()))?;
        self.assemble_at(sample, selection)
    }

    /// Like [`ScoreStore::assemble_tensor`] but addressed by manifest position.
    pub fn assemble_at(&self, sample: usize, selection: &ModelSelection) -> Result<ScoreTensor, StoreError> {
        let rows = selection
            .indices
            .iter()
            .map(|&m| {
                self.row(sample, m).map(<[f64]>::to_vec).ok_or_else(|| StoreError::MissingScore {
                    sample: self.sample_ids[sample].clone(),
                    model: self.roster[m].model_id.clone(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ScoreTensor::new(
            self.sample_ids[sample].clone(),
            selection.kind,
            selection.model_ids.clone(),
            rows,
        )?)
    }
}

/// Reads a score file and indexes it against `manifest`.
pub fn read_scores(path: impl AsRef<Path>, manifest: &Manifest) -> Result<ScoreStore, ReadError> {
    let path = path.as_ref();
    let file = read_score_file(path)?;
    ScoreStore::index(&file, manifest).map_err(|source| ReadError::Store {
        path: path.to_path_buf(),
        source,
    })
}
