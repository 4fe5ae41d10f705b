//! Folds per-face fake scores into identity scores and video verdicts.
//!
//! Default policy: mean over the faces of one identity, max over the
//! identities of one video, fake when the video score is above 0.5.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::DetectionLabel;
use crate::numeric::{exact_mean, median};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregationError {
    #[error("no scores to aggregate")]
    Empty,
    #[error("video {0} has no identities")]
    EmptyVideo(String),
    #[error("score {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("video threshold {0} outside [0, 1]")]
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Max,
    Median,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Mean => "mean",
            Pooling::Max => "max",
            Pooling::Median => "median",
        }
    }

    pub fn apply(self, scores: &[f64]) -> Result<f64, AggregationError> {
        if let Some(&bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(AggregationError::OutOfRange(bad));
        }
        let pooled = match self {
            Pooling::Mean => exact_mean(scores),
            Pooling::Median => median(scores),
            Pooling::Max => scores.iter().copied().reduce(f64::max),
        };
        pooled.ok_or(AggregationError::Empty)
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "max" => Ok(Pooling::Max),
            "median" => Ok(Pooling::Median),
            other => Err(format!("unknown pooling '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationPolicy {
    pub identity_pooling: Pooling,
    pub video_pooling: Pooling,
    /// A video is fake when its score is strictly above this value.
    pub video_threshold: f64,
}

impl Default for AggregationPolicy {
    fn default() -> Self {
        AggregationPolicy {
            identity_pooling: Pooling::Mean,
            video_pooling: Pooling::Max,
            video_threshold: 0.5,
        }
    }
}

impl AggregationPolicy {
    pub fn validate(&self) -> Result<(), AggregationError> {
        if !(0.0..=1.0).contains(&self.video_threshold) {
            return Err(AggregationError::Threshold(self.video_threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoVerdict {
    pub video_id: String,
    pub per_identity_scores: BTreeMap<String, f64>,
    pub video_fake_score: f64,
    pub video_z_hat: DetectionLabel,
    pub contributing_faces: usize,
}

/// Pools the face scores of one identity.
pub fn aggregate_identity(scores: &[f64], policy: &AggregationPolicy) -> Result<f64, AggregationError> {
    policy.identity_pooling.apply(scores)
}

/// Pools identity scores into a verdict. `contributing_faces` is left at the
/// number of identities; [`aggregate_faces`] fills in the face count.
pub fn aggregate_video(
    video_id: &str,
    identity_scores: &BTreeMap<String, f64>,
    policy: &AggregationPolicy,
) -> Result<VideoVerdict, AggregationError> {
    policy.validate()?;
    if identity_scores.is_empty() {
        return Err(AggregationError::EmptyVideo(video_id.to_string()));
    }
    let scores: Vec<f64> = identity_scores.values().copied().collect();
    let video_fake_score = policy.video_pooling.apply(&scores)?;
    let video_z_hat = if video_fake_score > policy.video_threshold {
        DetectionLabel::Fake
    } else {
        DetectionLabel::Real
    };
    Ok(VideoVerdict {
        video_id: video_id.to_string(),
        per_identity_scores: identity_scores.clone(),
        video_fake_score,
        video_z_hat,
        contributing_faces: identity_scores.len(),
    })
}

/// One face's contribution to aggregation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceScore<'a> {
    pub video_id: &'a str,
    pub identity_id: &'a str,
    pub fake_score: f64,
}

/// Groups faces by video and identity and returns one verdict per video,
/// sorted by video id. The output does not depend on the order of `faces`.
pub fn aggregate_faces<'a>(
    faces: impl IntoIterator<Item = FaceScore<'a>>,
    policy: &AggregationPolicy,
) -> Result<Vec<VideoVerdict>, AggregationError> {
    let mut videos: BTreeMap<&str, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for face in faces {
        videos
            .entry(face.video_id)
            .or_default()
            .entry(face.identity_id)
            .or_default()
            .push(face.fake_score);
    }
    videos
        .into_iter()
        .map(|(video_id, identities)| {
            let mut identity_scores = BTreeMap::new();
            let mut faces = 0;
            for (identity, scores) in identities {
                faces += scores.len();
                identity_scores.insert(identity.to_string(), aggregate_identity(&scores, policy)?);
            }
            let mut verdict = aggregate_video(video_id, &identity_scores, policy)?;
            verdict.contributing_faces = faces;
            Ok(verdict)
        })
        .collect()
}
