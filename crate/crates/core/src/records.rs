//! Corpus record types shared by the pipelines and the file formats.

use serde::{Deserialize, Serialize};

use crate::scores::{Dimension, ScoreVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Bench,
    Holdout,
}

/// An image case with its disease label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub image_ref: String,
    pub disease_label: String,
    pub category: String,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NarrativeRole {
    Candidate,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    HighQuality,
    Regular,
    External,
}

impl Stream {
    pub fn tag(self) -> &'static str {
        match self {
            Stream::HighQuality => "hq",
            Stream::Regular => "reg",
            Stream::External => "ext",
        }
    }
}

/// A candidate or reference narrative tied to a case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeRecord {
    pub narrative_id: String,
    pub case_id: String,
    pub source_model: String,
    pub role: NarrativeRole,
    pub text: String,
    pub stream: Stream,
    /// Compliance problems noticed while the narrative was produced.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rater {
    Physician,
    Dermbench,
    Dermeval,
}

impl Rater {
    pub fn as_str(self) -> &'static str {
        match self {
            Rater::Physician => "physician",
            Rater::Dermbench => "dermbench",
            Rater::Dermeval => "dermeval",
        }
    }
}

/// Scores for one narrative from one rater.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub narrative_id: String,
    pub rater: Rater,
    pub scores: ScoreVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl EvaluationRecord {
    pub fn new(narrative_id: impl Into<String>, rater: Rater, scores: ScoreVector) -> Self {
        EvaluationRecord {
            narrative_id: narrative_id.into(),
            rater,
            scores,
            rationale: None,
            flags: Vec::new(),
        }
    }

    /// Physician scores must be integers on the 0..=5 scale.
    pub fn has_integer_scores(&self) -> bool {
        self.scores.iter().all(|(_, s)| s.is_integer())
    }

    /// A complete physician record with every dimension at 5.
    pub fn is_certified(&self) -> bool {
        self.rater == Rater::Physician
            && Dimension::ALL
                .into_iter()
                .all(|d| self.scores.get(d).map(|s| s.rounded() == 5 && s.is_integer()) == Some(true))
    }
}
