//! Corpus construction, the certification gate, reference-anchored judging,
//! benchmark aggregation and the physician alignment report.

mod align;
mod certify;
mod corpus;
mod cot;
mod fanout;
mod judge;
mod report;
mod stream;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendError;
use crate::records::Rater;
use crate::scores::ScoreError;
use crate::textproto::TextError;

pub use align::{alignment_report, AlignmentReport};
pub use certify::{certify, read_expert_scores, Certification, CertificationTrack, RevisionEvent, RevisionState};
pub use corpus::{
    load_jsonl, sample_cases, write_jsonl, CorpusStore, Provenance, SamplingMode, CASES_FILE, CORPUS_META_FILE,
    EVALUATIONS_FILE, NARRATIVES_FILE, PROVENANCE_FILE,
};
pub use cot::{normalize_cot, NormalizeError, THINK_CLOSE, THINK_OPEN};
pub use fanout::fan_out;
pub use judge::{
    candidate_id, elicit_rationale, generate_candidate, judge_pair, missing_dimensions, run_benchmark, BenchmarkRun,
    Judgment, RationaleOutcome, RunOptions, FLAG_NO_DIAGNOSIS, FLAG_RATIONALE_MISMATCH,
};
pub use report::{BenchmarkReport, CaseRow, FailureTally, RowStatus, RunMetadata};
pub use stream::{build_stream, diagnosis_flags, StreamOutput, FLAG_DIAGNOSIS_MISMATCH};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("corpus integrity: {}", .0.join("; "))]
    Integrity(Vec<String>),
    #[error("{} evaluations cannot certify a narrative", .0.as_str())]
    Authority(Rater),
    #[error("cannot {action} a narrative in state {from:?}")]
    State { from: RevisionState, action: &'static str },
    #[error("bench cases without a certified reference: {}", .0.join(", "))]
    MissingReference(Vec<String>),
    #[error("report is inconsistent: {0}")]
    Inconsistent(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Normalize(#[from] NormalizeError),
}

impl BenchError {
    pub(crate) fn io(path: &std::path::Path, err: impl fmt::Display) -> Self {
        BenchError::Io {
            path: path.display().to_string(),
            reason: err.to_string(),
        }
    }
}

/// Pipeline step at which a per-case failure happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Caption,
    Reasoning,
    Normalize,
    Generation,
    Judging,
    Rationale,
}

/// A per-case failure; runs record these and continue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseFailure {
    pub case_id: String,
    pub model: String,
    pub stage: Stage,
    pub message: String,
}

impl fmt::Display for CaseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "case {} ({}, {:?}): {}",
            self.case_id, self.model, self.stage, self.message
        )
    }
}
