//! Canonical evaluation text: one `<Dimension>: <score>/5 --- <justification>`
//! line per dimension, in canonical order.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::TextError;
use crate::scores::{Dimension, Score, ScoreVector};

pub const SECTION_SEPARATOR: &str = "---";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub dimension: Dimension,
    pub score: Score,
    pub justification: String,
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {}/5 {SECTION_SEPARATOR}",
            self.dimension.display_name(),
            self.score
        )?;
        if !self.justification.is_empty() {
            write!(f, " {}", self.justification)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationText {
    pub preamble: Option<String>,
    pub sections: Vec<Section>,
    pub epilogue: Option<String>,
}

impl EvaluationText {
    pub fn scores(&self) -> ScoreVector {
        let mut v = ScoreVector::empty();
        for s in &self.sections {
            v.set(s.dimension, s.score);
        }
        v
    }
}

impl fmt::Display for EvaluationText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.preamble {
            write!(f, "{p}\n\n")?;
        }
        for (i, section) in self.sections.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{section}")?;
        }
        if let Some(e) = &self.epilogue {
            write!(f, "\n\n{e}")?;
        }
        Ok(())
    }
}

/// Builds the canonical six-section evaluation for a complete score vector.
pub fn render_evaluation<S: AsRef<str>>(
    scores: &ScoreVector,
    justifications: &[S; 6],
) -> Result<EvaluationText, TextError> {
    let complete = scores.require_complete()?;
    let sections = Dimension::ALL
        .into_iter()
        .map(|d| Section {
            dimension: d,
            score: complete[d.index()],
            justification: justifications[d.index()].as_ref().trim().to_string(),
        })
        .collect();
    Ok(EvaluationText {
        preamble: None,
        sections,
        epilogue: None,
    })
}

/// Short `Dimension: N/5` lines, used to pass scores into prompts.
pub fn scores_block(scores: &ScoreVector) -> String {
    scores
        .iter()
        .map(|(d, s)| format!("{}: {s}/5", d.display_name()))
        .collect::<Vec<_>>()
        .join("\n")
}
