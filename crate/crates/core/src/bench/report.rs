use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{BenchError, CaseFailure, Stage};
use crate::scores::{aggregate_model_means, Dimension, DimensionMap, Score, ScoreVector};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub judge_backend: String,
    pub judge_model: String,
    pub prompt_variant: String,
    pub corpus_hash: String,
    pub models: Vec<String>,
    pub cases: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Complete,
    /// The judge reply lacked some dimensions; excluded from the means.
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRow {
    pub model: String,
    pub case_id: String,
    pub status: RowStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoreVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<CaseFailure>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureTally {
    pub generation: usize,
    pub judging: usize,
    pub partial: usize,
}

impl FailureTally {
    pub fn total(&self) -> usize {
        self.generation + self.judging + self.partial
    }
}

/// Per-model means over complete judge rows, with the rows themselves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub metadata: RunMetadata,
    pub per_model: BTreeMap<String, DimensionMap<Score>>,
    pub failures: BTreeMap<String, FailureTally>,
    pub per_case: Vec<CaseRow>,
}

fn summarize(
    models: &[String],
    rows: &[CaseRow],
) -> Result<(BTreeMap<String, DimensionMap<Score>>, BTreeMap<String, FailureTally>), BenchError> {
    let mut groups: BTreeMap<String, Vec<ScoreVector>> = BTreeMap::new();
    let mut failures: BTreeMap<String, FailureTally> =
        models.iter().map(|m| (m.clone(), FailureTally::default())).collect();
    for row in rows {
        let tally = failures.entry(row.model.clone()).or_default();
        match row.status {
            RowStatus::Complete => {
                let scores = row.scores.ok_or_else(|| {
                    BenchError::Inconsistent(format!("complete row {}/{} has no scores", row.model, row.case_id))
                })?;
                groups.entry(row.model.clone()).or_default().push(scores);
            }
            RowStatus::Partial => tally.partial += 1,
            RowStatus::Failed => match row.failure.as_ref().map(|f| f.stage) {
                Some(Stage::Judging) => tally.judging += 1,
                _ => tally.generation += 1,
            },
        }
    }
    Ok((aggregate_model_means(&groups)?, failures))
}

impl BenchmarkReport {
    pub fn assemble(metadata: RunMetadata, per_case: Vec<CaseRow>) -> Result<Self, BenchError> {
        let (per_model, failures) = summarize(&metadata.models, &per_case)?;
        Ok(BenchmarkReport {
            metadata,
            per_model,
            failures,
            per_case,
        })
    }

    /// Recomputes means and tallies from the rows.
    pub fn check(&self) -> Result<(), BenchError> {
        let (per_model, failures) = summarize(&self.metadata.models, &self.per_case)?;
        if per_model != self.per_model {
            return Err(BenchError::Inconsistent(
                "per_model means do not match per_case rows".into(),
            ));
        }
        if failures != self.failures {
            return Err(BenchError::Inconsistent(
                "failure tallies do not match per_case rows".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let report: BenchmarkReport =
            serde_json::from_str(text).map_err(|e| BenchError::Inconsistent(e.to_string()))?;
        report.check()?;
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Plain-text table, one row per model, three decimals per cell.
    pub fn table(&self) -> String {
        let width = self.per_model.keys().map(|m| m.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$}", "Model");
        for d in Dimension::ALL {
            let _ = write!(out, " {:>6}", d.short_name());
        }
        out.push('\n');
        for (model, row) in &self.per_model {
            let _ = write!(out, "{model:<width$}");
            for d in Dimension::ALL {
                let _ = write!(out, " {:>6}", crate::scores::format_cell(row[&d].to_f64()));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(models: &[&str]) -> RunMetadata {
        RunMetadata {
            judge_backend: "judge".into(),
            judge_model: "j".into(),
            prompt_variant: "six_dimension".into(),
            corpus_hash: "h".into(),
            models: models.iter().map(|s| s.to_string()).collect(),
            cases: 2,
        }
    }

    fn row(model: &str, case: &str, status: RowStatus, scores: Option<ScoreVector>) -> CaseRow {
        CaseRow {
            model: model.into(),
            case_id: case.into(),
            status,
            candidate_id: None,
            scores,
            failure: None,
        }
    }

    #[test]
    fn partial_and_failed_rows_are_tallied_not_averaged() {
        let rows = vec![
            row("a", "1", RowStatus::Complete, Some(ScoreVector::from_points([2; 6]))),
            row(
                "a",
                "2",
                RowStatus::Partial,
                Some(ScoreVector::from_points([5; 6]).without(Dimension::Safety)),
            ),
            row("b", "1", RowStatus::Failed, None),
            row("b", "2", RowStatus::Complete, Some(ScoreVector::from_points([4; 6]))),
        ];
        let r = BenchmarkReport::assemble(meta(&["a", "b"]), rows).unwrap();
        assert_eq!(r.per_model["a"][&Dimension::Safety], Score::from_points(2).unwrap());
        assert_eq!(r.failures["a"].partial, 1);
        assert_eq!(r.failures["b"].generation, 1);
        let back = BenchmarkReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn tampered_report_rejected() {
        let rows = vec![row(
            "a",
            "1",
            RowStatus::Complete,
            Some(ScoreVector::from_points([2; 6])),
        )];
        let mut r = BenchmarkReport::assemble(meta(&["a"]), rows).unwrap();
        r.per_model
            .get_mut("a")
            .unwrap()
            .insert(Dimension::Accuracy, Score::from_points(3).unwrap());
        assert!(matches!(
            BenchmarkReport::from_json(&r.to_json()),
            Err(BenchError::Inconsistent(_))
        ));
    }

    #[test]
    fn model_without_complete_rows_has_no_means() {
        let r = BenchmarkReport::assemble(meta(&["a"]), vec![row("a", "1", RowStatus::Failed, None)]).unwrap();
        assert!(r.per_model.is_empty());
        assert_eq!(r.failures["a"].total(), 1);
        assert!(r.table().starts_with("Model"));
    }
}
