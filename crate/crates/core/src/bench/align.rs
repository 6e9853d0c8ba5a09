//! Agreement of the two automatic evaluators with physician scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::records::{EvaluationRecord, Rater};
use crate::scores::{format_cell, format_macro, macro_mae, mae, Dimension, DimensionMap, ScoreError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// Per evaluator, per dimension MAE against physician scores.
    pub rows: BTreeMap<Rater, DimensionMap<f64>>,
    #[serde(rename = "macro")]
    pub macro_mae: BTreeMap<Rater, f64>,
    /// Narratives compared per evaluator.
    pub pairs: BTreeMap<Rater, usize>,
}

fn evaluator_row(
    rater: Rater,
    evals: &[EvaluationRecord],
    expert: &BTreeMap<&str, &EvaluationRecord>,
) -> Result<(DimensionMap<f64>, usize), BenchError> {
    let mut predicted = Vec::new();
    let mut reference = Vec::new();
    for e in evals {
        if let Some(x) = expert.get(e.narrative_id.as_str()) {
            predicted.push(e.scores);
            reference.push(x.scores);
        }
    }
    if predicted.is_empty() {
        return Err(BenchError::Invalid(format!(
            "{} evaluations share no narrative_id with the physician scores",
            rater.as_str()
        )));
    }
    let row = Dimension::ALL
        .into_iter()
        .map(|d| Ok((d, mae(&predicted, &reference, d)?)))
        .collect::<Result<DimensionMap<f64>, ScoreError>>()?;
    Ok((row, predicted.len()))
}

/// Per-dimension MAE of each evaluator against physician scores, with
/// evaluator scores rounded to integers first.
pub fn alignment_report(
    dermbench: &[EvaluationRecord],
    dermeval: &[EvaluationRecord],
    physician: &[EvaluationRecord],
) -> Result<AlignmentReport, BenchError> {
    let mut expert = BTreeMap::new();
    for p in physician {
        if !p.has_integer_scores() {
            return Err(BenchError::Invalid(format!(
                "physician scores for {} are not integers",
                p.narrative_id
            )));
        }
        if expert.insert(p.narrative_id.as_str(), p).is_some() {
            return Err(BenchError::Invalid(format!(
                "duplicate physician row for {}",
                p.narrative_id
            )));
        }
    }
    let mut report = AlignmentReport {
        rows: BTreeMap::new(),
        macro_mae: BTreeMap::new(),
        pairs: BTreeMap::new(),
    };
    for (rater, evals) in [(Rater::Dermbench, dermbench), (Rater::Dermeval, dermeval)] {
        let (row, n) = evaluator_row(rater, evals, &expert)?;
        report.macro_mae.insert(rater, macro_mae(&row)?);
        report.rows.insert(rater, row);
        report.pairs.insert(rater, n);
    }
    Ok(report)
}

impl AlignmentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Evaluator rows with three-decimal cells and a two-decimal macro column.
    pub fn table(&self) -> String {
        let mut out = String::from("Evaluator");
        for d in Dimension::ALL {
            out.push_str(&format!(" {:>6}", d.short_name()));
        }
        out.push_str("  Macro\n");
        for (rater, row) in &self.rows {
            out.push_str(&format!("{:<9}", rater.as_str()));
            for d in Dimension::ALL {
                out.push_str(&format!(" {:>6}", format_cell(row[&d])));
            }
            out.push_str(&format!("  {}\n", format_macro(self.macro_mae[rater])));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::ScoreVector;

    fn ev(id: &str, rater: Rater, scores: [f64; 6]) -> EvaluationRecord {
        EvaluationRecord::new(id, rater, ScoreVector::from_f64(scores).unwrap())
    }

    #[test]
    fn identical_scores_give_zero() {
        let phys = vec![ev("a", Rater::Physician, [1.0, 2.0, 3.0, 4.0, 5.0, 0.0])];
        let bench = vec![ev("a", Rater::Dermbench, [1.0, 2.0, 3.0, 4.0, 5.0, 0.0])];
        let eval = vec![ev("a", Rater::Dermeval, [1.2, 2.0, 3.0, 4.4, 5.0, 0.0])];
        let r = alignment_report(&bench, &eval, &phys).unwrap();
        assert!(r.rows.values().flat_map(|row| row.values()).all(|v| *v == 0.0));
        assert_eq!(r.macro_mae[&Rater::Dermeval], 0.0);
    }

    #[test]
    fn four_narrative_fixture() {
        let phys: Vec<_> = [[2.0; 6], [3.0; 6], [5.0; 6], [0.0; 6]]
            .iter()
            .enumerate()
            .map(|(i, s)| ev(&format!("n{i}"), Rater::Physician, *s))
            .collect();
        let bench = vec![
            ev("n0", Rater::Dermbench, [2.6, 2.0, 2.0, 2.0, 2.0, 2.0]),
            ev("n1", Rater::Dermbench, [3.0, 1.0, 3.0, 3.0, 3.0, 3.0]),
            ev("n2", Rater::Dermbench, [4.5, 5.0, 5.0, 5.0, 5.0, 2.0]),
            ev("n3", Rater::Dermbench, [0.4, 0.0, 0.0, 0.0, 0.0, 0.0]),
            ev("zz", Rater::Dermbench, [5.0; 6]),
        ];
        let eval = vec![ev("n1", Rater::Dermeval, [3.0; 6])];
        let r = alignment_report(&bench, &eval, &phys).unwrap();
        let row = &r.rows[&Rater::Dermbench];
        // Acc: |3-2| + 0 + |5-5| (4.5 rounds up) + 0 -> 1/4.
        assert_eq!(row[&Dimension::Accuracy], 0.25);
        assert_eq!(row[&Dimension::Safety], 0.5);
        assert_eq!(row[&Dimension::DescriptionPrecision], 0.75);
        assert_eq!(r.pairs[&Rater::Dermbench], 4);
        assert_eq!(r.pairs[&Rater::Dermeval], 1);
        let expected_macro = (0.25 + 0.5 + 0.0 + 0.0 + 0.0 + 0.75) / 6.0;
        assert!((r.macro_mae[&Rater::Dermbench] - expected_macro).abs() < 1e-15);
    }

    #[test]
    fn disjoint_keys_rejected() {
        let phys = vec![ev("a", Rater::Physician, [1.0; 6])];
        let bench = vec![ev("b", Rater::Dermbench, [1.0; 6])];
        assert!(matches!(
            alignment_report(&bench, &bench, &phys),
            Err(BenchError::Invalid(_))
        ));
    }
}
