//! The all-fives certification gate, its revision bookkeeping and the
//! physician score import.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::records::{EvaluationRecord, NarrativeRecord, NarrativeRole, Rater};
use crate::scores::{round_to_integer, Dimension, Score, ScoreVector};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome", content = "dimensions")]
pub enum Certification {
    Certified,
    /// Dimensions scored below 5, in canonical order.
    NeedsRevision(Vec<Dimension>),
}

/// Certified iff every physician score is 5; promotes the narrative to a
/// reference on success.
pub fn certify(evaluation: &EvaluationRecord, narrative: &mut NarrativeRecord) -> Result<Certification, BenchError> {
    if evaluation.rater != Rater::Physician {
        return Err(BenchError::Authority(evaluation.rater));
    }
    if evaluation.narrative_id != narrative.narrative_id {
        return Err(BenchError::Invalid(format!(
            "evaluation for {} applied to narrative {}",
            evaluation.narrative_id, narrative.narrative_id
        )));
    }
    let scores = evaluation.scores.require_complete()?;
    let five = Score::from_points(5).expect("5 is on the scale");
    let deficient: Vec<Dimension> = Dimension::ALL
        .into_iter()
        .filter(|d| scores[d.index()] != five)
        .collect();
    if deficient.is_empty() {
        narrative.role = NarrativeRole::Reference;
        Ok(Certification::Certified)
    } else {
        Ok(Certification::NeedsRevision(deficient))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevisionState {
    Draft,
    Scored,
    Revised,
    Certified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionEvent {
    pub state: RevisionState,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoreVector>,
}

/// Draft -> scored -> revised -> scored ... -> certified, with every step kept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificationTrack {
    pub narrative: NarrativeRecord,
    pub state: RevisionState,
    pub history: Vec<RevisionEvent>,
}

impl CertificationTrack {
    pub fn new(narrative: NarrativeRecord) -> Self {
        let first = RevisionEvent {
            state: RevisionState::Draft,
            text: narrative.text.clone(),
            scores: None,
        };
        CertificationTrack {
            narrative,
            state: RevisionState::Draft,
            history: vec![first],
        }
    }

    /// Records a physician evaluation of the current text.
    pub fn score(&mut self, evaluation: &EvaluationRecord) -> Result<Certification, BenchError> {
        if !matches!(self.state, RevisionState::Draft | RevisionState::Revised) {
            return Err(BenchError::State {
                from: self.state,
                action: "score",
            });
        }
        let outcome = certify(evaluation, &mut self.narrative)?;
        self.state = match outcome {
            Certification::Certified => RevisionState::Certified,
            Certification::NeedsRevision(_) => RevisionState::Scored,
        };
        self.history.push(RevisionEvent {
            state: self.state,
            text: self.narrative.text.clone(),
            scores: Some(evaluation.scores),
        });
        Ok(outcome)
    }

    /// Replaces the text after a failed scoring round.
    pub fn revise(&mut self, text: impl Into<String>) -> Result<(), BenchError> {
        if self.state != RevisionState::Scored {
            return Err(BenchError::State {
                from: self.state,
                action: "revise",
            });
        }
        self.narrative.text = text.into();
        self.state = RevisionState::Revised;
        self.history.push(RevisionEvent {
            state: self.state,
            text: self.narrative.text.clone(),
            scores: None,
        });
        Ok(())
    }
}

fn column_dimension(header: &str) -> Option<Dimension> {
    let h = header.trim();
    Dimension::ALL.into_iter().find(|d| {
        d.key().eq_ignore_ascii_case(h)
            || d.short_name().eq_ignore_ascii_case(h)
            || d.display_name().eq_ignore_ascii_case(h)
    })
}

/// Reads `narrative_id` plus six integer score columns. Columns may be named
/// by key (`medical_groundedness`), short name (`MedG`) or display name.
pub fn read_expert_scores(path: &Path) -> Result<Vec<EvaluationRecord>, BenchError> {
    let file = path.display().to_string();
    let parse_err = |line: usize, reason: String| BenchError::Parse {
        path: file.clone(),
        line,
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| BenchError::io(path, e))?;
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let id_col = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("narrative_id"))
        .ok_or_else(|| parse_err(1, "missing narrative_id column".into()))?;
    let mut columns = [None; 6];
    for (i, h) in headers.iter().enumerate() {
        if let Some(d) = column_dimension(h) {
            columns[d.index()] = Some(i);
        }
    }
    let columns: Vec<usize> = Dimension::ALL
        .into_iter()
        .map(|d| columns[d.index()].ok_or_else(|| parse_err(1, format!("missing column for {}", d.key()))))
        .collect::<Result<_, _>>()?;

    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        let mut points = [0u8; 6];
        for (k, &col) in columns.iter().enumerate() {
            let cell = record.get(col).unwrap_or("");
            let value: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("{:?} is not a score", cell)))?;
            if value.fract() != 0.0 {
                return Err(parse_err(line, format!("physician score {cell} is not an integer")));
            }
            points[k] = round_to_integer(value).map_err(|e| parse_err(line, e.to_string()))?;
        }
        let id = record.get(id_col).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(parse_err(line, "empty narrative_id".into()));
        }
        out.push(EvaluationRecord::new(
            id,
            Rater::Physician,
            ScoreVector::from_points(points),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::Stream;

    fn narrative() -> NarrativeRecord {
        NarrativeRecord {
            narrative_id: "n1".into(),
            case_id: "c1".into(),
            source_model: "m".into(),
            role: NarrativeRole::Candidate,
            text: "draft".into(),
            stream: Stream::HighQuality,
            flags: vec![],
        }
    }

    fn physician(points: [u8; 6]) -> EvaluationRecord {
        EvaluationRecord::new("n1", Rater::Physician, ScoreVector::from_points(points))
    }

    #[test]
    fn gate_outcomes() {
        let mut n = narrative();
        assert_eq!(
            certify(&physician([2, 3, 2, 2, 2, 2]), &mut n).unwrap(),
            Certification::NeedsRevision(Dimension::ALL.to_vec())
        );
        assert_eq!(
            certify(&physician([5, 5, 5, 5, 5, 4]), &mut n).unwrap(),
            Certification::NeedsRevision(vec![Dimension::DescriptionPrecision])
        );
        assert_eq!(n.role, NarrativeRole::Candidate);
        assert_eq!(certify(&physician([5; 6]), &mut n).unwrap(), Certification::Certified);
        assert_eq!(n.role, NarrativeRole::Reference);
    }

    #[test]
    fn only_physicians_certify() {
        let mut n = narrative();
        let e = EvaluationRecord::new("n1", Rater::Dermbench, ScoreVector::from_points([5; 6]));
        assert!(matches!(
            certify(&e, &mut n),
            Err(BenchError::Authority(Rater::Dermbench))
        ));
        let partial = EvaluationRecord::new(
            "n1",
            Rater::Physician,
            ScoreVector::from_points([5; 6]).without(Dimension::Safety),
        );
        assert!(matches!(certify(&partial, &mut n), Err(BenchError::Score(_))));
    }

    #[test]
    fn revision_loop_keeps_history() {
        let mut track = CertificationTrack::new(narrative());
        assert!(track.revise("early").is_err());
        track.score(&physician([4, 5, 5, 5, 5, 5])).unwrap();
        assert!(track.score(&physician([5; 6])).is_err());
        track.revise("better").unwrap();
        assert_eq!(track.score(&physician([5; 6])).unwrap(), Certification::Certified);
        let states: Vec<_> = track.history.iter().map(|e| e.state).collect();
        assert_eq!(
            states,
            [
                RevisionState::Draft,
                RevisionState::Scored,
                RevisionState::Revised,
                RevisionState::Certified
            ]
        );
        assert_eq!(track.narrative.text, "better");
        assert_eq!(track.history[0].text, "draft");
    }

    #[test]
    fn expert_csv_import() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("expert.csv");
        std::fs::write(&p, "narrative_id,Acc,Safe,MedG,Cover,Reason,Desc\nn1, 2, 3.0,2,2,2,2\n").unwrap();
        let rows = read_expert_scores(&p).unwrap();
        assert_eq!(rows, vec![physician([2, 3, 2, 2, 2, 2])]);

        std::fs::write(&p, "narrative_id,accuracy,safety,medical_groundedness,clinical_coverage,reasoning_coherence,description_precision\nn1,2,3,2,2,2,2.5\n").unwrap();
        assert!(matches!(read_expert_scores(&p), Err(BenchError::Parse { line: 2, .. })));

        std::fs::write(&p, "narrative_id,Acc,Safe\nn1,1,1\n").unwrap();
        assert!(matches!(read_expert_scores(&p), Err(BenchError::Parse { line: 1, .. })));
    }
}
