//! Candidate generation, reference-anchored judging and the benchmark loop.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::corpus::write_atomic;
use super::report::{BenchmarkReport, CaseRow, RowStatus, RunMetadata};
use super::{fan_out, BenchError, CaseFailure, CorpusStore, Provenance, Stage};
use crate::backends::{Backend, Message};
use crate::records::{CaseRecord, EvaluationRecord, NarrativeRecord, NarrativeRole, Rater, Split, Stream};
use crate::scores::{Dimension, ScoreVector};
use crate::textproto::{parse_final_diagnosis, parse_scores, scores_block, ParseStatus, PromptRegistry, TemplateId};

/// Flag set on narratives without a final "The answer is" sentence.
pub const FLAG_NO_DIAGNOSIS: &str = "no_final_diagnosis";

pub fn candidate_id(model: &str, case_id: &str) -> String {
    format!("cand:{model}:{case_id}")
}

/// Prompts the model with the candidate-generation instruction and the image.
pub fn generate_candidate(
    case: &CaseRecord,
    image: &Path,
    backend: &Backend,
    registry: &PromptRegistry,
) -> Result<(NarrativeRecord, Provenance), BenchError> {
    let template = registry.template(TemplateId::CandidateGeneration);
    let prompt = template.render(&BTreeMap::new())?;
    let request = backend.request(vec![Message::user(prompt).with_image(image)]);
    let response = backend.complete(&request)?;
    let id = candidate_id(backend.name(), &case.case_id);
    let mut flags = Vec::new();
    if parse_final_diagnosis(&response.text).is_none() {
        flags.push(FLAG_NO_DIAGNOSIS.to_string());
    }
    let narrative = NarrativeRecord {
        narrative_id: id.clone(),
        case_id: case.case_id.clone(),
        source_model: backend.name().to_string(),
        role: NarrativeRole::Candidate,
        text: response.text,
        stream: Stream::External,
        flags,
    };
    let provenance = Provenance {
        record_id: id,
        model_id: backend.model_id().to_string(),
        template: template.name.to_string(),
        timestamp: None,
    };
    Ok((narrative, provenance))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub scores: ScoreVector,
    pub diagnostics: [ParseStatus; 6],
    pub reply: String,
}

impl Judgment {
    pub fn is_complete(&self) -> bool {
        self.scores.is_complete()
    }
}

/// Scores a candidate against the certified reference of the same case.
pub fn judge_pair(
    candidate: &NarrativeRecord,
    reference: &NarrativeRecord,
    judge: &Backend,
    registry: &PromptRegistry,
) -> Result<Judgment, BenchError> {
    if reference.role != NarrativeRole::Reference {
        return Err(BenchError::Invalid(format!(
            "{} is not a certified reference",
            reference.narrative_id
        )));
    }
    if reference.case_id != candidate.case_id {
        return Err(BenchError::Invalid(format!(
            "reference {} belongs to case {}, candidate to {}",
            reference.narrative_id, reference.case_id, candidate.case_id
        )));
    }
    let bindings = BTreeMap::from([
        ("CANDIDATE_TEXT", candidate.text.as_str()),
        ("REFERENCE_TEXT", reference.text.as_str()),
    ]);
    let prompt = registry.render(TemplateId::JudgeComparison, &bindings)?;
    let response = judge.complete(&judge.request(vec![Message::user(prompt)]))?;
    let parsed = parse_scores(&response.text);
    if parsed.scores.valid_count() == 0 {
        return Err(BenchError::Invalid("judge reply contained no rubric scores".into()));
    }
    Ok(Judgment {
        scores: parsed.scores,
        diagnostics: parsed.diagnostics,
        reply: response.text,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RationaleOutcome {
    pub text: String,
    pub attempts: u32,
    /// False when the restated scores still differed after the retry.
    pub consistent: bool,
}

/// Flag set on evaluations whose rationale restates different scores.
pub const FLAG_RATIONALE_MISMATCH: &str = "rationale_score_mismatch";

/// Asks for per-dimension justifications of fixed scores. A reply that
/// restates different scores is retried once with the next seed.
pub fn elicit_rationale(
    narrative: &NarrativeRecord,
    scores: &ScoreVector,
    backend: &Backend,
    registry: &PromptRegistry,
    image: Option<&Path>,
) -> Result<RationaleOutcome, BenchError> {
    scores.require_complete()?;
    let block = scores_block(scores);
    let bindings = BTreeMap::from([("NARRATIVE", narrative.text.as_str()), ("SCORES", block.as_str())]);
    let prompt = registry.render(TemplateId::RationaleElicitation, &bindings)?;
    let mut message = Message::user(prompt);
    if let Some(path) = image {
        message = message.with_image(path);
    }
    let mut request = backend.request(vec![message]);
    let mut last = String::new();
    for attempt in 1..=2 {
        let response = backend.complete(&request)?;
        if parse_scores(&response.text).scores == *scores {
            return Ok(RationaleOutcome {
                text: response.text,
                attempts: attempt,
                consistent: true,
            });
        }
        last = response.text;
        request.sampling.seed = Some(request.sampling.seed.map_or(1, |s| s.wrapping_add(1)));
    }
    Ok(RationaleOutcome {
        text: last,
        attempts: 2,
        consistent: false,
    })
}

/// Settings of a benchmark run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub registry: PromptRegistry,
    /// Base for relative image references.
    pub corpus_dir: PathBuf,
    /// Per-cell results for resuming interrupted runs.
    pub cell_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CandidateCell {
    narrative: NarrativeRecord,
    provenance: Provenance,
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .take(40)
        .collect()
}

/// Readable, collision-safe file name for a cell key.
fn cell_name(parts: &[&str]) -> String {
    let digest = Sha256::digest(parts.join("\u{0}").as_bytes());
    let readable: Vec<String> = parts.iter().map(|p| sanitize(p)).collect();
    format!("{}-{}.json", readable.join("__"), &hex::encode(digest)[..8])
}

fn read_cell<T: for<'de> Deserialize<'de>>(path: &Path) -> Option<T> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn write_cell<T: Serialize>(path: &Path, value: &T) -> Result<(), BenchError> {
    let mut text = serde_json::to_string_pretty(value).expect("cell serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Everything a benchmark run produced.
#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub report: BenchmarkReport,
    pub candidates: Vec<NarrativeRecord>,
    pub provenance: Vec<Provenance>,
    pub judgments: Vec<EvaluationRecord>,
}

struct CellResult {
    row: CaseRow,
    candidate: Option<(NarrativeRecord, Provenance)>,
    judgment: Option<Judgment>,
}

/// Generates and judges a candidate for every model and bench-split case.
/// Failed and partial cells are excluded from the means and tallied.
pub fn run_benchmark(
    corpus: &CorpusStore,
    models: &[Backend],
    judge: &Backend,
    options: &RunOptions,
) -> Result<BenchmarkRun, BenchError> {
    if models.is_empty() {
        return Err(BenchError::Invalid("no models to benchmark".into()));
    }
    let missing = corpus.missing_references(Split::Bench);
    if !missing.is_empty() {
        return Err(BenchError::MissingReference(missing));
    }
    let cases: Vec<&CaseRecord> = corpus.cases.iter().filter(|c| c.split == Split::Bench).collect();
    let variant = options.registry.judge_variant.as_str();

    let mut cells = Vec::new();
    for model in models {
        let workers = model.max_concurrency().min(judge.max_concurrency());
        let results = fan_out(&cases, workers, |_, case| {
            run_cell(corpus, case, model, judge, variant, options)
        });
        cells.extend(results);
    }

    let mut rows = Vec::with_capacity(cells.len());
    let mut candidates = Vec::new();
    let mut provenance = Vec::new();
    let mut judgments = Vec::new();
    for cell in cells {
        if let Some((narrative, prov)) = cell.candidate {
            if let Some(j) = &cell.judgment {
                let mut eval = EvaluationRecord::new(&narrative.narrative_id, Rater::Dermbench, j.scores);
                eval.rationale = Some(j.reply.clone());
                if !j.is_complete() {
                    eval.flags.push("partial".into());
                }
                judgments.push(eval);
            }
            candidates.push(narrative);
            provenance.push(prov);
        }
        rows.push(cell.row);
    }

    let metadata = RunMetadata {
        judge_backend: judge.name().to_string(),
        judge_model: judge.model_id().to_string(),
        prompt_variant: variant.to_string(),
        corpus_hash: corpus.corpus_hash(),
        models: models.iter().map(|m| m.name().to_string()).collect(),
        cases: cases.len(),
    };
    Ok(BenchmarkRun {
        report: BenchmarkReport::assemble(metadata, rows)?,
        candidates,
        provenance,
        judgments,
    })
}

fn run_cell(
    corpus: &CorpusStore,
    case: &CaseRecord,
    model: &Backend,
    judge: &Backend,
    variant: &str,
    options: &RunOptions,
) -> CellResult {
    let failed = |stage: Stage, message: String| CaseRow {
        model: model.name().to_string(),
        case_id: case.case_id.clone(),
        status: RowStatus::Failed,
        candidate_id: None,
        scores: None,
        failure: Some(CaseFailure {
            case_id: case.case_id.clone(),
            model: model.name().to_string(),
            stage,
            message,
        }),
    };

    let candidate_path = options
        .cell_dir
        .as_ref()
        .map(|d| d.join("candidates").join(cell_name(&[model.name(), &case.case_id])));
    let cached: Option<CandidateCell> = candidate_path.as_deref().and_then(read_cell);
    let (narrative, prov) = match cached {
        Some(cell) => (cell.narrative, cell.provenance),
        None => {
            let image = corpus.resolve_image(case, &options.corpus_dir);
            match generate_candidate(case, &image, model, &options.registry) {
                Ok(pair) => {
                    if let Some(p) = &candidate_path {
                        let cell = CandidateCell {
                            narrative: pair.0.clone(),
                            provenance: pair.1.clone(),
                        };
                        if let Err(e) = write_cell(p, &cell) {
                            return CellResult {
                                row: failed(Stage::Generation, e.to_string()),
                                candidate: None,
                                judgment: None,
                            };
                        }
                    }
                    pair
                }
                Err(e) => {
                    return CellResult {
                        row: failed(Stage::Generation, e.to_string()),
                        candidate: None,
                        judgment: None,
                    }
                }
            }
        }
    };

    let reference = corpus
        .certified_reference(&case.case_id)
        .expect("checked before the run");
    let judgment_path = options.cell_dir.as_ref().map(|d| {
        d.join("judgments")
            .join(cell_name(&[model.name(), &case.case_id, variant, judge.name()]))
    });
    let cached: Option<Judgment> = judgment_path.as_deref().and_then(read_cell);
    let judgment = match cached {
        Some(j) => j,
        None => match judge_pair(&narrative, reference, judge, &options.registry) {
            Ok(j) => {
                if let Some(p) = &judgment_path {
                    if let Err(e) = write_cell(p, &j) {
                        let mut row = failed(Stage::Judging, e.to_string());
                        row.candidate_id = Some(narrative.narrative_id.clone());
                        return CellResult {
                            row,
                            candidate: Some((narrative, prov)),
                            judgment: None,
                        };
                    }
                }
                j
            }
            Err(e) => {
                let mut row = failed(Stage::Judging, e.to_string());
                row.candidate_id = Some(narrative.narrative_id.clone());
                return CellResult {
                    row,
                    candidate: Some((narrative, prov)),
                    judgment: None,
                };
            }
        },
    };

    let row = CaseRow {
        model: model.name().to_string(),
        case_id: case.case_id.clone(),
        status: if judgment.is_complete() {
            RowStatus::Complete
        } else {
            RowStatus::Partial
        },
        candidate_id: Some(narrative.narrative_id.clone()),
        scores: Some(judgment.scores),
        failure: None,
    };
    CellResult {
        row,
        candidate: Some((narrative, prov)),
        judgment: Some(judgment),
    }
}

/// Dimensions a judge reply failed to provide.
pub fn missing_dimensions(j: &Judgment) -> Vec<Dimension> {
    Dimension::ALL
        .into_iter()
        .filter(|d| j.scores.get(*d).is_none())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_names_are_distinct_and_readable() {
        let a = cell_name(&["gpt/4o", "case 1"]);
        let b = cell_name(&["gpt_4o", "case_1"]);
        assert!(a.starts_with("gpt_4o__case_1-"));
        assert_ne!(a, b);
        assert!(a.ends_with(".json"));
    }
}
