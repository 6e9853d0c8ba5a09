//! The two narrative streams: captioning followed by hierarchical reasoning,
//! with or without the disease label.

use std::collections::BTreeMap;
use std::path::PathBuf;

use super::judge::FLAG_NO_DIAGNOSIS;
use super::{fan_out, normalize_cot, BenchError, CaseFailure, Provenance, Stage};
use crate::backends::{Backend, Message};
use crate::records::{CaseRecord, NarrativeRecord, NarrativeRole, Stream};
use crate::textproto::{parse_final_diagnosis, PromptRegistry, TemplateId};

pub const FLAG_DIAGNOSIS_MISMATCH: &str = "diagnosis_mismatch";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamOutput {
    pub narratives: Vec<NarrativeRecord>,
    pub provenance: Vec<Provenance>,
    pub failures: Vec<CaseFailure>,
    /// Cases dropped for an empty caption.
    pub skipped: Vec<CaseFailure>,
}

fn label_matches(diagnosis: &str, label: &str) -> bool {
    let d = diagnosis.trim().to_lowercase();
    let l = label.trim().to_lowercase();
    d == l
        || d.strip_prefix(&l)
            .is_some_and(|rest| rest.trim_start().starts_with('('))
}

/// Compliance flags for a narrative of the given stream.
pub fn diagnosis_flags(text: &str, label: &str, stream: Stream) -> Vec<String> {
    match parse_final_diagnosis(text) {
        None => vec![FLAG_NO_DIAGNOSIS.to_string()],
        Some(d) if stream == Stream::HighQuality && !label_matches(&d, label) => {
            vec![FLAG_DIAGNOSIS_MISMATCH.to_string()]
        }
        Some(_) => Vec::new(),
    }
}

enum Outcome {
    Done(NarrativeRecord, Vec<Provenance>),
    Failed(CaseFailure),
    Skipped(CaseFailure),
}

/// Runs one stream over `cases`. `image_of` resolves a case to its image
/// file. Per-case failures are collected; the run continues.
pub fn build_stream<F>(
    cases: &[CaseRecord],
    stream: Stream,
    caption_backend: &Backend,
    reasoning_backend: &Backend,
    registry: &PromptRegistry,
    image_of: F,
) -> Result<StreamOutput, BenchError>
where
    F: Fn(&CaseRecord) -> PathBuf + Sync,
{
    if !matches!(stream, Stream::HighQuality | Stream::Regular) {
        return Err(BenchError::Invalid(format!("{stream:?} is not a construction stream")));
    }
    let caption_template = registry.template(TemplateId::Captioning);
    let caption_prompt = caption_template.render(&BTreeMap::new())?;
    let reasoning_template = match stream {
        Stream::HighQuality => registry.template(TemplateId::HierarchicalReasoning),
        _ => registry.unlabeled_reasoning(),
    };
    let workers = caption_backend
        .max_concurrency()
        .min(reasoning_backend.max_concurrency());

    let outcomes = fan_out(cases, workers, |_, case| {
        let fail = |stage: Stage, message: String| CaseFailure {
            case_id: case.case_id.clone(),
            model: reasoning_backend.name().to_string(),
            stage,
            message,
        };
        let image = image_of(case);
        let request = caption_backend.request(vec![Message::user(caption_prompt.clone()).with_image(&image)]);
        let caption = match caption_backend.complete(&request) {
            Ok(r) => r.text,
            Err(e) => return Outcome::Failed(fail(Stage::Caption, e.to_string())),
        };
        if caption.trim().is_empty() {
            return Outcome::Skipped(fail(Stage::Caption, "empty caption".into()));
        }
        let mut bindings = BTreeMap::from([("CAPTION", caption.trim())]);
        if stream == Stream::HighQuality {
            bindings.insert("DISEASE_NAME", case.disease_label.as_str());
        }
        let prompt = match reasoning_template.render(&bindings) {
            Ok(p) => p,
            Err(e) => return Outcome::Failed(fail(Stage::Reasoning, e.to_string())),
        };
        let request = reasoning_backend.request(vec![Message::user(prompt).with_image(&image)]);
        let raw = match reasoning_backend.complete(&request) {
            Ok(r) => r.text,
            Err(e) => return Outcome::Failed(fail(Stage::Reasoning, e.to_string())),
        };
        let text = match normalize_cot(&raw) {
            Ok(t) => t,
            Err(e) => return Outcome::Failed(fail(Stage::Normalize, e.to_string())),
        };
        let narrative_id = format!("{}-{}", stream.tag(), case.case_id);
        let provenance = vec![
            Provenance {
                record_id: format!("{narrative_id}#caption"),
                model_id: caption_backend.model_id().to_string(),
                template: caption_template.name.to_string(),
                timestamp: None,
            },
            Provenance {
                record_id: narrative_id.clone(),
                model_id: reasoning_backend.model_id().to_string(),
                template: reasoning_template.name.to_string(),
                timestamp: None,
            },
        ];
        Outcome::Done(
            NarrativeRecord {
                narrative_id,
                case_id: case.case_id.clone(),
                source_model: reasoning_backend.model_id().to_string(),
                role: NarrativeRole::Candidate,
                flags: diagnosis_flags(&text, &case.disease_label, stream),
                text,
                stream,
            },
            provenance,
        )
    });

    let mut out = StreamOutput::default();
    for outcome in outcomes {
        match outcome {
            Outcome::Done(n, p) => {
                out.narratives.push(n);
                out.provenance.extend(p);
            }
            Outcome::Failed(f) => out.failures.push(f),
            Outcome::Skipped(f) => out.skipped.push(f),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_matching() {
        assert!(label_matches("Epidermal Nevus", "epidermal nevus"));
        assert!(label_matches("common wart (Verruca vulgaris)", "common wart"));
        assert!(!label_matches("common warts", "common wart"));
        assert_eq!(
            diagnosis_flags("The answer is eczema.", "psoriasis", Stream::HighQuality),
            vec![FLAG_DIAGNOSIS_MISMATCH]
        );
        assert!(diagnosis_flags("The answer is eczema.", "psoriasis", Stream::Regular).is_empty());
        assert_eq!(
            diagnosis_flags("no verdict", "x", Stream::Regular),
            vec![FLAG_NO_DIAGNOSIS]
        );
    }
}
