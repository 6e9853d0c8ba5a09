//! The fixed prompt registry.
//!
//! Template bodies use `{NAME}` placeholders; `{{` and `}}` render as
//! literal braces.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TextError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Captioning,
    HierarchicalReasoning,
    RationaleElicitation,
    CandidateGeneration,
    JudgeComparison,
}

impl TemplateId {
    pub const ALL: [TemplateId; 5] = [
        TemplateId::Captioning,
        TemplateId::HierarchicalReasoning,
        TemplateId::RationaleElicitation,
        TemplateId::CandidateGeneration,
        TemplateId::JudgeComparison,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Captioning => "captioning",
            TemplateId::HierarchicalReasoning => "hierarchical_reasoning",
            TemplateId::RationaleElicitation => "rationale_elicitation",
            TemplateId::CandidateGeneration => "candidate_generation",
            TemplateId::JudgeComparison => "judge_comparison",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = TextError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| TextError::UnknownTemplate(s.to_string()))
    }
}

/// Which wording of the judge instruction to send.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeVariant {
    /// Enumerates all six rubric dimensions.
    #[default]
    SixDimension,
    /// The original five-dimension enumeration (omits Accuracy).
    FiveDimensionVerbatim,
}

impl JudgeVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            JudgeVariant::SixDimension => "six_dimension",
            JudgeVariant::FiveDimensionVerbatim => "five_dimension_verbatim",
        }
    }
}

impl FromStr for JudgeVariant {
    type Err = TextError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "six_dimension" | "six" => Ok(JudgeVariant::SixDimension),
            "five_dimension_verbatim" | "five" => Ok(JudgeVariant::FiveDimensionVerbatim),
            other => Err(TextError::UnknownTemplate(format!("judge variant {other}"))),
        }
    }
}

const CAPTIONING: &str = "Please briefly describe the physical location of the affected skin and the \
observable medical features of the skin condition. Do not make any differential diagnosis. \
Start your response with 'This image shows ...'.";

const HIERARCHICAL_REASONING: &str = "Simulate expert hierarchical reasoning for dermatologic \
diagnosis using the provided caption and the ground truth {DISEASE_NAME}. Begin with high level \
categorization, progressively refine to specific diseases and pathological features, and conclude \
with a coherent diagnostic judgment.

Caption:
{CAPTION}";

// Same instruction with the label clause removed, for the label-withheld stream.
const HIERARCHICAL_REASONING_UNLABELED: &str = "Simulate expert hierarchical reasoning for \
dermatologic diagnosis using the provided caption. Begin with high level categorization, \
progressively refine to specific diseases and pathological features, and conclude with a coherent \
diagnostic judgment.

Caption:
{CAPTION}";

const RATIONALE_ELICITATION: &str = "Given the dermatology image, the generated diagnostic \
narrative, and the six numeric scores for Accuracy, Safety, Medical Groundedness, Clinical \
Coverage, Reasoning Coherence, and Description Precision, produce a concise justification for each \
dimension. Structure the output as six titled sections that match the dimension names. In each \
section restate the score, cite concrete evidence from the narrative or observable findings that \
supports the score, and end with one actionable suggestion for improvement. Do not propose a new \
diagnosis and do not alter the scores.

Diagnostic narrative:
{NARRATIVE}

Scores:
{SCORES}";

const CANDIDATE_GENERATION: &str = "You are a dermatology expert. Analyze the image by describing \
key features such as morphology, color, distribution, and surface changes. Interpret the findings \
with clinical reasoning. Provide two to three differential diagnoses. Justify the top diagnosis. \
Conclude with 'The answer is {{DISEASE_NAME}}' where {{DISEASE_NAME}} is the disease name.";

const JUDGE_COMPARISON_SIX: &str = "Passage 1:
{CANDIDATE_TEXT}

Passage 2:
{REFERENCE_TEXT}

Given the two passages above, where the first is our generated diagnostic text and the second is \
the gold standard reference, compare them and assign our generated text a score from 0 to 5 for \
Accuracy, Safety, Medical Groundedness, Clinical Coverage, Reasoning Coherence, and Description \
Precision. Use 0 for the lowest and 5 for the highest.";

const JUDGE_COMPARISON_FIVE: &str = "Passage 1:
{CANDIDATE_TEXT}

Passage 2:
{REFERENCE_TEXT}

Given the two passages above, where the first is our generated diagnostic text and the second is \
the gold standard reference, compare them and assign our generated text a score from 0 to 5 for \
Safety, Medical Groundedness, Clinical Coverage, Reasoning Coherence, and Description Precision. \
Use 0 for the lowest and 5 for the highest.";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece<'a> {
    Text(&'a str),
    Brace(char),
    Slot(&'a str),
}

fn tokenize(body: &str) -> Vec<Piece<'_>> {
    let bytes = body.as_bytes();
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        let escaped = match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => Some('{'),
            b'}' if bytes.get(i + 1) == Some(&b'}') => Some('}'),
            _ => None,
        };
        if let Some(c) = escaped {
            pieces.push(Piece::Text(&body[start..i]));
            pieces.push(Piece::Brace(c));
            i += 2;
            start = i;
            continue;
        }
        if bytes[i] == b'{' {
            let rest = &body[i + 1..];
            let len = rest
                .bytes()
                .take_while(|b| b.is_ascii_uppercase() || *b == b'_')
                .count();
            if len > 0 && rest.as_bytes().get(len) == Some(&b'}') {
                pieces.push(Piece::Text(&body[start..i]));
                pieces.push(Piece::Slot(&rest[..len]));
                i += len + 2;
                start = i;
                continue;
            }
        }
        i += 1;
    }
    pieces.push(Piece::Text(&body[start..]));
    pieces
}

/// A prompt body with named placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    /// Catalog name; differs from `id` for variants.
    pub name: &'static str,
    pub body: &'static str,
}

impl PromptTemplate {
    /// Distinct placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = Vec::new();
        for piece in tokenize(self.body) {
            if let Piece::Slot(name) = piece {
                if !out.contains(&name) {
                    out.push(name);
                }
            }
        }
        out
    }

    pub fn render(&self, bindings: &BTreeMap<&str, &str>) -> Result<String, TextError> {
        let mut out = String::with_capacity(self.body.len());
        for piece in tokenize(self.body) {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Brace(c) => out.push(c),
                Piece::Slot(name) => {
                    let value = bindings.get(name).ok_or_else(|| TextError::MissingBinding {
                        template: self.name.to_string(),
                        placeholder: name.to_string(),
                    })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

/// Template lookup with the judge wording selected up front.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PromptRegistry {
    pub judge_variant: JudgeVariant,
}

impl PromptRegistry {
    pub fn new(judge_variant: JudgeVariant) -> Self {
        PromptRegistry { judge_variant }
    }

    pub fn template(&self, id: TemplateId) -> PromptTemplate {
        match id {
            TemplateId::Captioning => PromptTemplate {
                id,
                name: "captioning",
                body: CAPTIONING,
            },
            TemplateId::HierarchicalReasoning => PromptTemplate {
                id,
                name: "hierarchical_reasoning",
                body: HIERARCHICAL_REASONING,
            },
            TemplateId::RationaleElicitation => PromptTemplate {
                id,
                name: "rationale_elicitation",
                body: RATIONALE_ELICITATION,
            },
            TemplateId::CandidateGeneration => PromptTemplate {
                id,
                name: "candidate_generation",
                body: CANDIDATE_GENERATION,
            },
            TemplateId::JudgeComparison => match self.judge_variant {
                JudgeVariant::SixDimension => PromptTemplate {
                    id,
                    name: "judge_comparison",
                    body: JUDGE_COMPARISON_SIX,
                },
                JudgeVariant::FiveDimensionVerbatim => PromptTemplate {
                    id,
                    name: "judge_comparison.five_dimension_verbatim",
                    body: JUDGE_COMPARISON_FIVE,
                },
            },
        }
    }

    /// The reasoning prompt with the ground-truth clause removed.
    pub fn unlabeled_reasoning(&self) -> PromptTemplate {
        PromptTemplate {
            id: TemplateId::HierarchicalReasoning,
            name: "hierarchical_reasoning.unlabeled",
            body: HIERARCHICAL_REASONING_UNLABELED,
        }
    }

    pub fn render(&self, id: TemplateId, bindings: &BTreeMap<&str, &str>) -> Result<String, TextError> {
        self.template(id).render(bindings)
    }

    /// Every template and variant, in catalog order.
    pub fn all_templates() -> Vec<PromptTemplate> {
        let six = PromptRegistry::new(JudgeVariant::SixDimension);
        let five = PromptRegistry::new(JudgeVariant::FiveDimensionVerbatim);
        vec![
            six.template(TemplateId::Captioning),
            six.template(TemplateId::HierarchicalReasoning),
            six.unlabeled_reasoning(),
            six.template(TemplateId::RationaleElicitation),
            six.template(TemplateId::CandidateGeneration),
            six.template(TemplateId::JudgeComparison),
            five.template(TemplateId::JudgeComparison),
        ]
    }
}

/// Renders a template from the default registry, looked up by its string id.
pub fn render_prompt(template_id: &str, bindings: &BTreeMap<&str, &str>) -> Result<String, TextError> {
    let id: TemplateId = template_id.parse()?;
    PromptRegistry::default().render(id, bindings)
}

const CATALOG_HEADER: &str = "# prompt catalog v1";
const RECORD_MARK: &str = "@@ ";

/// Plain-text catalog: a header line, then for each template a `@@ <name>`
/// line followed by the raw body (placeholders unexpanded).
pub fn export_catalog() -> String {
    let mut out = String::from(CATALOG_HEADER);
    out.push('\n');
    for t in PromptRegistry::all_templates() {
        out.push_str(RECORD_MARK);
        out.push_str(t.name);
        out.push('\n');
        out.push_str(t.body);
        out.push('\n');
    }
    out
}

/// Reads a catalog back into `(name, body)` records.
pub fn parse_catalog(text: &str) -> Result<Vec<(String, String)>, TextError> {
    let mut lines = text.lines();
    if lines.next() != Some(CATALOG_HEADER) {
        return Err(TextError::Catalog("missing catalog header".into()));
    }
    let mut records: Vec<(String, String)> = Vec::new();
    for line in lines {
        if let Some(name) = line.strip_prefix(RECORD_MARK) {
            records.push((name.to_string(), String::new()));
        } else if let Some((_, body)) = records.last_mut() {
            if !body.is_empty() {
                body.push('\n');
            }
            body.push_str(line);
        } else {
            return Err(TextError::Catalog("body text before first record".into()));
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind<'a>(pairs: &[(&'a str, &'a str)]) -> BTreeMap<&'a str, &'a str> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn captioning_needs_no_bindings() {
        let text = render_prompt("captioning", &BTreeMap::new()).unwrap();
        assert!(text.starts_with("Please briefly describe the physical location"));
        assert!(text.contains("Do not make any differential diagnosis"));
    }

    #[test]
    fn reasoning_binds_disease_name() {
        let text = render_prompt(
            "hierarchical_reasoning",
            &bind(&[("DISEASE_NAME", "epidermal nevus"), ("CAPTION", "This image shows ...")]),
        )
        .unwrap();
        assert!(text.contains("the ground truth epidermal nevus"));
        assert!(text.contains("Simulate expert hierarchical reasoning"));
    }

    #[test]
    fn unlabeled_reasoning_has_no_label_slot() {
        let t = PromptRegistry::default().unlabeled_reasoning();
        assert_eq!(t.placeholders(), vec!["CAPTION"]);
        let text = t.render(&bind(&[("CAPTION", "c")])).unwrap();
        assert!(!text.contains("ground truth"));
        assert!(text.starts_with("Simulate expert hierarchical reasoning"));
    }

    #[test]
    fn judge_variants() {
        let b = bind(&[("CANDIDATE_TEXT", "cand"), ("REFERENCE_TEXT", "ref")]);
        for variant in [JudgeVariant::SixDimension, JudgeVariant::FiveDimensionVerbatim] {
            let text = PromptRegistry::new(variant)
                .render(TemplateId::JudgeComparison, &b)
                .unwrap();
            assert!(text.contains("assign our generated text a score from 0 to 5"));
            assert!(text.contains("Given the two passages above"));
            let cand = text.find("cand").unwrap();
            let reference = text.find("ref").unwrap();
            assert!(cand < reference);
        }
        let six = PromptRegistry::new(JudgeVariant::SixDimension)
            .render(TemplateId::JudgeComparison, &b)
            .unwrap();
        assert!(six.contains("0 to 5 for Accuracy, Safety"));
        let five = PromptRegistry::new(JudgeVariant::FiveDimensionVerbatim)
            .render(TemplateId::JudgeComparison, &b)
            .unwrap();
        assert!(five.contains("0 to 5 for Safety, Medical Groundedness"));
    }

    #[test]
    fn candidate_prompt_keeps_literal_disease_marker() {
        let t = PromptRegistry::default().template(TemplateId::CandidateGeneration);
        assert!(t.placeholders().is_empty());
        let text = t.render(&BTreeMap::new()).unwrap();
        assert!(text.starts_with("You are a dermatology expert. Analyze the image"));
        assert!(
            text.ends_with("Conclude with 'The answer is {DISEASE_NAME}' where {DISEASE_NAME} is the disease name.")
        );
    }

    #[test]
    fn missing_binding_and_unknown_template() {
        let err = render_prompt("hierarchical_reasoning", &bind(&[("CAPTION", "x")])).unwrap_err();
        assert!(matches!(err, TextError::MissingBinding { ref placeholder, .. } if placeholder == "DISEASE_NAME"));
        assert!(matches!(
            render_prompt("summarize", &BTreeMap::new()),
            Err(TextError::UnknownTemplate(_))
        ));
    }

    #[test]
    fn complete_bindings_resolve_every_slot() {
        for t in PromptRegistry::all_templates() {
            let names = t.placeholders();
            let b: BTreeMap<&str, &str> = names.iter().map(|n| (*n, "VALUE")).collect();
            let rendered = t.render(&b).unwrap();
            for n in names {
                assert!(!rendered.contains(&format!("{{{n}}}")), "{} left {n}", t.name);
            }
        }
    }

    #[test]
    fn anchor_phrases_present() {
        let reg = PromptRegistry::default();
        let anchors = [
            (TemplateId::Captioning, "Do not make any differential diagnosis"),
            (
                TemplateId::HierarchicalReasoning,
                "Simulate expert hierarchical reasoning",
            ),
            (
                TemplateId::RationaleElicitation,
                "produce a concise justification for each dimension",
            ),
            (TemplateId::CandidateGeneration, "You are a dermatology expert"),
            (TemplateId::JudgeComparison, "Given the two passages above"),
        ];
        for (id, phrase) in anchors {
            assert!(reg.template(id).body.contains(phrase), "{id}");
        }
    }

    #[test]
    fn catalog_round_trips() {
        let catalog = export_catalog();
        let records = parse_catalog(&catalog).unwrap();
        let templates = PromptRegistry::all_templates();
        assert_eq!(records.len(), templates.len());
        for ((name, body), t) in records.iter().zip(&templates) {
            assert_eq!(name, t.name);
            assert_eq!(body, t.body);
        }
        assert!(parse_catalog("no header").is_err());
    }
}
