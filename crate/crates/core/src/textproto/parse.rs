//! Rule-based extraction of the six rubric scores from free-form text.
//!
//! Each dimension is decided by its first mention that is followed on the
//! same line by a number. Accepted shapes include `Accuracy: 2/5`,
//! `**Safety:** 5.0`, `Coverage - 3 out of 5`, `Desc (Score: 4)` and
//! `Accuracy is rated 4/5` (the last form needs an explicit `/5` or
//! `out of 5`).

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::scores::{Dimension, Score, ScoreVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Found,
    Missing,
    OutOfRange,
    Conflicting,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseResult {
    pub scores: ScoreVector,
    /// Status per dimension, canonical order.
    pub diagnostics: [ParseStatus; 6],
}

impl ParseResult {
    pub fn status(&self, dim: Dimension) -> ParseStatus {
        self.diagnostics[dim.index()]
    }
}

// Longest names first so "clinical coverage" wins over "coverage".
const NAMES: &[(&str, Dimension)] = &[
    (r"medical\s+groundedness", Dimension::MedicalGroundedness),
    (r"clinical\s+coverage", Dimension::ClinicalCoverage),
    (r"reasoning\s+coherence", Dimension::ReasoningCoherence),
    (r"description\s+precision", Dimension::DescriptionPrecision),
    (r"accuracy", Dimension::Accuracy),
    (r"coverage", Dimension::ClinicalCoverage),
    (r"safety", Dimension::Safety),
    (r"medg", Dimension::MedicalGroundedness),
    (r"cover", Dimension::ClinicalCoverage),
    (r"reason", Dimension::ReasoningCoherence),
    (r"desc", Dimension::DescriptionPrecision),
    (r"safe", Dimension::Safety),
    (r"acc", Dimension::Accuracy),
];

static NAME_RE: LazyLock<Regex> = LazyLock::new(|| {
    let alts: Vec<String> = NAMES.iter().map(|(p, _)| format!("({p})")).collect();
    Regex::new(&format!(r"(?i)(?:{})", alts.join("|"))).expect("name regex")
});

static NAME_MATCHERS: LazyLock<Vec<(Regex, Dimension)>> = LazyLock::new(|| {
    NAMES
        .iter()
        .map(|(p, d)| (Regex::new(&format!(r"(?i)^{p}$")).expect("alias regex"), *d))
        .collect()
});

// Decoration between the name and the number: markdown emphasis, colons,
// dashes, brackets and an optional "Score:" label.
static STRICT_TAIL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^(?P<gap>[\s*_:=|()\[\]#>~\-–—]*(?:score\s*[:=]?[\s*_]*)?)(?P<num>\d+(?:\.\d+)?)(?P<scale>\s*/\s*5(?:\.0+)?\b|\s+out\s+of\s+5(?:\.0+)?\b)?",
    )
    .expect("tail regex")
});

static BRIDGED_TAIL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^(?P<gap>[^\d\n]{1,32}?)(?P<num>\d+(?:\.\d+)?)(?P<scale>\s*/\s*5(?:\.0+)?\b|\s+out\s+of\s+5(?:\.0+)?\b)",
    )
    .expect("bridged regex")
});

static RUBRIC_TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?P<num>\d+(?:\.\d+)?)(?:\s*/\s*5(?:\.0+)?\b|\s+out\s+of\s+5(?:\.0+)?\b)")
        .expect("rubric token regex")
});

#[derive(Debug, Clone, Copy, PartialEq)]
enum Value {
    InRange(Score),
    OutOfRange,
}

#[derive(Debug, Clone, Copy)]
struct Header {
    dim: Dimension,
    value: Value,
    start: usize,
    end: usize,
}

fn dimension_of(name: &str) -> Option<Dimension> {
    NAME_MATCHERS.iter().find(|(re, _)| re.is_match(name)).map(|(_, d)| *d)
}

fn read_value(num: &str, negative: bool) -> Value {
    if negative {
        return Value::OutOfRange;
    }
    match num.parse::<f64>() {
        Ok(v) => match Score::from_f64(v) {
            Ok(s) => Value::InRange(s),
            Err(_) => Value::OutOfRange,
        },
        Err(_) => Value::OutOfRange,
    }
}

fn is_negative(gap: &str) -> bool {
    let mut chars = gap.chars().rev();
    match (chars.next(), chars.next()) {
        (Some('-'), None) => true,
        (Some('-'), Some(prev)) => prev != '-',
        _ => false,
    }
}

/// Dimension mentions on one line that carry a number.
fn headers(line: &str) -> Vec<Header> {
    let mut out = Vec::new();
    for m in NAME_RE.find_iter(line) {
        // Word boundaries that treat markdown underscores as punctuation.
        let alnum = |c: char| c.is_ascii_alphanumeric();
        if line[..m.start()].ends_with(alnum) || line[m.end()..].starts_with(alnum) {
            continue;
        }
        let Some(dim) = dimension_of(m.as_str()) else {
            continue;
        };
        let rest = &line[m.end()..];
        let caps = STRICT_TAIL_RE
            .captures(rest)
            .filter(|c| {
                // Reject "Accuracy 2nd" style tokens.
                let end = c.get(0).unwrap().end();
                c.name("scale").is_some() || !rest[end..].starts_with(|ch: char| ch.is_ascii_alphanumeric())
            })
            .or_else(|| BRIDGED_TAIL_RE.captures(rest));
        if let Some(c) = caps {
            let gap = c.name("gap").map_or("", |g| g.as_str());
            let num = c.name("num").unwrap().as_str();
            out.push(Header {
                dim,
                value: read_value(num, is_negative(gap)),
                start: m.start(),
                end: m.end() + c.get(0).unwrap().end(),
            });
        }
    }
    out
}

/// Extracts the six scores. Never fails; unparsed dimensions are absent.
pub fn parse_scores(text: &str) -> ParseResult {
    let mut scores = ScoreVector::empty();
    let mut diagnostics = [ParseStatus::Missing; 6];
    let mut decided = [false; 6];

    for line in text.lines() {
        if decided.iter().all(|d| *d) {
            break;
        }
        let hs = headers(line);
        for (i, h) in hs.iter().enumerate() {
            let idx = h.dim.index();
            if decided[idx] {
                continue;
            }
            decided[idx] = true;
            let score = match h.value {
                Value::OutOfRange => {
                    diagnostics[idx] = ParseStatus::OutOfRange;
                    continue;
                }
                Value::InRange(s) => s,
            };
            // Conflicts: the same dimension restated on this line with another
            // value, or a second rubric value before the next header.
            let restated = hs[i + 1..].iter().any(|o| o.dim == h.dim && o.value != h.value);
            let segment_end = hs.get(i + 1).map_or(line.len(), |n| n.start);
            let segment = &line[h.end..segment_end.max(h.end)];
            let extra = RUBRIC_TOKEN_RE
                .captures_iter(segment)
                .any(|c| read_value(c.name("num").unwrap().as_str(), false) != Value::InRange(score));
            if restated || extra {
                diagnostics[idx] = ParseStatus::Conflicting;
            } else {
                diagnostics[idx] = ParseStatus::Found;
                scores.set(h.dim, score);
            }
        }
    }
    ParseResult { scores, diagnostics }
}

static ANSWER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bthe answer is\b").expect("answer regex"));

static SENTENCE_END_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"[.!?]["'”’*)]*\s"#).expect("sentence end regex"));

const TRIM_CHARS: &[char] = &['.', '!', '?', '"', '\'', '“', '”', '‘', '’', '*', '`', ':', ','];

/// Disease name from the last "The answer is X" sentence, if any.
pub fn parse_final_diagnosis(text: &str) -> Option<String> {
    let m = ANSWER_RE.find_iter(text).last()?;
    let rest = &text[m.end()..];
    let line = rest.lines().next().unwrap_or("");
    let line = match SENTENCE_END_RE.find(line) {
        Some(end) => &line[..end.start() + 1],
        None => line,
    };
    let name = line
        .trim()
        .trim_start_matches(|c: char| c.is_whitespace() || TRIM_CHARS.contains(&c))
        .trim_end_matches(|c: char| c.is_whitespace() || TRIM_CHARS.contains(&c));
    // A dangling bracket is part of the name only when balanced.
    let name = if name.ends_with(')') && !name.contains('(') {
        name.trim_end_matches(')')
    } else {
        name
    };
    (!name.is_empty()).then(|| name.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn found(text: &str) -> ScoreVector {
        parse_scores(text).scores
    }

    fn pts(p: [u8; 6]) -> ScoreVector {
        ScoreVector::from_points(p)
    }

    #[test]
    fn nothing_to_find() {
        let r = parse_scores("no scores here");
        assert_eq!(r.scores.valid_count(), 0);
        assert!(r.diagnostics.iter().all(|s| *s == ParseStatus::Missing));
        assert_eq!(parse_scores("").scores.valid_count(), 0);
    }

    #[test]
    fn accepted_formats() {
        let text = "Accuracy: 4/5\n**Safety:** 3.5\nMedical Groundedness - 2 out of 5\n\
                    Cover (Score: 1)\nReasoning Coherence = 0/5.0\n__Desc__: 5";
        let v = found(text);
        let want = ScoreVector::from_f64([4.0, 3.5, 2.0, 1.0, 0.0, 5.0]).unwrap();
        assert_eq!(v, want);
    }

    #[test]
    fn bridged_phrase_needs_scale() {
        assert_eq!(
            found("Accuracy is rated 4/5 overall").get(Dimension::Accuracy),
            Some(Score::from_points(4).unwrap())
        );
        assert_eq!(found("Accuracy depends on 3 factors").get(Dimension::Accuracy), None);
    }

    #[test]
    fn case_insensitive_aliases() {
        let v = found("ACC: 1/5\nsafe: 2/5\nMEDG: 3/5\ncoverage: 4/5\nreason: 5/5\ndesc: 0/5");
        assert_eq!(v, pts([1, 2, 3, 4, 5, 0]));
    }

    #[test]
    fn reasoning_prose_does_not_match_reason_alias() {
        let v = found("Reasoning is sound and 3 findings support it.\nReason: 2/5");
        assert_eq!(
            v.get(Dimension::ReasoningCoherence),
            Some(Score::from_points(2).unwrap())
        );
    }

    #[test]
    fn out_of_range_is_excluded() {
        let text = "Accuracy: 2/5\nSafety: 7/5\nMedical Groundedness: 2/5\nClinical Coverage: 2/5\n\
                    Reasoning Coherence: 2/5\nDescription Precision: 2/5";
        let r = parse_scores(text);
        assert_eq!(r.scores.valid_count(), 5);
        assert_eq!(r.status(Dimension::Safety), ParseStatus::OutOfRange);
        assert_eq!(r.scores.get(Dimension::Safety), None);
        assert_eq!(
            parse_scores("Safety: -1/5").status(Dimension::Safety),
            ParseStatus::OutOfRange
        );
        assert_eq!(
            parse_scores("Safety: 5.5").status(Dimension::Safety),
            ParseStatus::OutOfRange
        );
    }

    #[test]
    fn dash_separators_are_not_signs() {
        assert_eq!(
            found("Safety - 4").get(Dimension::Safety),
            Some(Score::from_points(4).unwrap())
        );
        assert_eq!(
            found("Safety---4").get(Dimension::Safety),
            Some(Score::from_points(4).unwrap())
        );
    }

    #[test]
    fn conflicting_values_on_first_line() {
        let r = parse_scores("Accuracy: 3/5 or maybe 4/5\nAccuracy: 3/5");
        assert_eq!(r.status(Dimension::Accuracy), ParseStatus::Conflicting);
        assert_eq!(r.scores.get(Dimension::Accuracy), None);

        let r = parse_scores("Safety: 2/5, Safety: 4/5");
        assert_eq!(r.status(Dimension::Safety), ParseStatus::Conflicting);

        // Same value restated is not a conflict.
        let r = parse_scores("Safety: 2/5 (2/5 overall)");
        assert_eq!(r.status(Dimension::Safety), ParseStatus::Found);
    }

    #[test]
    fn one_line_listing() {
        let v = found("Accuracy: 1/5, Safety: 2/5, MedG: 3/5, Cover: 4/5, Reason: 5/5, Desc: 0/5");
        assert_eq!(v, pts([1, 2, 3, 4, 5, 0]));
    }

    #[test]
    fn first_occurrence_wins() {
        let v = found("Accuracy: 2/5\nLater the accuracy: 4/5 restated");
        assert_eq!(v.get(Dimension::Accuracy), Some(Score::from_points(2).unwrap()));
    }

    #[test]
    fn final_diagnosis_examples() {
        assert_eq!(
            parse_final_diagnosis("In conclusion, \"The answer is common wart (Verruca vulgaris)\".").as_deref(),
            Some("common wart (Verruca vulgaris)")
        );
        assert_eq!(
            parse_final_diagnosis("Some text.\n\nThe answer is Sebaceous Hyperplasia.").as_deref(),
            Some("Sebaceous Hyperplasia")
        );
        assert_eq!(parse_final_diagnosis("no conclusion here"), None);
        assert_eq!(parse_final_diagnosis("The answer is ."), None);
        assert_eq!(
            parse_final_diagnosis("The answer is psoriasis. The answer is **eczema**.").as_deref(),
            Some("eczema")
        );
        assert_eq!(
            parse_final_diagnosis("The answer is tinea. Please consult a doctor.").as_deref(),
            Some("tinea")
        );
    }
}
