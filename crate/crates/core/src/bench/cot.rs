//! Normalization of generated reasoning into the hierarchical
//! chain-of-thought form: balanced `<think>` observation blocks, prose in
//! between, and the "The answer is ..." sentence last.

use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NormalizeError {
    #[error("narrative is empty")]
    Empty,
    #[error("unclosed {THINK_OPEN} at line {line}, column {column}")]
    Unclosed { line: usize, column: usize },
    #[error("{THINK_CLOSE} without an opening tag at line {line}, column {column}")]
    Unopened { line: usize, column: usize },
    #[error("nested {THINK_OPEN} at line {line}, column {column}")]
    Nested { line: usize, column: usize },
}

static TAG_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"</?think>").expect("tag regex"));
static MARKER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bthe answer is\b").expect("marker regex"));
static SENTENCE_END_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"[.!?]["'”’*)]*(?:[ \t]|\n|$)"#).expect("sentence end regex"));
static BLANK_RUN_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\n[ \t]*\n(?:[ \t]*\n)+").expect("blank run regex"));

fn location(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |i| offset - i - 1) + 1;
    (line, column)
}

/// Byte ranges of the think blocks, tags included.
fn think_spans(text: &str) -> Result<Vec<Range<usize>>, NormalizeError> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for m in TAG_RE.find_iter(text) {
        let (line, column) = location(text, m.start());
        match (m.as_str() == THINK_OPEN, open) {
            (true, None) => open = Some(m.start()),
            (true, Some(_)) => return Err(NormalizeError::Nested { line, column }),
            (false, Some(start)) => {
                spans.push(start..m.end());
                open = None;
            }
            (false, None) => return Err(NormalizeError::Unopened { line, column }),
        }
    }
    if let Some(start) = open {
        let (line, column) = location(text, start);
        return Err(NormalizeError::Unclosed { line, column });
    }
    Ok(spans)
}

/// Range of the sentence around the last answer marker outside think blocks.
fn answer_sentence(text: &str, spans: &[Range<usize>]) -> Option<Range<usize>> {
    let inside = |pos: usize| spans.iter().any(|s| s.contains(&pos));
    let marker = MARKER_RE.find_iter(text).filter(|m| !inside(m.start())).last()?;

    let floor = spans
        .iter()
        .map(|s| s.end)
        .filter(|&e| e <= marker.start())
        .max()
        .unwrap_or(0);
    let head = &text[floor..marker.start()];
    let mut start = floor + head.rfind('\n').map_or(0, |i| i + 1);
    if let Some(prev) = SENTENCE_END_RE.find_iter(&text[start..marker.start()]).last() {
        start += prev.end();
    }
    while text[start..].starts_with([' ', '\t']) {
        start += 1;
    }

    let ceiling = spans
        .iter()
        .map(|s| s.start)
        .filter(|&s| s >= marker.end())
        .min()
        .unwrap_or(text.len());
    let tail = &text[marker.end()..ceiling];
    let line_end = tail.find('\n').unwrap_or(tail.len());
    let end = SENTENCE_END_RE
        .find(&tail[..line_end])
        .map_or(line_end, |m| m.as_str().trim_end().len() + m.start());
    Some(start..marker.end() + end)
}

/// Validates think blocks and moves the answer sentence to the end.
/// Idempotent on normalized text; text without an answer sentence is only
/// trimmed.
pub fn normalize_cot(raw: &str) -> Result<String, NormalizeError> {
    let text = raw.replace("\r\n", "\n");
    let text = text.trim();
    if text.is_empty() {
        return Err(NormalizeError::Empty);
    }
    let spans = think_spans(text)?;
    let Some(sentence) = answer_sentence(text, &spans) else {
        return Ok(text.to_string());
    };
    if text[sentence.end..].trim().is_empty() {
        return Ok(text.to_string());
    }
    let head = text[..sentence.start].trim_end_matches([' ', '\t']);
    let tail = text[sentence.end..].trim_start_matches([' ', '\t']);
    let joined = if head.is_empty() || head.ends_with('\n') || tail.starts_with('\n') {
        format!("{head}{tail}")
    } else {
        format!("{head} {tail}")
    };
    let body = BLANK_RUN_RE.replace_all(joined.trim(), "\n\n");
    Ok(format!("{body}\n\n{}", text[sentence].trim()))
}
