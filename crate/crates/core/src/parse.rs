//! Completion parsing: answer extraction, rationale capture and verbalized
//! confidence.

use crate::error::{Error, Result};
use crate::prompt::{CLASSIFICATION_ANSWER_MARKER, RATIONALE_MARKER};
use crate::task::{Equivalence, TaskFamily, TaskSpec};
use crate::types::{LmResponse, TokenLogprob};

const CONFIDENCE_TAG: &str = "**Confidence**:";

fn is_edge_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '«' | '»' | '…' | '。' | '、')
}

/// Lowercases, collapses whitespace and trims surrounding punctuation.
pub fn normalize_text(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed
        .trim_matches(|c: char| is_edge_punct(c) || c.is_whitespace())
        .to_string()
}

/// [`normalize_text`], then mapping onto the canonical label under label matching.
pub fn normalize_answer(task: &TaskSpec, text: &str) -> String {
    let norm = normalize_text(text);
    if task.equivalence == Equivalence::LabelMatch {
        if let Some(label) = task.labels().iter().find(|l| normalize_text(l) == norm) {
            return label.clone();
        }
    }
    norm
}

fn is_confidence_line(line: &str) -> bool {
    line.trim_start().starts_with(CONFIDENCE_TAG)
}

/// The value after the last `**Confidence**:` tag, when it is a number in [0, 1].
///
/// A trailing `%` divides by 100. Anything else (missing tag, garbage, out of
/// range) yields `None`.
pub fn parse_confidence(raw: &str) -> Option<f64> {
    let pos = raw.rfind(CONFIDENCE_TAG)?;
    let tail = raw[pos + CONFIDENCE_TAG.len()..].trim_start();
    let end = tail
        .char_indices()
        .find(|&(_, c)| !(c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-')))
        .map_or(tail.len(), |(i, _)| i);
    let number = tail[..end].trim_end_matches(['.', 'e', 'E', '+', '-']);
    let mut value: f64 = number.parse().ok()?;
    if tail[end..].starts_with('%') {
        value /= 100.0;
    }
    (value.is_finite() && (0.0..=1.0).contains(&value)).then_some(value)
}

fn strip_marker<'a>(line: &'a str, marker: &str) -> Option<&'a str> {
    let trimmed = line.trim().trim_start_matches('*').trim_start();
    let head = trimmed.get(..marker.len())?;
    if head.eq_ignore_ascii_case(marker) {
        Some(trimmed[marker.len()..].trim_start_matches('*').trim())
    } else {
        let bold = format!("{}**", marker.trim_end_matches(':'));
        let head = trimmed.get(..bold.len())?;
        head.eq_ignore_ascii_case(&bold).then(|| {
            trimmed[bold.len()..]
                .trim_start()
                .trim_start_matches(':')
                .trim()
        })
    }
}

struct Extraction {
    prediction: String,
    /// Index of the line holding the answer; lines before it form the rationale.
    line: usize,
}

fn extract_classification(task: &TaskSpec, lines: &[&str]) -> Option<Extraction> {
    let labels: Vec<(String, &String)> =
        task.labels().iter().map(|l| (normalize_text(l), l)).collect();
    for (i, line) in lines.iter().enumerate().rev() {
        if is_confidence_line(line) {
            continue;
        }
        let candidate = strip_marker(line, CLASSIFICATION_ANSWER_MARKER).unwrap_or(line);
        let norm = normalize_text(candidate);
        if let Some((_, label)) = labels.iter().find(|(n, _)| *n == norm) {
            return Some(Extraction {
                prediction: (*label).clone(),
                line: i,
            });
        }
    }
    None
}

fn extract_translation(task: &TaskSpec, lines: &[&str]) -> Option<Extraction> {
    let target = format!("{}:", task.target_lang());
    let source = format!("{}:", task.source_lang());
    for (i, line) in lines.iter().enumerate().rev() {
        if let Some(rest) = strip_marker(line, &target) {
            if !rest.is_empty() {
                return Some(Extraction {
                    prediction: rest.to_string(),
                    line: i,
                });
            }
            let next = lines[i + 1..]
                .iter()
                .enumerate()
                .find(|(_, l)| !l.trim().is_empty() && !is_confidence_line(l));
            if let Some((j, l)) = next {
                return Some(Extraction {
                    prediction: l.trim().to_string(),
                    line: i + 1 + j,
                });
            }
        }
    }
    last_plain_line(lines, |l| strip_marker(l, &source).is_none())
}

fn extract_freeform(lines: &[&str]) -> Option<Extraction> {
    for (i, line) in lines.iter().enumerate().rev() {
        let answer = strip_marker(line, "Final Answer:").or_else(|| strip_marker(line, "Answer:"));
        if let Some(rest) = answer.filter(|r| !r.is_empty()) {
            return Some(Extraction {
                prediction: rest.to_string(),
                line: i,
            });
        }
    }
    last_plain_line(lines, |_| true)
}

fn last_plain_line(lines: &[&str], accept: impl Fn(&str) -> bool) -> Option<Extraction> {
    lines
        .iter()
        .enumerate()
        .rev()
        .find(|(_, l)| !l.trim().is_empty() && !is_confidence_line(l) && accept(l))
        .map(|(i, l)| Extraction {
            prediction: l.trim().to_string(),
            line: i,
        })
}

fn rationale(lines: &[&str]) -> Option<String> {
    let kept: Vec<&str> = lines
        .iter()
        .filter(|l| !is_confidence_line(l))
        .map(|l| strip_marker(l, RATIONALE_MARKER).unwrap_or(l))
        .collect();
    let text = kept.join("\n");
    let text = text.trim();
    (!text.is_empty()).then(|| text.to_string())
}

/// Parses a raw completion for `task`.
///
/// The prediction only ever comes from `raw`; logprobs are carried through
/// untouched. A missing or malformed confidence is not an error.
pub fn parse_response(
    task: &TaskSpec,
    raw: &str,
    logprobs: Option<Vec<TokenLogprob>>,
) -> Result<LmResponse> {
    if raw.trim().is_empty() {
        return Err(Error::ParseFailure { raw: raw.to_string() });
    }
    if let Some(lp) = &logprobs {
        if let Some(bad) = lp.iter().find(|t| t.logprob.is_nan() || t.logprob > 0.0) {
            return Err(Error::Protocol(format!(
                "token {:?} has logprob {} > 0",
                bad.token, bad.logprob
            )));
        }
    }
    let lines: Vec<&str> = raw.lines().collect();
    let extraction = match task.task_family {
        TaskFamily::Classification => extract_classification(task, &lines),
        TaskFamily::Translation => extract_translation(task, &lines),
        TaskFamily::Freeform => extract_freeform(&lines),
    }
    .filter(|e| !e.prediction.trim().is_empty())
    .ok_or_else(|| Error::ParseFailure { raw: raw.to_string() })?;

    Ok(LmResponse {
        text: raw.to_string(),
        token_logprobs: logprobs,
        prediction: extraction.prediction,
        rationale: rationale(&lines[..extraction.line]),
        verbalized_confidence: parse_confidence(raw),
    })
}
