//! Confidence scorers and percentile thresholding.
//!
//! Every scorer ends in a normalized confidence in `[0, 1]` where higher means
//! more confident, so one keep-high rule serves all of them. Entropy is the
//! exception on the raw side (lower NLL is better); it is mapped through
//! `exp(-nll)`, the geometric mean of the token probabilities.

use serde::{Deserialize, Serialize};

use crate::backend::{CompletionRequest, LanguageModel};
use crate::embed::{cosine_similarity, Embedder};
use crate::error::{Error, Result};
use crate::parse::normalize_answer;
use crate::prompt::render_back_translation;
use crate::task::TaskSpec;
use crate::types::{LmResponse, ScorerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub scorer: ScorerKind,
    /// Scorer-native value: mean NLL, vote fraction, cosine or the verbalized score.
    pub raw: f64,
    pub confidence: f64,
    pub samples_used: usize,
}

impl ConfidenceReport {
    pub fn new(scorer: ScorerKind, raw: f64, confidence: f64, samples_used: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::degenerate(format!("{scorer} confidence {confidence} outside [0, 1]")));
        }
        if samples_used == 0 {
            return Err(Error::degenerate("confidence report without samples"));
        }
        Ok(ConfidenceReport {
            scorer,
            raw,
            confidence,
            samples_used,
        })
    }
}

/// Mean negative log-probability of the generated tokens.
pub fn entropy_nll(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(Error::degenerate("no token logprobs"));
    }
    if let Some(bad) = token_logprobs.iter().find(|lp| lp.is_nan() || **lp > 0.0) {
        return Err(Error::degenerate(format!("token logprob {bad} is not <= 0")));
    }
    let sum: f64 = token_logprobs.iter().sum();
    Ok(-sum / token_logprobs.len() as f64)
}

pub fn entropy_report(token_logprobs: &[f64]) -> Result<ConfidenceReport> {
    let nll = entropy_nll(token_logprobs)?;
    ConfidenceReport::new(ScorerKind::Entropy, nll, (-nll).exp(), 1)
}

/// Majority answer and its vote share. Answers are normalized before
/// counting; the majority is returned in the form it first appeared, and ties
/// go to the answer that occurred first.
pub fn self_consistency<S: AsRef<str>>(answers: &[S], task: &TaskSpec) -> Result<(String, f64)> {
    if answers.is_empty() {
        return Err(Error::degenerate("self-consistency needs at least one answer"));
    }
    let normalized: Vec<String> = answers.iter().map(|a| normalize_answer(task, a.as_ref())).collect();
    // (normalized answer, first index, count) in first-occurrence order
    let mut tally: Vec<(&str, usize, usize)> = Vec::new();
    for (i, n) in normalized.iter().enumerate() {
        match tally.iter_mut().find(|(key, _, _)| *key == n.as_str()) {
            Some(entry) => entry.2 += 1,
            None => tally.push((n, i, 1)),
        }
    }
    let mut best = tally[0];
    for entry in &tally[1..] {
        if entry.2 > best.2 {
            best = *entry;
        }
    }
    Ok((
        answers[best.1].as_ref().trim().to_string(),
        best.2 as f64 / answers.len() as f64,
    ))
}

/// Translates `translation` back with the dedicated prompt and compares the
/// round trip to `source` in embedding space. Negative cosines map to 0.
pub fn back_translation_confidence(
    source: &str,
    translation: &str,
    lm: &dyn LanguageModel,
    embedder: &dyn Embedder,
    task: &TaskSpec,
) -> Result<ConfidenceReport> {
    let prompt = render_back_translation(task, translation)?;
    let completion = lm
        .complete(&CompletionRequest::greedy(&prompt))?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Protocol("back-translation returned no completion".into()))?;
    let round_trip = completion.text.trim();
    if round_trip.is_empty() {
        return Err(Error::ParseFailure {
            raw: completion.text.clone(),
        });
    }
    let a = embedder.embed_text(round_trip)?;
    let b = embedder.embed_text(source)?;
    let cos = cosine_similarity(&a, &b)?;
    ConfidenceReport::new(ScorerKind::BackTranslation, cos, cos.clamp(0.0, 1.0), 1)
}

pub fn verbalized_confidence(resp: &LmResponse) -> Result<f64> {
    resp.verbalized_confidence.ok_or(Error::ScorerMissing("verbalized"))
}

/// Keeps the top `ceil(keep_fraction * N)` scores.
///
/// Scores are ranked descending with ties in input order; `lambda` is the
/// score of the last kept item. Kept indices are returned ascending.
pub fn percentile_threshold(scores: &[f64], keep_fraction: f64) -> Result<(f64, Vec<usize>)> {
    if scores.is_empty() {
        return Err(Error::degenerate("no scores to threshold"));
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::config(format!("keep_fraction {keep_fraction} outside (0, 1]")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::degenerate("NaN confidence"));
    }
    let n = scores.len();
    // the epsilon absorbs products like 0.1 * 30 = 3.0000000000000004
    let m = ((keep_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let lambda = scores[order[m - 1]];
    let mut kept = order[..m].to_vec();
    kept.sort_unstable();
    Ok((lambda, kept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Completion;
    use crate::embed::EmbeddingVector;
    use crate::util::close;

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy_nll(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        let r = entropy_report(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(r.confidence, 1.0);
        let half = 0.5f64.ln();
        let r = entropy_report(&[half, half]).unwrap();
        assert!(close(r.raw, std::f64::consts::LN_2, 1e-12));
        assert!(close(r.confidence, 0.5, 1e-12));
        assert!(entropy_nll(&[]).is_err());
        assert!(entropy_nll(&[0.1]).is_err());
    }

    #[test]
    fn self_consistency_examples() {
        let task = TaskSpec::freeform();
        let ten = vec!["x"; 10];
        assert_eq!(self_consistency(&ten, &task).unwrap(), ("x".to_string(), 1.0));
        let votes = ["a", "a", "a", "a", "a", "a", "b", "b", "b", "b"];
        assert_eq!(self_consistency(&votes, &task).unwrap(), ("a".to_string(), 0.6));
        assert_eq!(self_consistency(&["a", "b"], &task).unwrap(), ("a".to_string(), 0.5));
        assert_eq!(self_consistency(&["b", "a"], &task).unwrap(), ("b".to_string(), 0.5));
        assert_eq!(self_consistency(&["Yes.", "yes", "no"], &task).unwrap(), ("Yes.".to_string(), 2.0 / 3.0));
        assert!(self_consistency::<&str>(&[], &task).is_err());
    }

    #[test]
    fn percentile_examples() {
        let scores: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(percentile_threshold(&scores, 0.1).unwrap(), (1.0, vec![9]));
        assert_eq!(percentile_threshold(&[0.5; 4], 0.5).unwrap(), (0.5, vec![0, 1]));
        assert_eq!(percentile_threshold(&[0.3], 0.01).unwrap(), (0.3, vec![0]));
        assert_eq!(percentile_threshold(&[0.2; 30], 0.1).unwrap().1.len(), 3);
        assert!(percentile_threshold(&[], 0.1).is_err());
        assert!(percentile_threshold(&[0.1], 0.0).is_err());
        assert!(percentile_threshold(&[0.1], 1.5).is_err());
    }

    #[test]
    fn verbalized_passthrough() {
        let mut resp = LmResponse {
            text: "x".into(),
            token_logprobs: None,
            prediction: "x".into(),
            rationale: None,
            verbalized_confidence: Some(0.9),
        };
        assert_eq!(verbalized_confidence(&resp).unwrap(), 0.9);
        resp.verbalized_confidence = Some(0.0);
        assert_eq!(verbalized_confidence(&resp).unwrap(), 0.0);
        resp.verbalized_confidence = None;
        assert!(matches!(verbalized_confidence(&resp), Err(Error::ScorerMissing(_))));
    }

    struct Echo(&'static str);

    impl LanguageModel for Echo {
        fn identity(&self) -> &str {
            "echo"
        }

        fn complete(&self, _: &CompletionRequest<'_>) -> Result<Vec<Completion>> {
            Ok(vec![Completion {
                text: self.0.to_string(),
                token_logprobs: None,
            }])
        }
    }

    struct Fixed;

    impl Embedder for Fixed {
        fn identity(&self) -> &str {
            "fixed"
        }

        fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
            let v = match text {
                "src" => vec![1.0, 0.0],
                "diag" => vec![1.0, 1.0],
                "orth" => vec![0.0, 1.0],
                "anti" => vec![-1.0, 0.0],
                _ => vec![1.0, 0.0],
            };
            Ok(EmbeddingVector::new(v, "fixed"))
        }
    }

    #[test]
    fn back_translation_examples() {
        let task = TaskSpec::translation("English", "French");
        let c = |bt| back_translation_confidence("src", "t", &Echo(bt), &Fixed, &task).unwrap();
        assert_eq!(c("src").confidence, 1.0);
        assert_eq!(c("orth").confidence, 0.0);
        assert!(close(c("diag").confidence, std::f64::consts::FRAC_1_SQRT_2, 1e-12));
        let anti = c("anti");
        assert_eq!((anti.raw, anti.confidence), (-1.0, 0.0));
        let cls = TaskSpec::classification(["a"]);
        assert!(back_translation_confidence("src", "t", &Echo("x"), &Fixed, &cls).is_err());
    }
}
