//! Deterministic language-model simulator.
//!
//! `SimLm` reads the same rendered prompts a real backend would see. It
//! recovers the query and demonstration ids from `[id:...]` markers that the
//! fixture generator embeds in every input, scores the demonstrations against
//! its answer key and answers correctly with probability
//!
//! ```text
//! p = clamp(p0 + d(id) + gain * (correct_demos - wrong_penalty * wrong_demos), 0.01, p_max)
//! ```
//!
//! where `d(id)` is a fixed per-example difficulty offset drawn uniformly from
//! `[-difficulty_spread, difficulty_spread]`. Every random draw comes from a
//! stream keyed by `(seed, example id, sample index)`, so outputs never depend
//! on scheduling. The verbalized confidence is `p` plus Gaussian noise, and the
//! synthetic token logprobs average to `ln(confidence)`.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Completion, CompletionRequest, LanguageModel};
use crate::error::{Error, Result};
use crate::prompt::{demo_markers, BACK_TRANSLATION_HEADER, SECTION_RULE};
use crate::task::{TaskFamily, TaskSpec};
use crate::types::TokenLogprob;
use crate::util::keyed_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub p0: f64,
    pub gain: f64,
    pub wrong_penalty: f64,
    pub conf_noise: f64,
    pub p_max: f64,
    pub difficulty_spread: f64,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            p0: 0.6,
            gain: 0.004,
            wrong_penalty: 1.0,
            conf_noise: 0.05,
            p_max: 0.99,
            difficulty_spread: 0.3,
            seed: 0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p0 > 0.0 && self.p0 <= self.p_max && self.p_max < 1.0) {
            return Err(Error::config("simulator needs 0 < p0 <= p_max < 1"));
        }
        if self.conf_noise.is_nan() || self.conf_noise < 0.0 || self.difficulty_spread.is_nan() || self.difficulty_spread < 0.0 {
            return Err(Error::config("simulator noise and spread must be >= 0"));
        }
        if !self.gain.is_finite() || !self.wrong_penalty.is_finite() {
            return Err(Error::config("simulator gain and penalty must be finite"));
        }
        Ok(())
    }
}

pub struct SimLm {
    task: TaskSpec,
    params: SimParams,
    truth: HashMap<String, String>,
    sources: HashMap<String, String>,
    identity: String,
    input_marker: String,
    answer_marker: String,
}

/// Finds the first `[id:...]` marker in `text`.
pub(crate) fn find_id(text: &str) -> Option<&str> {
    let start = text.find("[id:")? + 4;
    let len = text[start..].find(']')?;
    Some(text[start..start + len].trim()).filter(|s| !s.is_empty())
}

impl SimLm {
    /// `truth` maps example ids to gold answers; `sources` maps ids to inputs
    /// and is only needed for back-translation.
    pub fn new(
        task: TaskSpec,
        params: SimParams,
        truth: HashMap<String, String>,
        sources: HashMap<String, String>,
    ) -> Result<Self> {
        task.validate()?;
        params.validate()?;
        let identity = format!(
            "sim:seed={}:p0={}:gain={}:beta={}:sigma={}:pmax={}:spread={}",
            params.seed,
            params.p0,
            params.gain,
            params.wrong_penalty,
            params.conf_noise,
            params.p_max,
            params.difficulty_spread
        );
        let (input_marker, answer_marker) = demo_markers(&task);
        Ok(SimLm {
            task,
            params,
            truth,
            sources,
            identity,
            input_marker,
            answer_marker,
        })
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    fn split_prompt<'p>(&self, prompt: &'p str) -> (&'p str, &'p str) {
        let mut cut = None;
        let mut offset = 0;
        for line in prompt.split_inclusive('\n') {
            if line.trim() == SECTION_RULE {
                cut = Some((offset, offset + line.len()));
            }
            offset += line.len();
        }
        match cut {
            Some((a, b)) => (&prompt[..a], &prompt[b..]),
            None => ("", prompt),
        }
    }

    /// `(correct, wrong)` counts over demonstrations with known ids.
    fn score_demos(&self, region: &str) -> (usize, usize) {
        let (mut correct, mut wrong) = (0, 0);
        let mut current: Option<&str> = None;
        for line in region.lines() {
            if let Some(rest) = line.strip_prefix(&self.input_marker) {
                current = find_id(rest);
            } else if let Some(prediction) = line.strip_prefix(&self.answer_marker) {
                if let Some(gold) = current.take().and_then(|id| self.truth.get(id)) {
                    if self.task.equivalent(prediction.trim(), gold) {
                        correct += 1;
                    } else {
                        wrong += 1;
                    }
                }
            }
        }
        (correct, wrong)
    }

    fn difficulty(&self, id: &str) -> f64 {
        if self.params.difficulty_spread == 0.0 {
            return 0.0;
        }
        let u: f64 = keyed_rng(self.params.seed, &[b"difficulty", id.as_bytes()]).random();
        self.params.difficulty_spread * (2.0 * u - 1.0)
    }

    fn probability(&self, id: &str, correct: usize, wrong: usize) -> f64 {
        let effective = correct as f64 - self.params.wrong_penalty * wrong as f64;
        (self.params.p0 + self.difficulty(id) + self.params.gain * effective)
            .clamp(0.01, self.params.p_max)
    }

    /// The probability that the answer to `prompt` is correct.
    pub fn correct_probability(&self, prompt: &str) -> Result<f64> {
        let (demos, query) = self.split_prompt(prompt);
        let id = find_id(query).ok_or_else(|| Error::UnknownFixture("<no id marker>".into()))?;
        if !self.truth.contains_key(id) {
            return Err(Error::UnknownFixture(id.to_string()));
        }
        let (c, w) = self.score_demos(demos);
        Ok(self.probability(id, c, w))
    }

    fn wrong_answer(&self, gold: &str, rng: &mut impl Rng) -> String {
        match self.task.task_family {
            TaskFamily::Classification => {
                let others: Vec<&String> = self
                    .task
                    .labels()
                    .iter()
                    .filter(|l| !self.task.equivalent(l, gold))
                    .collect();
                others
                    .choose(rng)
                    .map_or_else(|| gold.to_string(), |l| (*l).clone())
            }
            TaskFamily::Translation => corrupt(gold, rng),
            TaskFamily::Freeform => format!("{gold} (alt {})", rng.random_range(1..=3)),
        }
    }

    fn render(&self, rationale: Option<&str>, answer: &str, confidence: f64) -> String {
        let mut text = String::new();
        if let Some(r) = rationale {
            text.push_str(r);
            text.push('\n');
        }
        match self.task.task_family {
            TaskFamily::Classification => text.push_str(&format!("Label: {answer}\n")),
            TaskFamily::Translation => {
                text.push_str(&format!("{}: {answer}\n", self.task.target_lang()))
            }
            TaskFamily::Freeform => text.push_str(&format!("Answer: {answer}\n")),
        }
        text.push_str(&format!("**Confidence**: {confidence}"));
        text
    }

    fn sample(&self, id: &str, gold: &str, p: f64, stream: usize, logprobs: bool) -> Completion {
        let mut rng = keyed_rng(
            self.params.seed,
            &[b"answer", id.as_bytes(), &(stream as u64).to_le_bytes()],
        );
        let correct = rng.random::<f64>() < p;
        let answer = if correct {
            gold.to_string()
        } else {
            self.wrong_answer(gold, &mut rng)
        };
        let noise = if self.params.conf_noise > 0.0 {
            Normal::new(0.0, self.params.conf_noise)
                .expect("validated sigma")
                .sample(&mut rng)
        } else {
            0.0
        };
        let confidence = (p + noise).clamp(0.0, 1.0);
        let rationale = (self.task.task_family == TaskFamily::Freeform)
            .then_some("Let me work through this step by step.");
        let text = self.render(rationale, &answer, confidence);
        let token_logprobs = logprobs.then(|| {
            let base = confidence.max(1e-9).ln();
            answer
                .split_whitespace()
                .map(|tok| TokenLogprob {
                    token: tok.to_string(),
                    logprob: (base + rng.random_range(-0.02..0.02)).min(0.0),
                })
                .collect()
        });
        Completion {
            text,
            token_logprobs,
        }
    }

    fn back_translate(&self, prompt: &str) -> Result<Vec<Completion>> {
        let marker = format!("{}:", self.task.target_lang());
        let text = prompt
            .lines()
            .skip(1)
            .find_map(|l| l.strip_prefix(&marker))
            .map(str::trim)
            .ok_or_else(|| Error::UnknownFixture("<no back-translation input>".into()))?;
        let id = find_id(text).ok_or_else(|| Error::UnknownFixture("<no id marker>".into()))?;
        let source = self
            .sources
            .get(id)
            .ok_or_else(|| Error::UnknownFixture(id.to_string()))?;
        let gold = self
            .truth
            .get(id)
            .ok_or_else(|| Error::UnknownFixture(id.to_string()))?;
        let out = if self.task.equivalent(text, gold) {
            source.clone()
        } else {
            let mut rng = keyed_rng(self.params.seed, &[b"back", id.as_bytes(), text.as_bytes()]);
            corrupt(source, &mut rng)
        };
        Ok(vec![Completion {
            text: out,
            token_logprobs: None,
        }])
    }
}

/// Drops one word (or appends a token to single-word text), keeping any
/// leading `[id:...]` marker intact. Never returns the input unchanged.
fn corrupt(text: &str, rng: &mut impl Rng) -> String {
    let (marker, body) = match (text.find("[id:"), text.find(']')) {
        (Some(0), Some(end)) => (&text[..=end], &text[end + 1..]),
        _ => ("", text),
    };
    let mut words: Vec<&str> = body.split_whitespace().collect();
    if words.len() >= 2 {
        let drop = rng.random_range(0..words.len());
        words.remove(drop);
    } else {
        words.push("~");
    }
    let mut out = marker.to_string();
    if !marker.is_empty() {
        out.push(' ');
    }
    out.push_str(&words.join(" "));
    if out == text {
        out.push_str(" ~");
    }
    out
}

impl LanguageModel for SimLm {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Vec<Completion>> {
        if req.prompt.trim().is_empty() {
            return Err(Error::degenerate("empty prompt"));
        }
        if req.prompt.starts_with(BACK_TRANSLATION_HEADER) {
            return self.back_translate(req.prompt);
        }
        let (demos, query) = self.split_prompt(req.prompt);
        let id = find_id(query).ok_or_else(|| Error::UnknownFixture("<no id marker>".into()))?;
        let gold = self
            .truth
            .get(id)
            .ok_or_else(|| Error::UnknownFixture(id.to_string()))?;
        let (c, w) = self.score_demos(demos);
        let p = self.probability(id, c, w);
        let n = req.n.max(1);
        Ok((0..n)
            .map(|i| {
                let stream = if req.temperature > 0.0 { i } else { 0 };
                self.sample(id, gold, p, stream, req.logprobs)
            })
            .collect())
    }
}
