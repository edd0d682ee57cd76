//! Records that flow through the pipeline.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One dataset item. `gold` is absent for genuinely unlabeled data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
}

impl Example {
    pub fn new(id: impl Into<String>, input: impl Into<String>) -> Self {
        Example {
            id: id.into(),
            input: input.into(),
            gold: None,
        }
    }

    pub fn labeled(id: impl Into<String>, input: impl Into<String>, gold: impl Into<String>) -> Self {
        Example {
            id: id.into(),
            input: input.into(),
            gold: Some(gold.into()),
        }
    }
}

/// Checks the per-dataset invariants: unique ids and non-empty inputs.
pub fn validate_examples(examples: &[Example]) -> Result<()> {
    let mut seen = HashSet::with_capacity(examples.len());
    for ex in examples {
        if ex.input.trim().is_empty() {
            return Err(Error::config(format!("example {:?} has an empty input", ex.id)));
        }
        if !seen.insert(ex.id.as_str()) {
            return Err(Error::config(format!("duplicate example id {:?}", ex.id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    Verbalized,
    Entropy,
    SelfConsistency,
    BackTranslation,
}

impl ScorerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScorerKind::Verbalized => "verbalized",
            ScorerKind::Entropy => "entropy",
            ScorerKind::SelfConsistency => "self-consistency",
            ScorerKind::BackTranslation => "back-translation",
        }
    }
}

impl std::fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "verbalized" => Ok(ScorerKind::Verbalized),
            "entropy" => Ok(ScorerKind::Entropy),
            "self-consistency" => Ok(ScorerKind::SelfConsistency),
            "back-translation" => Ok(ScorerKind::BackTranslation),
            other => Err(Error::config(format!("unknown scorer {other:?}"))),
        }
    }
}

/// An unlabeled input annotated by the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoDemonstration {
    pub example_id: String,
    pub input: String,
    pub prediction: String,
    pub rationale: Option<String>,
    pub confidence: f64,
    pub scorer: ScorerKind,
    pub iteration: u32,
    pub created_by: String,
}

impl PseudoDemonstration {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::degenerate(format!(
                "confidence {} of {:?} outside [0, 1]",
                self.confidence, self.example_id
            )));
        }
        if self.prediction.trim().is_empty() {
            return Err(Error::degenerate(format!("empty prediction for {:?}", self.example_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    GroundTruth,
    Pseudo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demo {
    pub example_id: String,
    pub input: String,
    pub output: String,
    pub rationale: Option<String>,
    pub origin: Origin,
}

impl From<&PseudoDemonstration> for Demo {
    fn from(p: &PseudoDemonstration) -> Self {
        Demo {
            example_id: p.example_id.clone(),
            input: p.input.clone(),
            output: p.prediction.clone(),
            rationale: p.rationale.clone(),
            origin: Origin::Pseudo,
        }
    }
}

/// Ordered demonstrations rendered into a prompt. Example ids are unique.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DemoSet {
    demos: Vec<Demo>,
    ids: HashSet<String>,
}

impl DemoSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds the ground-truth set; every example must carry a gold answer.
    pub fn from_ground_truth(examples: &[Example]) -> Result<Self> {
        let mut set = DemoSet::new();
        for ex in examples {
            let gold = ex.gold.clone().ok_or_else(|| {
                Error::config(format!("ground-truth example {:?} has no gold answer", ex.id))
            })?;
            set.push(Demo {
                example_id: ex.id.clone(),
                input: ex.input.clone(),
                output: gold,
                rationale: None,
                origin: Origin::GroundTruth,
            })?;
        }
        Ok(set)
    }

    pub fn push(&mut self, demo: Demo) -> Result<()> {
        if !self.ids.insert(demo.example_id.clone()) {
            return Err(Error::config(format!(
                "duplicate example id {:?} in demonstration set",
                demo.example_id
            )));
        }
        self.demos.push(demo);
        Ok(())
    }

    pub fn extend_pseudo<'a>(&mut self, pseudo: impl IntoIterator<Item = &'a PseudoDemonstration>) -> Result<()> {
        for p in pseudo {
            self.push(Demo::from(p))?;
        }
        Ok(())
    }

    /// Appends `other` after `self`, keeping the order of both.
    pub fn concat(&self, other: &DemoSet) -> Result<DemoSet> {
        let mut out = self.clone();
        for d in other.iter() {
            out.push(d.clone())?;
        }
        Ok(out)
    }

    pub fn contains(&self, example_id: &str) -> bool {
        self.ids.contains(example_id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Demo> {
        self.demos.iter()
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.demos.iter().filter(|d| d.origin == origin).count()
    }
}

impl<'a> IntoIterator for &'a DemoSet {
    type Item = &'a Demo;
    type IntoIter = std::slice::Iter<'a, Demo>;

    fn into_iter(self) -> Self::IntoIter {
        self.demos.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

/// A parsed completion.
#[derive(Debug, Clone, PartialEq)]
pub struct LmResponse {
    pub text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub prediction: String,
    pub rationale: Option<String>,
    pub verbalized_confidence: Option<f64>,
}
