//! Task descriptions and answer equivalence.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parse::normalize_answer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFamily {
    Classification,
    Translation,
    Freeform,
}

impl std::fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskFamily::Classification => "classification",
            TaskFamily::Translation => "translation",
            TaskFamily::Freeform => "freeform",
        })
    }
}

/// How two answers are compared once normalized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Equivalence {
    ExactNormalized,
    LabelMatch,
    /// A named comparison from [`equivalence_registry`].
    Custom(String),
}

type EquivFn = fn(&str, &str) -> bool;

/// Built-in named comparisons usable through [`Equivalence::Custom`].
pub fn equivalence_registry(key: &str) -> Option<EquivFn> {
    match key {
        "numeric" => Some(numeric_equal),
        "case-sensitive" => Some(|a, b| a.trim() == b.trim()),
        _ => None,
    }
}

fn numeric_equal(a: &str, b: &str) -> bool {
    let parse = |s: &str| s.trim().replace(',', "").parse::<f64>().ok();
    match (parse(a), parse(b)) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0),
        _ => normalize_plain(a) == normalize_plain(b),
    }
}

fn normalize_plain(s: &str) -> String {
    crate::parse::normalize_text(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_family: TaskFamily,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    #[serde(default)]
    pub source_lang: Option<String>,
    #[serde(default)]
    pub target_lang: Option<String>,
    pub instruction: String,
    pub equivalence: Equivalence,
    /// Replaces the built-in prompt template for this family.
    #[serde(default)]
    pub template: Option<String>,
}

pub const CLASSIFICATION_INSTRUCTION: &str = "You are a helpful assistant who is capable of performing a classification task (mapping an Input to a Label) with the following possible labels:";
pub const TRANSLATION_INSTRUCTION: &str = "You are an expert translator. I am going to give you zero or more example pairs of text snippets where the first is in the source language and the second is a translation of the first snippet into the target language. The sentences will be written in the following format:";
pub const FREEFORM_INSTRUCTION: &str =
    "First, I am going to give you a series of Questions that are like the one you will be solving.";

impl TaskSpec {
    pub fn classification<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Self {
        TaskSpec {
            task_family: TaskFamily::Classification,
            labels: Some(labels.into_iter().map(Into::into).collect()),
            source_lang: None,
            target_lang: None,
            instruction: CLASSIFICATION_INSTRUCTION.to_string(),
            equivalence: Equivalence::LabelMatch,
            template: None,
        }
    }

    pub fn translation(source: impl Into<String>, target: impl Into<String>) -> Self {
        TaskSpec {
            task_family: TaskFamily::Translation,
            labels: None,
            source_lang: Some(source.into()),
            target_lang: Some(target.into()),
            instruction: TRANSLATION_INSTRUCTION.to_string(),
            equivalence: Equivalence::ExactNormalized,
            template: None,
        }
    }

    pub fn freeform() -> Self {
        TaskSpec {
            task_family: TaskFamily::Freeform,
            labels: None,
            source_lang: None,
            target_lang: None,
            instruction: FREEFORM_INSTRUCTION.to_string(),
            equivalence: Equivalence::ExactNormalized,
            template: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.instruction.trim().is_empty() {
            return Err(Error::config("task instruction is empty"));
        }
        match self.task_family {
            TaskFamily::Classification => {
                let labels = self
                    .labels
                    .as_ref()
                    .filter(|l| !l.is_empty())
                    .ok_or_else(|| Error::config("classification task needs a non-empty label set"))?;
                let mut seen = HashSet::new();
                for label in labels {
                    if label.trim().is_empty() {
                        return Err(Error::config("empty label in label set"));
                    }
                    if !seen.insert(normalize_plain(label)) {
                        return Err(Error::config(format!("duplicate label {label:?}")));
                    }
                }
            }
            TaskFamily::Translation => {
                for (what, lang) in [("source", &self.source_lang), ("target", &self.target_lang)] {
                    if lang.as_deref().is_none_or(|l| l.trim().is_empty()) {
                        return Err(Error::config(format!(
                            "translation task needs a {what} language name"
                        )));
                    }
                }
            }
            TaskFamily::Freeform => {}
        }
        if let Equivalence::Custom(key) = &self.equivalence {
            if equivalence_registry(key).is_none() {
                return Err(Error::config(format!("unknown equivalence key {key:?}")));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> &[String] {
        self.labels.as_deref().unwrap_or(&[])
    }

    pub fn source_lang(&self) -> &str {
        self.source_lang.as_deref().unwrap_or("")
    }

    pub fn target_lang(&self) -> &str {
        self.target_lang.as_deref().unwrap_or("")
    }

    /// Compares two raw answers under this task's equivalence rule.
    pub fn equivalent(&self, a: &str, b: &str) -> bool {
        match &self.equivalence {
            Equivalence::ExactNormalized | Equivalence::LabelMatch => {
                normalize_answer(self, a) == normalize_answer(self, b)
            }
            Equivalence::Custom(key) => match equivalence_registry(key) {
                Some(f) => f(a, b),
                None => normalize_answer(self, a) == normalize_answer(self, b),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_requires_unique_labels() {
        assert!(TaskSpec::classification(["a", "b"]).validate().is_ok());
        assert!(TaskSpec::classification(Vec::<String>::new()).validate().is_err());
        assert!(TaskSpec::classification(["Refund", "refund"]).validate().is_err());
    }

    #[test]
    fn translation_requires_languages() {
        assert!(TaskSpec::translation("English", "Fijian").validate().is_ok());
        assert!(TaskSpec::translation("English", " ").validate().is_err());
    }

    #[test]
    fn empty_instruction_rejected() {
        let mut t = TaskSpec::freeform();
        t.instruction = "  ".into();
        assert!(t.validate().is_err());
    }

    #[test]
    fn custom_equivalence() {
        let mut t = TaskSpec::freeform();
        t.equivalence = Equivalence::Custom("numeric".into());
        assert!(t.validate().is_ok());
        assert!(t.equivalent("1,000", "1000.0"));
        assert!(!t.equivalent("3", "4"));
        t.equivalence = Equivalence::Custom("nope".into());
        assert!(t.validate().is_err());
    }

    #[test]
    fn serde_shape() {
        let t = TaskSpec::classification(["x"]);
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains("\"task_family\":\"classification\""));
        assert!(json.contains("\"equivalence\":\"label-match\""));
        let back: TaskSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }
}
