//! On-disk dataset layout.
//!
//! A dataset is a directory holding `task.toml` (a [`TaskSpec`]),
//! `unlabeled.jsonl`, and optionally `train.jsonl` (ground-truth
//! demonstrations), `test.jsonl` and `embeddings.jsonl` (precomputed vectors
//! in the embedding-cache format).

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use crate::embed::EmbeddingCache;
use crate::error::{Error, Result};
use crate::store::read_jsonl;
use crate::task::TaskSpec;
use crate::types::{validate_examples, Example};

pub const TASK_FILE: &str = "task.toml";
pub const UNLABELED_FILE: &str = "unlabeled.jsonl";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub task: TaskSpec,
    pub unlabeled: Vec<Example>,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub embeddings: Option<EmbeddingCache>,
}

fn optional_split(dir: &Path, name: &str) -> Result<Vec<Example>> {
    let path = dir.join(name);
    if path.exists() {
        read_jsonl(&path)
    } else {
        Ok(Vec::new())
    }
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::config(format!("dataset directory {} not found", dir.display())));
        }
        let task_path = dir.join(TASK_FILE);
        let text = std::fs::read_to_string(&task_path).map_err(|e| Error::io(&task_path, e))?;
        let task: TaskSpec = toml::from_str(&text).map_err(|e| Error::Format {
            path: task_path.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        task.validate()?;
        let unlabeled_path = dir.join(UNLABELED_FILE);
        if !unlabeled_path.exists() {
            return Err(Error::config(format!("{} is missing", unlabeled_path.display())));
        }
        let unlabeled = read_jsonl(&unlabeled_path)?;
        let train = optional_split(dir, TRAIN_FILE)?;
        let test = optional_split(dir, TEST_FILE)?;
        let emb_path = dir.join(EMBEDDINGS_FILE);
        let embeddings = if emb_path.exists() {
            Some(EmbeddingCache::load(&emb_path)?)
        } else {
            None
        };
        let ds = Dataset {
            dir: dir.to_path_buf(),
            task,
            unlabeled,
            train,
            test,
            embeddings,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Ids must be unique across all splits; train needs gold answers.
    pub fn validate(&self) -> Result<()> {
        let all: Vec<Example> = self.all_examples().cloned().collect();
        validate_examples(&all)?;
        if let Some(e) = self.train.iter().find(|e| e.gold.is_none()) {
            return Err(Error::config(format!("train example {:?} has no gold answer", e.id)));
        }
        Ok(())
    }

    pub fn all_examples(&self) -> impl Iterator<Item = &Example> {
        self.unlabeled.iter().chain(&self.train).chain(&self.test)
    }

    /// Unlabeled inputs with any gold answers removed, so annotation cannot
    /// see them.
    pub fn unlabeled_inputs(&self) -> Vec<Example> {
        self.unlabeled
            .iter()
            .map(|e| Example::new(e.id.clone(), e.input.clone()))
            .collect()
    }

    /// The first `n` train examples (all of them when `n` is `None`).
    pub fn ground_truth(&self, n: Option<usize>) -> Result<&[Example]> {
        match n {
            None => Ok(&self.train),
            Some(n) if n <= self.train.len() => Ok(&self.train[..n]),
            Some(n) => Err(Error::config(format!(
                "n_gt = {n} but the train split has only {} examples",
                self.train.len()
            ))),
        }
    }

    /// Gold answers of every split, keyed by id.
    pub fn golds(&self) -> HashMap<String, String> {
        self.all_examples()
            .filter_map(|e| e.gold.clone().map(|g| (e.id.clone(), g)))
            .collect()
    }

    pub fn inputs(&self) -> HashMap<String, String> {
        self.all_examples().map(|e| (e.id.clone(), e.input.clone())).collect()
    }

    pub fn ids(&self) -> HashSet<&str> {
        self.all_examples().map(|e| e.id.as_str()).collect()
    }
}
