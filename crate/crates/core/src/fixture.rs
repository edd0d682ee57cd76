//! Seeded synthetic datasets for the simulator.
//!
//! Every input starts with an `[id:...]` marker so the simulator can find the
//! answer key. Optional clustered embeddings tie label (classification) or a
//! random group (translation) to one of `clusters` well separated centroids.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{EMBEDDINGS_FILE, TASK_FILE, TEST_FILE, TRAIN_FILE, UNLABELED_FILE};
use crate::embed::{CacheEntry, EmbeddingCache};
use crate::error::{Error, Result};
use crate::store::{write_atomic, write_jsonl};
use crate::task::{TaskFamily, TaskSpec};
use crate::types::Example;
use crate::util::keyed_rng;

const LABEL_NAMES: [&str; 10] = [
    "billing", "refund", "transfer", "card", "account", "travel", "weather", "music", "payment", "security",
];

const VOCAB: [&str; 32] = [
    "the", "small", "house", "river", "green", "quick", "bright", "stone", "window", "market", "garden",
    "letter", "mountain", "cloud", "table", "silver", "morning", "road", "old", "friend", "city", "light",
    "paper", "song", "winter", "bridge", "horse", "blue", "field", "door", "ship", "north",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    pub family: TaskFamily,
    pub unlabeled: usize,
    pub train: usize,
    pub test: usize,
    /// Number of labels (classification only).
    pub labels: usize,
    /// Write clustered embeddings with this many centroids.
    pub clusters: Option<usize>,
    pub dim: usize,
    /// Centroid norm; per-point noise has norm about 1.
    pub separation: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            family: TaskFamily::Classification,
            unlabeled: 200,
            train: 16,
            test: 100,
            labels: 4,
            clusters: None,
            dim: 16,
            separation: 3.0,
            seed: 0,
        }
    }
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.unlabeled == 0 {
            return Err(Error::config("fixture needs at least one unlabeled example"));
        }
        match self.family {
            TaskFamily::Classification => {
                if self.labels < 2 {
                    return Err(Error::config("classification fixture needs at least two labels"));
                }
                if let Some(c) = self.clusters {
                    if c > self.labels {
                        return Err(Error::config("cannot have more clusters than labels"));
                    }
                }
            }
            TaskFamily::Translation => {}
            TaskFamily::Freeform => return Err(Error::config("fixtures cover classification and translation")),
        }
        if self.clusters == Some(0) || self.dim == 0 {
            return Err(Error::config("clusters and dim must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub task: TaskSpec,
    pub unlabeled: Vec<Example>,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub embeddings: Option<EmbeddingCache>,
    /// Cluster index per example id, when clustered.
    pub clusters: Vec<(String, usize)>,
}

fn label_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| LABEL_NAMES.get(i).map_or_else(|| format!("label_{i}"), |s| s.to_string()))
        .collect()
}

/// The synthetic target-language word for a vocabulary word.
fn translate_word(w: &str) -> String {
    let mut t: String = w.chars().rev().collect();
    t.push('a');
    t
}

fn sentence(rng: &mut impl Rng) -> Vec<&'static str> {
    let len = rng.random_range(4..=8);
    (0..len).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect()
}

fn unit_gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Generates a dataset; identical specs give identical fixtures.
pub fn generate(spec: &FixtureSpec) -> Result<Fixture> {
    spec.validate()?;
    let labels = label_names(spec.labels);
    let task = match spec.family {
        TaskFamily::Classification => TaskSpec::classification(labels.clone()),
        _ => TaskSpec::translation("English", "Reversish"),
    };
    let centroids: Vec<Vec<f64>> = spec.clusters.map_or_else(Vec::new, |c| {
        let mut rng = keyed_rng(spec.seed, &[b"fixture-centroids"]);
        (0..c)
            .map(|_| unit_gaussian(&mut rng, spec.dim).into_iter().map(|x| x * spec.separation).collect())
            .collect()
    });
    let noise = Normal::new(0.0, 1.0 / (spec.dim as f64).sqrt()).expect("positive sigma");
    let provider = format!(
        "fixture:clusters={}:dim={}:seed={}",
        spec.clusters.unwrap_or(0),
        spec.dim,
        spec.seed
    );

    let mut cache = EmbeddingCache::new();
    let mut clusters = Vec::new();
    let mut split = |prefix: &str, n: usize| -> Vec<Example> {
        let mut rng = keyed_rng(spec.seed, &[b"fixture", prefix.as_bytes()]);
        (0..n)
            .map(|i| {
                let id = format!("{prefix}{i:05}");
                let words = sentence(&mut rng);
                let (input, gold, group) = match spec.family {
                    TaskFamily::Classification => {
                        let l = rng.random_range(0..labels.len());
                        let input = format!("[id:{id}] {}", words.join(" "));
                        (input, labels[l].clone(), l)
                    }
                    _ => {
                        let group = rng.random_range(0..spec.clusters.unwrap_or(1));
                        let target: Vec<String> = words.iter().map(|w| translate_word(w)).collect();
                        let input = format!("[id:{id}] {}", words.join(" "));
                        (input, format!("[id:{id}] {}", target.join(" ")), group)
                    }
                };
                if let Some(c) = spec.clusters {
                    let k = group % c;
                    let vector: Vec<f64> = centroids[k].iter().map(|x| x + noise.sample(&mut rng)).collect();
                    cache.insert(CacheEntry {
                        example_id: id.clone(),
                        provider: provider.clone(),
                        vector,
                    });
                    clusters.push((id.clone(), k));
                }
                Example::labeled(id, input, gold)
            })
            .collect()
    };
    let unlabeled = split("u", spec.unlabeled);
    let train = split("g", spec.train);
    let test = split("t", spec.test);
    Ok(Fixture {
        task,
        unlabeled,
        train,
        test,
        embeddings: spec.clusters.map(|_| cache),
        clusters,
    })
}

impl Fixture {
    /// Writes the dataset layout understood by [`crate::dataset::Dataset`].
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let task = toml::to_string(&self.task).map_err(|e| Error::config(format!("cannot encode task: {e}")))?;
        write_atomic(&dir.join(TASK_FILE), task.as_bytes())?;
        write_jsonl(&dir.join(UNLABELED_FILE), &self.unlabeled)?;
        write_jsonl(&dir.join(TRAIN_FILE), &self.train)?;
        write_jsonl(&dir.join(TEST_FILE), &self.test)?;
        if let Some(cache) = &self.embeddings {
            cache.save(&dir.join(EMBEDDINGS_FILE))?;
        }
        Ok(())
    }
}
