//! Embedding providers, cosine similarity and clustering.

mod cache;
mod kmeans;
mod remote;

use std::collections::HashMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Example;

pub use cache::{CacheEntry, CachingEmbedder, EmbeddingCache};
pub use kmeans::{kmeans, nearest_to_centroids, ranked_members, Clustering, KMeansConfig};
pub use remote::{RemoteEmbedder, RemoteEmbedderConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub source: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, source: impl Into<String>) -> Self {
        EmbeddingVector {
            values,
            source: source.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `dot(a, b) / (|a| |b|)`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    cosine(&a.values, &b.values)
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::degenerate(format!(
            "embedding dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::degenerate("cosine similarity of a zero vector"));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// A text embedding service.
pub trait Embedder: Send + Sync {
    fn identity(&self) -> &str;

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector>;

    /// Embeds a dataset item. Providers with precomputed vectors key on `id`.
    fn embed_example(&self, id: &str, text: &str) -> Result<EmbeddingVector> {
        let _ = id;
        self.embed_text(text)
    }
}

/// Deterministic offline embedder: a seeded hash of the text expanded into a
/// Gaussian vector and normalized to unit length.
///
/// Distinct texts map to (almost surely) distinct, nearly orthogonal vectors
/// once `dim` is moderately large.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
    identity: String,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder {
            dim,
            seed,
            identity: format!("hash:dim={dim}:seed={seed}"),
        }
    }
}

impl Embedder for HashEmbedder {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        let mut rng = crate::util::keyed_rng(self.seed, &[b"hash-embed", text.as_bytes()]);
        let mut values: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            values[0] = 1.0;
        } else {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(EmbeddingVector::new(values, self.identity.clone()))
    }
}

/// Precomputed vectors keyed by example id, with an optional fallback for
/// free text (for instance back-translations).
pub struct TableEmbedder {
    table: HashMap<String, Vec<f64>>,
    fallback: Option<Box<dyn Embedder>>,
    identity: String,
}

impl TableEmbedder {
    pub fn new(
        identity: impl Into<String>,
        table: HashMap<String, Vec<f64>>,
        fallback: Option<Box<dyn Embedder>>,
    ) -> Self {
        TableEmbedder {
            table,
            fallback,
            identity: identity.into(),
        }
    }

    pub fn from_cache(cache: &EmbeddingCache, fallback: Option<Box<dyn Embedder>>) -> Self {
        let identity = format!("table:{}", cache.provider().unwrap_or("unknown"));
        let table = cache
            .entries()
            .map(|e| (e.example_id.clone(), e.vector.clone()))
            .collect();
        Self::new(identity, table, fallback)
    }
}

impl Embedder for TableEmbedder {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        match &self.fallback {
            Some(f) => f.embed_text(text),
            None => Err(Error::config("table embedder cannot embed free text")),
        }
    }

    fn embed_example(&self, id: &str, text: &str) -> Result<EmbeddingVector> {
        match self.table.get(id) {
            Some(v) => Ok(EmbeddingVector::new(v.clone(), self.identity.clone())),
            None => match &self.fallback {
                Some(f) => f.embed_example(id, text),
                None => Err(Error::config(format!("no precomputed embedding for {id:?}"))),
            },
        }
    }
}

/// Embeddings of dataset items, keyed by example id.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    vectors: HashMap<String, Vec<f64>>,
    dim: Option<usize>,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, values: Vec<f64>) -> Result<()> {
        match self.dim {
            Some(d) if d != values.len() => {
                return Err(Error::degenerate(format!(
                    "embedding dimension {} differs from {d}",
                    values.len()
                )))
            }
            _ => self.dim = Some(values.len()),
        }
        self.vectors.insert(id.into(), values);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.vectors
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::config(format!("no embedding for example {id:?}")))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.vectors.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Embeds every example not yet present, fanning out over the current
    /// rayon pool. Results are keyed by id so completion order is irrelevant.
    pub fn fill(&mut self, examples: &[Example], embedder: &dyn Embedder) -> Result<()> {
        use rayon::prelude::*;
        let missing: Vec<&Example> = examples.iter().filter(|e| !self.contains(&e.id)).collect();
        let fetched: Vec<Result<(String, EmbeddingVector)>> = missing
            .par_iter()
            .map(|e| embedder.embed_example(&e.id, &e.input).map(|v| (e.id.clone(), v)))
            .collect();
        for item in fetched {
            let (id, v) = item?;
            self.insert(id, v.values)?;
        }
        Ok(())
    }
}
