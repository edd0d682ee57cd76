use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{Embedder, EmbeddingVector};
use crate::error::{Error, Result};

/// One line of the embedding cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub example_id: String,
    pub provider: String,
    pub vector: Vec<f64>,
}

/// Example-id keyed vectors persisted as JSONL so they are fetched once.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingCache {
    entries: IndexMap<(String, String), CacheEntry>,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads a cache file; a missing file is an empty cache.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cache = EmbeddingCache::new();
        if !path.exists() {
            return Ok(cache);
        }
        for (i, entry) in crate::store::read_jsonl::<CacheEntry>(path)?.into_iter().enumerate() {
            if entry.vector.is_empty() {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "empty embedding vector".into(),
                });
            }
            cache.insert(entry);
        }
        Ok(cache)
    }

    pub fn insert(&mut self, entry: CacheEntry) {
        self.entries
            .insert((entry.provider.clone(), entry.example_id.clone()), entry);
    }

    pub fn get(&self, provider: &str, example_id: &str) -> Option<&CacheEntry> {
        self.entries.get(&(provider.to_string(), example_id.to_string()))
    }

    pub fn entries(&self) -> impl Iterator<Item = &CacheEntry> {
        self.entries.values()
    }

    /// Provider of the first entry, for single-provider files.
    pub fn provider(&self) -> Option<&str> {
        self.entries.values().next().map(|e| e.provider.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::store::write_jsonl(path, self.entries.values())
    }
}

/// Wraps a provider with a read-through cache; [`CachingEmbedder::persist`]
/// appends whatever was fetched since the last call.
pub struct CachingEmbedder {
    inner: Box<dyn Embedder>,
    cache: Mutex<EmbeddingCache>,
    fresh: Mutex<Vec<CacheEntry>>,
}

impl CachingEmbedder {
    pub fn new(inner: Box<dyn Embedder>, cache: EmbeddingCache) -> Self {
        CachingEmbedder {
            inner,
            cache: Mutex::new(cache),
            fresh: Mutex::new(Vec::new()),
        }
    }

    pub fn persist(&self, path: &Path) -> Result<usize> {
        let fresh = std::mem::take(&mut *self.fresh.lock().expect("cache lock poisoned"));
        if fresh.is_empty() {
            return Ok(0);
        }
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut buf = Vec::new();
        for entry in &fresh {
            serde_json::to_writer(&mut buf, entry)?;
            buf.push(b'\n');
        }
        file.write_all(&buf).map_err(|e| Error::io(path, e))?;
        Ok(fresh.len())
    }
}

impl Embedder for CachingEmbedder {
    fn identity(&self) -> &str {
        self.inner.identity()
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        self.inner.embed_text(text)
    }

    fn embed_example(&self, id: &str, text: &str) -> Result<EmbeddingVector> {
        let provider = self.inner.identity();
        if let Some(hit) = self.cache.lock().expect("cache lock poisoned").get(provider, id) {
            return Ok(EmbeddingVector::new(hit.vector.clone(), provider));
        }
        let v = self.inner.embed_example(id, text)?;
        let entry = CacheEntry {
            example_id: id.to_string(),
            provider: provider.to_string(),
            vector: v.values.clone(),
        };
        self.cache.lock().expect("cache lock poisoned").insert(entry.clone());
        self.fresh.lock().expect("cache lock poisoned").push(entry);
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        inner: HashEmbedder,
        calls: AtomicUsize,
    }

    impl Embedder for Counting {
        fn identity(&self) -> &str {
            self.inner.identity()
        }
        fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.embed_text(text)
        }
    }

    #[test]
    fn cache_round_trip_avoids_refetch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        let e = CachingEmbedder::new(
            Box::new(Counting {
                inner: HashEmbedder::new(8, 1),
                calls: AtomicUsize::new(0),
            }),
            EmbeddingCache::load(&path).unwrap(),
        );
        let a = e.embed_example("x1", "hello").unwrap();
        e.embed_example("x1", "hello").unwrap();
        assert_eq!(e.persist(&path).unwrap(), 1);
        assert_eq!(e.persist(&path).unwrap(), 0);

        let loaded = EmbeddingCache::load(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        let entry = loaded.get("hash:dim=8:seed=1", "x1").unwrap();
        assert_eq!(entry.vector, a.values);
    }
}
