//! Run configuration, read from TOML.
//!
//! ```toml
//! seed = 0
//!
//! [backend]
//! kind = "sim"            # or "remote"
//! max_inflight = 8
//!
//! [confidence]
//! scorer = "verbalized"
//! keep_fraction = 0.1
//!
//! [annotate]
//! chunk_size = 500
//! epsilon = 0.8
//! kappa = 1000            # or "inf"
//!
//! [select]
//! n_gt = 16
//! n_psd = [0, 8, 128]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotate::{AnnotateConfig, Kappa, SamplerVariant, ThresholdMode};
use crate::backend::{BackendConfig, SimParams};
use crate::embed::RemoteEmbedderConfig;
use crate::error::{Error, Result};
use crate::select::InferenceConfig;
use crate::types::ScorerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    /// Seeded hash of the text onto the unit sphere.
    Hash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub remote: RemoteEmbedderConfig,
    /// Read-through cache file for fetched vectors.
    pub cache: Option<PathBuf>,
    /// Use the dataset's `embeddings.jsonl` when present.
    pub use_dataset_embeddings: bool,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            kind: EmbedderKind::Hash,
            dim: 64,
            remote: RemoteEmbedderConfig::default(),
            cache: None,
            use_dataset_embeddings: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidenceSection {
    pub scorer: ScorerKind,
    pub keep_fraction: f64,
    pub self_consistency_samples: usize,
}

impl Default for ConfidenceSection {
    fn default() -> Self {
        let a = AnnotateConfig::default();
        ConfidenceSection {
            scorer: a.scorer,
            keep_fraction: a.keep_fraction,
            self_consistency_samples: a.self_consistency_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateSection {
    pub chunk_size: usize,
    pub epsilon: f64,
    pub kappa: Kappa,
    pub retries: u32,
    pub threshold: ThresholdMode,
    pub sampler: SamplerVariant,
    pub commit_batch: usize,
}

impl Default for AnnotateSection {
    fn default() -> Self {
        let a = AnnotateConfig::default();
        AnnotateSection {
            chunk_size: a.chunk_size,
            epsilon: a.epsilon,
            kappa: a.kappa,
            retries: a.retries,
            threshold: a.threshold,
            sampler: a.sampler,
            commit_batch: a.commit_batch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    /// Ground-truth demonstrations taken from the head of the train split;
    /// all of them when unset.
    pub n_gt: Option<usize>,
    pub n_psd: Vec<usize>,
    pub resample_per_query: bool,
    pub retries: u32,
}

impl Default for SelectSection {
    fn default() -> Self {
        SelectSection {
            n_gt: None,
            n_psd: vec![0],
            resample_per_query: false,
            retries: 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub backend: BackendConfig,
    pub sim: SimParams,
    pub embedder: EmbedderConfig,
    pub confidence: ConfidenceSection,
    pub annotate: AnnotateSection,
    pub select: SelectSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("bad configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Sets the run seed; the simulator follows it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sim.seed = seed;
    }

    pub fn annotate_config(&self) -> AnnotateConfig {
        AnnotateConfig {
            scorer: self.confidence.scorer,
            keep_fraction: self.confidence.keep_fraction,
            chunk_size: self.annotate.chunk_size,
            epsilon: self.annotate.epsilon,
            kappa: self.annotate.kappa,
            retries: self.annotate.retries,
            seed: self.seed,
            threshold: self.annotate.threshold,
            sampler: self.annotate.sampler,
            self_consistency_samples: self.confidence.self_consistency_samples,
            max_inflight: self.backend.max_inflight,
            commit_batch: self.annotate.commit_batch,
        }
    }

    pub fn inference_config(&self, n_psd: usize) -> InferenceConfig {
        InferenceConfig {
            n_psd,
            seed: self.seed,
            temperature: self.backend.temperature,
            retries: self.select.retries,
            max_inflight: self.backend.max_inflight,
            resample_per_query: self.select.resample_per_query,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backend.validate()?;
        self.sim.validate()?;
        self.annotate_config().validate()?;
        if self.embedder.dim == 0 {
            return Err(Error::config("embedder dim must be >= 1"));
        }
        if self.select.n_psd.is_empty() {
            return Err(Error::config("select.n_psd needs at least one value"));
        }
        Ok(())
    }
}
