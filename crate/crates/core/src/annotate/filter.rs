use serde::{Deserialize, Serialize};

use crate::confidence::percentile_threshold;
use crate::error::Result;
use crate::types::PseudoDemonstration;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    /// Keep `confidence >= lambda`.
    Fixed(f64),
    /// Keep the top fraction of the chunk.
    PerChunkPercentile(f64),
}

/// The kept subset of `chunk`, in chunk order.
pub fn chunk_filter(chunk: &[PseudoDemonstration], mode: FilterMode) -> Result<Vec<PseudoDemonstration>> {
    match mode {
        FilterMode::Fixed(lambda) => Ok(chunk.iter().filter(|p| p.confidence >= lambda).cloned().collect()),
        FilterMode::PerChunkPercentile(_) if chunk.is_empty() => Ok(Vec::new()),
        FilterMode::PerChunkPercentile(f) => {
            let scores: Vec<f64> = chunk.iter().map(|p| p.confidence).collect();
            let (_, kept) = percentile_threshold(&scores, f)?;
            Ok(kept.into_iter().map(|i| chunk[i].clone()).collect())
        }
    }
}
