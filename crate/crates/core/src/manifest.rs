//! Run manifests: what was run, with which configuration, and what came out.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotate::IterationSnapshot;
use crate::error::{Error, Result};
use crate::store::{file_digest, write_atomic};
use crate::task::TaskSpec;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub status: RunStatus,
    pub dataset: PathBuf,
    pub task: TaskSpec,
    pub backend_identity: String,
    /// SHA-256 of the canonical JSON of the backend section.
    pub backend_config_digest: String,
    /// SHA-256 of the canonical JSON of the whole configuration; a resumed
    /// run must match it.
    pub config_digest: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub scorer: Option<String>,
    pub code_version: String,
    pub started_at: String,
    pub updated_at: String,
    pub finished_at: Option<String>,
    /// How the final demonstration pool was derived from the store.
    pub final_pool_rule: Option<String>,
    #[serde(default)]
    pub iterations: Vec<IterationSnapshot>,
    pub outcome: Option<serde_json::Value>,
    pub error: Option<String>,
    /// Output file name -> SHA-256 of its contents.
    #[serde(default)]
    pub outputs: BTreeMap<String, String>,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn digest_json(value: &impl Serialize) -> Result<String> {
    Ok(crate::util::sha256_hex(&serde_json::to_vec(value)?))
}

impl RunManifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = Self::path(dir);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map(Some).map_err(|e| Error::Format {
            path,
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn save(&mut self, dir: &Path) -> Result<()> {
        self.updated_at = now();
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(&Self::path(dir), &bytes)
    }

    /// Records the digest of `dir/name`.
    pub fn record_output(&mut self, dir: &Path, name: &str) -> Result<()> {
        let digest = file_digest(&dir.join(name))?;
        self.outputs.insert(name.to_string(), digest);
        Ok(())
    }

    /// Checks every recorded output against its digest.
    pub fn verify_outputs(&self, dir: &Path) -> Result<()> {
        for (name, want) in &self.outputs {
            let got = file_digest(&dir.join(name))?;
            if &got != want {
                return Err(Error::config(format!(
                    "{name} does not match the digest recorded in run {}",
                    self.run_id
                )));
            }
        }
        Ok(())
    }

    pub fn finish(&mut self, status: RunStatus) {
        self.status = status;
        self.finished_at = Some(now());
    }
}
