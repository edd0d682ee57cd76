//! Language-model backends.

pub mod http;
mod remote;
mod sim;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::TokenLogprob;

pub use http::RetryPolicy;
pub use remote::RemoteLm;
pub use sim::{SimLm, SimParams};

#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub temperature: f64,
    /// Number of independent samples wanted.
    pub n: usize,
    pub logprobs: bool,
}

impl<'a> CompletionRequest<'a> {
    pub fn greedy(prompt: &'a str) -> Self {
        CompletionRequest {
            prompt,
            temperature: 0.0,
            n: 1,
            logprobs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
}

/// A chat-completion style model. Implementations are shared across threads.
pub trait LanguageModel: Send + Sync {
    fn identity(&self) -> &str;

    /// Returns up to `req.n` completions (at least one on success).
    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Vec<Completion>>;
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    fn identity(&self) -> &str {
        (**self).identity()
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Vec<Completion>> {
        (**self).complete(req)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for Box<T> {
    fn identity(&self) -> &str {
        (**self).identity()
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Vec<Completion>> {
        (**self).complete(req)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Remote,
    Sim,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "remote" => Ok(BackendKind::Remote),
            "sim" => Ok(BackendKind::Sim),
            other => Err(Error::config(format!("unknown backend {other:?} (expected sim or remote)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    /// Temperature for single-shot annotation and inference.
    pub temperature: f64,
    /// Temperature for repeated sampling (self-consistency).
    pub sampling_temperature: f64,
    pub max_tokens: u32,
    pub logprobs: bool,
    pub max_inflight: usize,
    pub requests_per_second: Option<f64>,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
    /// Appends every request/response pair to this JSONL file.
    pub transcript: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Sim,
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            temperature: 0.0,
            sampling_temperature: 0.7,
            max_tokens: 1024,
            logprobs: false,
            max_inflight: 8,
            requests_per_second: None,
            timeout_secs: 120,
            retry: RetryPolicy::default(),
            transcript: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.temperature, self.sampling_temperature].iter().any(|t| t.is_nan() || *t < 0.0) {
            return Err(Error::config("temperature must be >= 0"));
        }
        if self.max_inflight == 0 {
            return Err(Error::config("max_inflight must be >= 1"));
        }
        Ok(())
    }
}
