use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Embedder, EmbeddingVector};
use crate::backend::http::{HttpSettings, JsonClient, RetryPolicy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteEmbedderConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub max_inflight: usize,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for RemoteEmbedderConfig {
    fn default() -> Self {
        RemoteEmbedderConfig {
            endpoint: "https://api.openai.com/v1".into(),
            model: "text-embedding-3-large".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_inflight: 8,
            timeout_secs: 60,
            retry: RetryPolicy::default(),
        }
    }
}

/// Client for an OpenAI-style `/embeddings` endpoint.
pub struct RemoteEmbedder {
    client: JsonClient,
    model: String,
    identity: String,
}

impl RemoteEmbedder {
    pub fn new(cfg: &RemoteEmbedderConfig) -> Result<Self> {
        let api_key = std::env::var(&cfg.api_key_env).ok();
        let client = JsonClient::new(HttpSettings {
            base_url: cfg.endpoint.clone(),
            api_key,
            timeout: Duration::from_secs(cfg.timeout_secs),
            max_inflight: cfg.max_inflight,
            requests_per_second: None,
            retry: cfg.retry.clone(),
        })?;
        Ok(RemoteEmbedder {
            client,
            model: cfg.model.clone(),
            identity: format!("remote:{}", cfg.model),
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        let body = json!({ "model": self.model, "input": text });
        let reply = self.client.post_json("embeddings", &body)?;
        let values: Vec<f64> = reply
            .pointer("/data/0/embedding")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::Protocol("embedding response lacks data[0].embedding".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| Error::Protocol("non-numeric embedding value".into())))
            .collect::<Result<_>>()?;
        if values.is_empty() {
            return Err(Error::Protocol("empty embedding".into()));
        }
        Ok(EmbeddingVector::new(values, self.identity.clone()))
    }
}
