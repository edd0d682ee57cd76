use std::io::Write;
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use super::http::{HttpSettings, JsonClient};
use super::{BackendConfig, Completion, CompletionRequest, LanguageModel};
use crate::error::{Error, Result};
use crate::types::TokenLogprob;

/// Client for OpenAI-compatible `/chat/completions` endpoints.
pub struct RemoteLm {
    client: JsonClient,
    model: String,
    max_tokens: u32,
    identity: String,
    transcript: Option<Mutex<std::fs::File>>,
}

impl RemoteLm {
    pub fn new(cfg: &BackendConfig) -> Result<Self> {
        cfg.validate()?;
        let api_key = std::env::var(&cfg.api_key_env).ok();
        if api_key.is_none() {
            log::warn!("{} is not set; sending requests without an API key", cfg.api_key_env);
        }
        let client = JsonClient::new(HttpSettings {
            base_url: cfg.endpoint.clone(),
            api_key,
            timeout: Duration::from_secs(cfg.timeout_secs),
            max_inflight: cfg.max_inflight,
            requests_per_second: cfg.requests_per_second,
            retry: cfg.retry.clone(),
        })?;
        let transcript = match &cfg.transcript {
            Some(path) => Some(Mutex::new(
                std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?,
            )),
            None => None,
        };
        Ok(RemoteLm {
            client,
            model: cfg.model.clone(),
            max_tokens: cfg.max_tokens,
            identity: format!("remote:{}", cfg.model),
            transcript,
        })
    }

    fn log(&self, request: &Value, response: &Value) {
        if let Some(file) = &self.transcript {
            let line = json!({ "request": request, "response": response }).to_string();
            let mut f = file.lock().expect("transcript lock poisoned");
            if let Err(e) = writeln!(f, "{line}") {
                log::warn!("transcript write failed: {e}");
            }
        }
    }
}

fn parse_logprobs(choice: &Value) -> Result<Option<Vec<TokenLogprob>>> {
    let Some(content) = choice.pointer("/logprobs/content").and_then(Value::as_array) else {
        return Ok(None);
    };
    content
        .iter()
        .map(|t| {
            let token = t.get("token").and_then(Value::as_str);
            let logprob = t.get("logprob").and_then(Value::as_f64);
            match (token, logprob) {
                (Some(token), Some(logprob)) => Ok(TokenLogprob {
                    token: token.to_string(),
                    logprob,
                }),
                _ => Err(Error::Protocol("malformed logprobs entry".into())),
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Extracts completions from a chat-completions reply.
pub(crate) fn parse_chat_reply(reply: &Value) -> Result<Vec<Completion>> {
    let choices = reply
        .get("choices")
        .and_then(Value::as_array)
        .filter(|c| !c.is_empty())
        .ok_or_else(|| Error::Protocol("reply has no choices".into()))?;
    choices
        .iter()
        .map(|choice| {
            let text = choice
                .pointer("/message/content")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::Protocol("choice lacks message.content".into()))?;
            Ok(Completion {
                text: text.to_string(),
                token_logprobs: parse_logprobs(choice)?,
            })
        })
        .collect()
}

impl LanguageModel for RemoteLm {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn complete(&self, req: &CompletionRequest<'_>) -> Result<Vec<Completion>> {
        if req.prompt.trim().is_empty() {
            return Err(Error::degenerate("empty prompt"));
        }
        let body = json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": req.prompt }],
            "temperature": req.temperature,
            "max_tokens": self.max_tokens,
            "n": req.n.max(1),
            "logprobs": req.logprobs,
        });
        let reply = self.client.post_json("chat/completions", &body)?;
        self.log(&body, &reply);
        parse_chat_reply(&reply)
    }
}
