//! Blocking JSON-over-HTTP plumbing shared by the remote model and embedder
//! clients: bounded in-flight requests, a token-bucket rate limiter and
//! exponential backoff on transient failures.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 5,
            backoff_ms: 500,
            max_backoff_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }
}

#[derive(Debug, Clone)]
pub struct HttpSettings {
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_inflight: usize,
    /// Sustained request rate; `None` disables the limiter.
    pub requests_per_second: Option<f64>,
    pub retry: RetryPolicy,
}

/// Counting semaphore bounding concurrent requests.
struct InflightGate {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InflightGate);

impl InflightGate {
    fn new(max: usize) -> Self {
        InflightGate {
            max: max.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn enter(&self) -> Permit<'_> {
        let mut n = self.current.lock().expect("gate poisoned");
        while *n >= self.max {
            n = self.freed.wait(n).expect("gate poisoned");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.current.lock().expect("gate poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    fn new(rate: f64) -> Self {
        let capacity = rate.max(1.0);
        TokenBucket {
            rate,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("bucket poisoned");
                let now = Instant::now();
                let (tokens, last) = *state;
                let tokens = (tokens + now.duration_since(last).as_secs_f64() * self.rate).min(self.capacity);
                if tokens >= 1.0 {
                    *state = (tokens - 1.0, now);
                    return;
                }
                *state = (tokens, now);
                Duration::from_secs_f64((1.0 - tokens) / self.rate)
            };
            std::thread::sleep(wait);
        }
    }
}

pub struct JsonClient {
    agent: ureq::Agent,
    settings: HttpSettings,
    gate: InflightGate,
    bucket: Option<TokenBucket>,
}

enum Attempt {
    Done(serde_json::Value),
    Retry(String, Option<Duration>),
}

impl JsonClient {
    pub fn new(settings: HttpSettings) -> Result<Self> {
        if settings.max_inflight == 0 {
            return Err(Error::config("max_inflight must be at least 1"));
        }
        if let Some(r) = settings.requests_per_second {
            if r.is_nan() || r <= 0.0 {
                return Err(Error::config("requests_per_second must be positive"));
            }
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(settings.timeout))
            .build()
            .into();
        Ok(JsonClient {
            agent,
            gate: InflightGate::new(settings.max_inflight),
            bucket: settings.requests_per_second.map(TokenBucket::new),
            settings,
        })
    }

    fn url(&self, path: &str) -> String {
        format!(
            "{}/{}",
            self.settings.base_url.trim_end_matches('/'),
            path.trim_start_matches('/')
        )
    }

    fn attempt(&self, url: &str, body: &str) -> Result<Attempt> {
        if let Some(bucket) = &self.bucket {
            bucket.acquire();
        }
        let _permit = self.gate.enter();
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.settings.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let response = match req.send(body) {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retry(e.to_string(), None)),
        };
        let status = response.status().as_u16();
        let retry_after = response
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        let text = match response.into_body().read_to_string() {
            Ok(t) => t,
            Err(e) => return Ok(Attempt::Retry(format!("reading body: {e}"), None)),
        };
        match status {
            200..=299 => serde_json::from_str(&text)
                .map(Attempt::Done)
                .map_err(|e| Error::Protocol(format!("malformed JSON from {url}: {e}"))),
            429 | 500..=599 => Ok(Attempt::Retry(format!("HTTP {status}"), retry_after)),
            _ => Err(Error::Protocol(format!("HTTP {status} from {url}: {text}"))),
        }
    }

    /// POSTs `body` to `path`, retrying rate limits, server errors and
    /// connection failures with exponential backoff.
    pub fn post_json(&self, path: &str, body: &serde_json::Value) -> Result<serde_json::Value> {
        let url = self.url(path);
        let body = body.to_string();
        let attempts = self.settings.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.attempt(&url, &body)? {
                Attempt::Done(v) => return Ok(v),
                Attempt::Retry(reason, hint) => {
                    log::warn!("{url}: attempt {}/{attempts} failed: {reason}", attempt + 1);
                    last = reason;
                    if attempt + 1 < attempts {
                        let delay = self.settings.retry.delay(attempt);
                        let max = Duration::from_millis(self.settings.retry.max_backoff_ms);
                        std::thread::sleep(hint.map_or(delay, |h| h.min(max).max(delay)));
                    }
                }
            }
        }
        Err(Error::Transport(format!("{url}: giving up after {attempts} attempts: {last}")))
    }
}
