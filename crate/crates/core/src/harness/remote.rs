//! HTTP client for an external NLI entailment service.
//!
//! Each judgment is one `POST` with body `{"premise": .., "hypothesis": ..}`.
//! The service answers `{"entails": bool}` or `{"score": number}`; scores are
//! thresholded at `cutoff`. Timeouts, transport errors and malformed replies
//! are retried with exponential backoff before surfacing as an oracle failure.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use crate::clustering::{normalize_text, EntailmentOracle};
use crate::error::{Error, Result};

/// Environment variable consulted when no endpoint flag is given.
pub const ENDPOINT_ENV: &str = "COE_NLI_ENDPOINT";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub timeout: Duration,
    /// Additional attempts after the first failure.
    pub retries: u32,
    pub backoff: Duration,
    pub cutoff: f64,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(30),
            retries: 3,
            backoff: Duration::from_millis(200),
            cutoff: 0.5,
        }
    }

    /// Endpoint from the flag if given, else from `COE_NLI_ENDPOINT`.
    pub fn from_env_or(endpoint: Option<String>) -> Result<Self> {
        endpoint
            .or_else(|| std::env::var(ENDPOINT_ENV).ok())
            .filter(|e| !e.trim().is_empty())
            .map(Self::new)
            .ok_or_else(|| {
                Error::Config(format!(
                    "remote oracle needs an endpoint (flag or {ENDPOINT_ENV})"
                ))
            })
    }
}

#[derive(Serialize)]
struct Request<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Debug)]
enum Attempt {
    Timeout,
    Transport(String),
    Malformed(String),
}

pub struct RemoteOracle {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    requests: AtomicUsize,
}

impl RemoteOracle {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(RemoteOracle {
            config,
            client,
            requests: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// HTTP requests issued so far, retries included.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    fn attempt(&self, premise: &str, hypothesis: &str) -> std::result::Result<bool, Attempt> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let resp = self
            .client
            .post(&self.config.endpoint)
            .json(&Request {
                premise,
                hypothesis,
            })
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    Attempt::Timeout
                } else {
                    Attempt::Transport(e.to_string())
                }
            })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Attempt::Transport(format!("HTTP {status}")));
        }
        let body: Value = resp.json().map_err(|e| {
            if e.is_timeout() {
                Attempt::Timeout
            } else {
                Attempt::Malformed(e.to_string())
            }
        })?;
        interpret(&body, self.config.cutoff).map_err(Attempt::Malformed)
    }
}

/// Reads `{"entails": bool}` or `{"score": number}`.
fn interpret(body: &Value, cutoff: f64) -> std::result::Result<bool, String> {
    if let Some(v) = body.get("entails") {
        return v
            .as_bool()
            .ok_or_else(|| format!("`entails` is not a boolean: {v}"));
    }
    if let Some(v) = body.get("score") {
        let s = v
            .as_f64()
            .ok_or_else(|| format!("`score` is not a number: {v}"))?;
        return Ok(s >= cutoff);
    }
    Err(format!(
        "response has neither `entails` nor `score`: {body}"
    ))
}

impl EntailmentOracle for RemoteOracle {
    fn entails(&self, premise: &str, hypothesis: &str) -> Result<bool> {
        if normalize_text(premise) == normalize_text(hypothesis) {
            return Ok(true);
        }
        let mut delay = self.config.backoff;
        let mut last = None;
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(premise, hypothesis) {
                Ok(v) => return Ok(v),
                Err(e) => last = Some(e),
            }
        }
        let reason = match last.expect("at least one attempt") {
            Attempt::Timeout => format!("timed out after {:?}", self.config.timeout),
            Attempt::Transport(m) => format!("transport error: {m}"),
            Attempt::Malformed(m) => format!("malformed response: {m}"),
        };
        Err(Error::OracleFailure(format!(
            "{} ({} attempts): {reason}",
            self.config.endpoint,
            self.config.retries + 1
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn response_interpretation() {
        assert_eq!(interpret(&json!({"entails": true}), 0.5), Ok(true));
        assert_eq!(interpret(&json!({"score": 0.73}), 0.5), Ok(true));
        assert_eq!(interpret(&json!({"score": 0.2}), 0.5), Ok(false));
        assert!(interpret(&json!({"label": "yes"}), 0.5).is_err());
        assert!(interpret(&json!({"entails": "yes"}), 0.5).is_err());
    }

    #[test]
    fn reflexive_pairs_skip_the_network() {
        let o = RemoteOracle::new(RemoteConfig::new("http://127.0.0.1:9/unused")).unwrap();
        assert!(o.entails("Paris", " paris").unwrap());
        assert_eq!(o.requests(), 0);
    }

    #[test]
    fn endpoint_resolution() {
        let c = RemoteConfig::from_env_or(Some("http://x".into())).unwrap();
        assert_eq!(c.endpoint, "http://x");
        assert_eq!(c.timeout, Duration::from_secs(30));
        assert_eq!(c.retries, 3);
    }
}
