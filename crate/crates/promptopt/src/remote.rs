//! HTTP client for the `/v1/score` wire protocol.
//!
//! Request: `{"inputs": [...], "candidates": [[...], ...]}`.
//! Response: `{"scores": [[...], ...]}`, log-probabilities per candidate in
//! the order sent. 429 and 5xx responses and transport failures are retried
//! with exponential backoff; any other non-success status is permanent.
//!
//! Adapting a commercial completion API means implementing
//! [`promptopt_core::oracle::Oracle`] for a client of that API; nothing
//! else in the pipeline depends on this module.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use promptopt_core::oracle::Oracle;
use promptopt_core::Error as CoreError;

use crate::error::{Error, Result};

pub const ENDPOINT_VAR: &str = "ORACLE_ENDPOINT";
pub const TOKEN_VAR: &str = "ORACLE_AUTH_TOKEN";

#[derive(Clone, Debug)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub auth_token: Option<String>,
    pub attempts: u32,
    pub timeout: Duration,
    /// Wait before the second attempt; doubles after each retry.
    pub backoff: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            auth_token: None,
            attempts: 3,
            timeout: Duration::from_secs(30),
            backoff: Duration::from_millis(250),
        }
    }

    /// Reads `ORACLE_ENDPOINT` and, if present, `ORACLE_AUTH_TOKEN`.
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_VAR)
            .ok()
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| Error::Config(format!("{ENDPOINT_VAR} is not set and no synthetic task was given")))?;
        let mut cfg = RemoteConfig::new(endpoint);
        cfg.auth_token = std::env::var(TOKEN_VAR).ok().filter(|s| !s.is_empty());
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    inputs: &'a [String],
    candidates: &'a [Vec<String>],
}

#[derive(Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<Vec<f64>>,
}

pub struct HttpOracle {
    config: RemoteConfig,
    url: String,
    agent: ureq::Agent,
}

enum Failure {
    Retry(String),
    Permanent(String),
}

impl HttpOracle {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        let url = format!("{}/v1/score", config.endpoint.trim_end_matches('/'));
        HttpOracle { config, url, agent }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt(&self, body: &ScoreRequest<'_>) -> Result<ScoreResponse, Failure> {
        let mut req = self.agent.post(&self.url);
        if let Some(t) = &self.config.auth_token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Failure::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        match status {
            200..=299 => resp
                .body_mut()
                .read_json::<ScoreResponse>()
                .map_err(|e| Failure::Permanent(format!("malformed response: {e}"))),
            429 => Err(Failure::Retry("rate limited (429)".into())),
            500..=599 => Err(Failure::Retry(format!("server error ({status})"))),
            _ => {
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                Err(Failure::Permanent(format!("request rejected ({status}): {}", text.trim())))
            }
        }
    }
}

impl Oracle for HttpOracle {
    fn score(&self, inputs: &[String], candidates: &[Vec<String>]) -> promptopt_core::Result<Vec<Vec<f64>>> {
        let body = ScoreRequest { inputs, candidates };
        let mut wait = self.config.backoff;
        let mut last = String::new();
        for attempt in 0..self.config.attempts.max(1) {
            if attempt > 0 {
                thread::sleep(wait);
                wait *= 2;
            }
            match self.attempt(&body) {
                Ok(r) => {
                    if r.scores.len() != inputs.len() {
                        return Err(CoreError::OracleUnavailable(format!(
                            "{} score rows for {} inputs",
                            r.scores.len(),
                            inputs.len()
                        )));
                    }
                    return Ok(r.scores);
                }
                Err(Failure::Permanent(m)) => return Err(CoreError::OracleUnavailable(m)),
                Err(Failure::Retry(m)) => last = m,
            }
        }
        Err(CoreError::OracleUnavailable(format!(
            "{} after {} attempts: {last}",
            self.url, self.config.attempts
        )))
    }
}
