//! Endpoint settings. The API key itself never appears here, only the name
//! of the environment variable that holds it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{RemoteError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// Base URL up to and including the API version, e.g. `https://host/v1`.
    pub base_url: String,
    pub model_name: String,
    /// Environment variable holding the bearer token. No header is sent when absent.
    pub api_key_env: Option<String>,
    pub temperature: f64,
    pub top_p: f64,
    /// Rollouts per query.
    pub n: usize,
    pub max_in_flight: usize,
    pub retry_limit: u32,
    pub timeout_ms: u64,
    pub backoff_base_ms: u64,
    /// Sent as a system message when nonempty.
    pub system_prompt: String,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8089/v1".into(),
            model_name: "default".into(),
            api_key_env: None,
            temperature: 0.6,
            top_p: 0.95,
            n: 32,
            max_in_flight: 4,
            retry_limit: 3,
            timeout_ms: 120_000,
            backoff_base_ms: 500,
            system_prompt: String::new(),
        }
    }
}

fn config(msg: impl Into<String>) -> RemoteError {
    RemoteError::Config(msg.into())
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        reqwest::Url::parse(&self.base_url).map_err(|e| config(format!("base_url: {e}")))?;
        if self.model_name.is_empty() {
            return Err(config("model_name must not be empty"));
        }
        if self.n == 0 {
            return Err(config("n must be >= 1"));
        }
        if self.max_in_flight == 0 {
            return Err(config("max_in_flight must be >= 1"));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(config("temperature must be >= 0"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(config("top_p must lie in (0, 1]"));
        }
        if self.timeout_ms == 0 {
            return Err(config("timeout_ms must be >= 1"));
        }
        Ok(())
    }

    /// The bearer token, read from the named environment variable.
    pub fn api_key(&self) -> Result<Option<String>> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| config(format!("api_key_env names {var:?}, which is not set"))),
        }
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

pub fn parse_endpoint(text: &str) -> Result<EndpointConfig> {
    let c: EndpointConfig = serde_json::from_str(text).map_err(|e| config(e.to_string()))?;
    c.validate()?;
    Ok(c)
}

pub fn load_endpoint(path: &Path) -> Result<EndpointConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config(format!("cannot read {}: {e}", path.display())))?;
    parse_endpoint(&text)
}
