//! Chat-completions client with bounded concurrency and retry on 429/5xx.

use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use varsynth_core::synthesis::{parse_variant_list, render_synthesis_prompt};

use crate::endpoint::EndpointConfig;
use crate::error::{RemoteError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub n: usize,
    pub temperature: f64,
    pub top_p: f64,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResponse {
    pub texts: Vec<String>,
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResponse {
    pub variants: Vec<String>,
    /// Fewer than `k` well-formed items, or an empty item.
    pub malformed: bool,
    pub retries: u32,
}

#[derive(Clone)]
pub struct RemoteClient {
    http: reqwest::Client,
    endpoint: EndpointConfig,
    api_key: Option<String>,
    permits: Arc<Semaphore>,
}

/// Delay before retry `attempt` (0-based): `base * 2^attempt`, jittered by ±20%.
pub fn backoff_delay(base_ms: u64, attempt: u32, rng: &mut impl Rng) -> Duration {
    let nominal = base_ms as f64 * 2f64.powi(attempt.min(30) as i32);
    Duration::from_secs_f64(nominal * rng.random_range(0.8..=1.2) / 1000.0)
}

fn retryable(status: reqwest::StatusCode) -> bool {
    status == reqwest::StatusCode::TOO_MANY_REQUESTS || status.is_server_error()
}

impl RemoteClient {
    pub fn new(endpoint: EndpointConfig) -> Result<Self> {
        endpoint.validate()?;
        let api_key = endpoint.api_key()?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build()
            .map_err(|e| RemoteError::Config(format!("http client: {e}")))?;
        Ok(Self {
            http,
            permits: Arc::new(Semaphore::new(endpoint.max_in_flight)),
            endpoint,
            api_key,
        })
    }

    pub fn endpoint(&self) -> &EndpointConfig {
        &self.endpoint
    }

    pub fn chat_request(&self, user: &str, n: usize) -> ChatRequest {
        let mut messages = Vec::new();
        if !self.endpoint.system_prompt.is_empty() {
            messages.push(ChatMessage {
                role: "system".into(),
                content: self.endpoint.system_prompt.clone(),
            });
        }
        messages.push(ChatMessage {
            role: "user".into(),
            content: user.to_string(),
        });
        ChatRequest {
            model: self.endpoint.model_name.clone(),
            messages,
            n,
            temperature: self.endpoint.temperature,
            top_p: self.endpoint.top_p,
        }
    }

    /// Sends one request, retrying 429 and 5xx up to `retry_limit` times.
    /// Returns the choice texts in response order and the retry count.
    pub async fn complete(&self, request: &ChatRequest) -> Result<(Vec<String>, u32)> {
        let url = self.endpoint.completions_url();
        let mut retries = 0u32;
        loop {
            let outcome = {
                let _permit = self
                    .permits
                    .acquire()
                    .await
                    .map_err(|e| RemoteError::Config(e.to_string()))?;
                let mut req = self.http.post(&url).json(request);
                if let Some(key) = &self.api_key {
                    req = req.bearer_auth(key);
                }
                match req.send().await {
                    Ok(resp) => {
                        let status = resp.status();
                        let body = resp.bytes().await.map_err(|e| RemoteError::Transport {
                            status: Some(status.as_u16()),
                            message: e.to_string(),
                        })?;
                        Ok((status, body))
                    }
                    Err(e) => Err(e),
                }
            };
            let (status, last_error) = match outcome {
                Ok((status, body)) if status.is_success() => {
                    return parse_choices(&body, request.n).map(|t| (t, retries));
                }
                Ok((status, body)) if retryable(status) => {
                    (Some(status.as_u16()), String::from_utf8_lossy(&body).into_owned())
                }
                Ok((status, body)) => {
                    return Err(RemoteError::Transport {
                        status: Some(status.as_u16()),
                        message: String::from_utf8_lossy(&body).into_owned(),
                    })
                }
                Err(e) if e.is_timeout() || e.is_connect() => (None, e.to_string()),
                Err(e) => {
                    return Err(RemoteError::Transport {
                        status: None,
                        message: e.to_string(),
                    })
                }
            };
            if retries >= self.endpoint.retry_limit {
                return Err(RemoteError::Transport {
                    status,
                    message: format!("giving up after {retries} retries: {last_error}"),
                });
            }
            let delay = backoff_delay(self.endpoint.backoff_base_ms, retries, &mut rand::rng());
            retries += 1;
            log::warn!(
                "request failed ({}), retry {retries}/{} in {} ms",
                status.map_or("no response".to_string(), |s| format!("HTTP {s}")),
                self.endpoint.retry_limit,
                delay.as_millis()
            );
            tokio::time::sleep(delay).await;
        }
    }

    /// Samples `n` responses to `query_text`.
    pub async fn request_rollouts(&self, query_text: &str) -> Result<RolloutResponse> {
        let request = self.chat_request(query_text, self.endpoint.n);
        let (texts, retries) = self.complete(&request).await?;
        Ok(RolloutResponse { texts, retries })
    }

    /// Asks for `k` answer-preserving rewrites of `query_text` and parses the numbered list.
    pub async fn request_variants(
        &self,
        prompt_template: &str,
        query_text: &str,
        pseudo_label: &str,
        k: usize,
    ) -> Result<VariantResponse> {
        let prompt = render_synthesis_prompt(prompt_template, query_text, pseudo_label, k)?;
        let (texts, retries) = self.complete(&self.chat_request(&prompt, 1)).await?;
        let parsed = parse_variant_list(&texts[0], k);
        Ok(VariantResponse {
            variants: parsed.items,
            malformed: parsed.malformed,
            retries,
        })
    }
}

fn parse_choices(body: &[u8], expected: usize) -> Result<Vec<String>> {
    let resp: ChatResponse = serde_json::from_slice(body)
        .map_err(|e| RemoteError::Protocol(format!("malformed completion body: {e}")))?;
    if resp.choices.len() != expected {
        return Err(RemoteError::Protocol(format!(
            "asked for {expected} choices, got {}",
            resp.choices.len()
        )));
    }
    Ok(resp
        .choices
        .into_iter()
        .map(|c| c.message.content.unwrap_or_default())
        .collect())
}
