//! Completions-endpoint client (OpenAI-completions-compatible shape).

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{BackendError, CompletionBackend, CompletionRequest, CompletionResult};
use crate::parse::FirstTokenDistribution;

/// Environment variable holding the bearer token for the completion
/// endpoint.
pub const API_KEY_ENV: &str = "GUARD_API_KEY";

/// Configuration for [`HttpBackend`]. Defaults: 30 s timeout, 2 retries
/// with exponential backoff, top-5 logprobs.
#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub base_url: String,
    /// Bearer token; falls back to `GUARD_API_KEY` when unset.
    pub api_key: Option<String>,
    /// Optional model name for multi-model servers; omitted from the wire
    /// body when unset.
    pub model: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
    pub top_logprobs: u32,
}

impl HttpBackendConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            model: None,
            timeout: Duration::from_secs(30),
            retries: 2,
            top_logprobs: 5,
        }
    }
}

/// Client for `POST {base}/v1/completions`.
///
/// Requests decode deterministically (temperature 0) and ask for the
/// top-logprob map of the first generated token, from which the classifier
/// score is read. When the server does not return logprobs, the result is
/// still delivered with `probs_unsupported` set.
pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::Client,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    text: String,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    top_logprobs: Option<Vec<std::collections::HashMap<String, f64>>>,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Unavailable(format!("client construction failed: {e}")))?;
        Ok(Self { config, client })
    }

    fn completions_url(&self) -> String {
        format!("{}/v1/completions", self.config.base_url.trim_end_matches('/'))
    }

    async fn attempt(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let body = WireRequest {
            prompt: &request.prompt,
            max_tokens: request.max_new_tokens,
            temperature: request.temperature,
            logprobs: request
                .want_first_token_probs
                .then_some(self.config.top_logprobs),
            model: self.config.model.as_deref(),
        };
        let mut builder = self.client.post(self.completions_url()).json(&body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().await.map_err(classify_transport_error)?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().await.unwrap_or_default();
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: excerpt(&body),
            });
        }
        let wire: WireResponse = response
            .json()
            .await
            .map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::InvalidResponse("response has no choices".into()))?;

        let mut first_token_probs = None;
        let mut probs_unsupported = false;
        if request.want_first_token_probs {
            let top = choice
                .logprobs
                .and_then(|lp| lp.top_logprobs)
                .and_then(|mut maps| if maps.is_empty() { None } else { Some(maps.remove(0)) });
            match top {
                Some(map) => {
                    let mut entries: Vec<(String, f64)> = map
                        .into_iter()
                        .map(|(token, logprob)| (token, logprob.exp().clamp(0.0, 1.0)))
                        .collect();
                    // Reported logprobs are rounded, so the exponentiated
                    // top-k can exceed 1 by a hair; rescale to keep the
                    // distribution invariant (the two-way score reading is
                    // unaffected).
                    let total: f64 = entries.iter().map(|(_, p)| p).sum();
                    if total > 1.0 {
                        for (_, p) in &mut entries {
                            *p /= total;
                        }
                    }
                    first_token_probs = Some(
                        FirstTokenDistribution::new(entries)
                            .map_err(|e| BackendError::InvalidResponse(e.to_string()))?,
                    );
                }
                None => probs_unsupported = true,
            }
        }
        Ok(CompletionResult {
            text: choice.text,
            first_token_probs,
            probs_unsupported,
        })
    }
}

fn classify_transport_error(e: reqwest::Error) -> BackendError {
    if e.is_timeout() || e.is_connect() {
        BackendError::Unavailable(e.to_string())
    } else {
        BackendError::InvalidResponse(e.to_string())
    }
}

fn excerpt(body: &str) -> String {
    const LIMIT: usize = 240;
    if body.len() <= LIMIT {
        body.to_string()
    } else {
        let mut end = LIMIT;
        while !body.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &body[..end])
    }
}

fn retryable(error: &BackendError) -> bool {
    match error {
        BackendError::Unavailable(_) => true,
        BackendError::Status { status, .. } => *status >= 500 || *status == 429,
        BackendError::InvalidResponse(_) => false,
    }
}

#[async_trait]
impl CompletionBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let mut delay = Duration::from_millis(200);
        let mut last_error = None;
        for attempt in 0..=self.config.retries {
            match self.attempt(request).await {
                Ok(result) => return Ok(result),
                Err(e) if retryable(&e) && attempt < self.config.retries => {
                    tracing::debug!(attempt, error = %e, "retrying completion request");
                    tokio::time::sleep(delay).await;
                    delay *= 2;
                    last_error = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last_error.expect("loop exits early unless an error was recorded"))
    }

    async fn healthy(&self) -> bool {
        let url = format!("{}/v1/models", self.config.base_url.trim_end_matches('/'));
        // Any HTTP answer counts as reachable; only transport failures are
        // "degraded".
        self.client.get(url).send().await.is_ok()
    }
}
