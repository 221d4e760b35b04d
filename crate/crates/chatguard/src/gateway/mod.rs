//! The deployable moderation surface: request/response types, the
//! moderation engine shared by the HTTP service and the CLI, and the
//! service itself (see [`http`]).

pub mod http;

use std::sync::Arc;
use std::time::Instant;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, CompletionBackend, CompletionRequest};
use crate::parse::{parse_verdict, score_from_first_token, Label, Verdict};
use crate::policy::{subset, Policy, PolicyRegistry, BUILTIN_POLICY_ID};
use crate::prompt::{build_task_prompt, ClassificationTask, Conversation, Message, Target};

pub use http::{router, serve, ServeError};

/// Gateway-level failures, each mapped to a stable machine-readable code
/// and an HTTP status by the service layer.
#[derive(Debug, Error)]
pub enum GatewayError {
    /// The request violates an invariant (HTTP 400).
    #[error("{message}")]
    Invalid {
        code: &'static str,
        field: &'static str,
        message: String,
    },
    /// The classifier produced output that does not follow the verdict
    /// grammar (HTTP 422). The raw text is echoed for audit.
    #[error("classifier output did not follow the verdict format")]
    MalformedOutput { raw: String },
    /// The backend could not be reached (HTTP 502).
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    /// Any other backend failure (HTTP 502).
    #[error("backend error: {0}")]
    Backend(String),
}

impl GatewayError {
    fn invalid(code: &'static str, field: &'static str, message: impl Into<String>) -> Self {
        Self::Invalid {
            code,
            field,
            message: message.into(),
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::Invalid { code, .. } => code,
            GatewayError::MalformedOutput { .. } => "malformed_output",
            GatewayError::BackendUnavailable(_) => "backend_unavailable",
            GatewayError::Backend(_) => "backend_error",
        }
    }

    pub fn field(&self) -> &'static str {
        match self {
            GatewayError::Invalid { field, .. } => field,
            _ => "",
        }
    }
}

fn map_backend_error(e: BackendError) -> GatewayError {
    match e {
        BackendError::Unavailable(msg) => GatewayError::BackendUnavailable(msg),
        other => GatewayError::Backend(other.to_string()),
    }
}

/// Which side(s) of the conversation to moderate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModerationTarget {
    #[default]
    Prompt,
    Response,
    Both,
}

impl ModerationTarget {
    fn targets(self) -> Vec<Target> {
        match self {
            ModerationTarget::Prompt => vec![Target::Prompt],
            ModerationTarget::Response => vec![Target::Response],
            ModerationTarget::Both => vec![Target::Prompt, Target::Response],
        }
    }
}

/// Binary full-policy verdict, or one verdict per category via subset
/// tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModerationMode {
    #[default]
    Binary,
    #[serde(rename = "per_category_1vall")]
    PerCategory1Vall,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ModerationRequest {
    pub messages: Vec<Message>,
    #[serde(default = "default_policy_id")]
    pub policy_id: String,
    #[serde(default)]
    pub target: ModerationTarget,
    #[serde(default)]
    pub mode: ModerationMode,
}

fn default_policy_id() -> String {
    BUILTIN_POLICY_ID.to_string()
}

/// One verdict as returned to callers. `raw` is included only when the
/// caller asked for audit output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictView {
    pub label: Label,
    pub violated: Vec<usize>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

impl VerdictView {
    fn from_verdict(verdict: &Verdict, audit: bool) -> Self {
        Self {
            label: verdict.label(),
            violated: verdict.violated().iter().copied().collect(),
            score: verdict.score(),
            raw: audit.then(|| verdict.raw().to_string()),
        }
    }

    fn with_violated(mut self, violated: Vec<usize>) -> Self {
        self.violated = violated;
        self
    }
}

/// Per-category verdict in 1-vs-all mode, reported in the parent policy's
/// index space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryVerdict {
    pub category: usize,
    pub name: String,
    #[serde(flatten)]
    pub verdict: VerdictView,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetVerdicts {
    pub target: Target,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<VerdictView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_category: Option<Vec<CategoryVerdict>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModerationResponse {
    pub policy_id: String,
    pub backend: String,
    pub latency_ms: u64,
    pub results: Vec<TargetVerdicts>,
}

/// The moderation engine: an immutable policy registry plus a completion
/// backend, safe to share across concurrent requests. Backend fan-out is
/// capped at `max_in_flight` concurrent calls.
pub struct Gateway {
    registry: PolicyRegistry,
    backend: Arc<dyn CompletionBackend>,
    max_in_flight: usize,
}

impl Gateway {
    pub fn new(backend: Arc<dyn CompletionBackend>, registry: PolicyRegistry) -> Self {
        Self {
            backend,
            registry,
            max_in_flight: 16,
        }
    }

    pub fn with_max_in_flight(mut self, max_in_flight: usize) -> Self {
        self.max_in_flight = max_in_flight.max(1);
        self
    }

    pub fn registry(&self) -> &PolicyRegistry {
        &self.registry
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub async fn healthy(&self) -> bool {
        self.backend.healthy().await
    }

    async fn classify(
        &self,
        target: Target,
        task_policy: &Policy,
        conversation: Conversation,
        audit: bool,
    ) -> Result<VerdictView, GatewayError> {
        let task = ClassificationTask::new(target, task_policy.clone(), conversation)
            .map_err(|e| GatewayError::invalid("target_mismatch", "target", e.to_string()))?;
        let prompt = build_task_prompt(&task)
            .map_err(|e| GatewayError::invalid("render_failed", "messages", e.to_string()))?;
        let result = self
            .backend
            .complete(&CompletionRequest::new(prompt))
            .await
            .map_err(map_backend_error)?;
        let verdict = parse_verdict(&result.text, task_policy)
            .map_err(|_| GatewayError::MalformedOutput { raw: result.text.clone() })?;
        let score =
            score_from_first_token(result.first_token_probs.as_ref(), Some(verdict.label()))
                .expect("label fallback always yields a score");
        let verdict = verdict
            .with_score(score.clamp(0.0, 1.0))
            .expect("clamped score lies in [0, 1]");
        Ok(VerdictView::from_verdict(&verdict, audit))
    }

    /// Moderates one conversation: builds the task(s) per target, calls the
    /// backend, parses, and scores. `target=both` yields two independent
    /// verdicts; per-category mode fans out one subset task per category.
    pub async fn moderate(
        &self,
        request: &ModerationRequest,
        audit: bool,
    ) -> Result<ModerationResponse, GatewayError> {
        let started = Instant::now();
        let policy = self.registry.get(&request.policy_id).ok_or_else(|| {
            GatewayError::invalid(
                "unknown_policy",
                "policy_id",
                format!("no policy registered under id {:?}", request.policy_id),
            )
        })?;
        let conversation = Conversation::new(request.messages.clone())
            .map_err(|e| GatewayError::invalid("invalid_conversation", "messages", e.to_string()))?;

        let mut results = Vec::new();
        for target in request.target.targets() {
            let focused = conversation.truncate_for_target(target).ok_or_else(|| {
                GatewayError::invalid(
                    "target_mismatch",
                    "target",
                    format!(
                        "conversation has no {} message to classify for target '{target}'",
                        target.focus_role()
                    ),
                )
            })?;
            let entry = match request.mode {
                ModerationMode::Binary => {
                    let verdict = self.classify(target, &policy, focused, audit).await?;
                    TargetVerdicts {
                        target,
                        verdict: Some(verdict),
                        per_category: None,
                    }
                }
                ModerationMode::PerCategory1Vall => {
                    let categories = self
                        .per_category(target, &policy, &focused, audit)
                        .await?;
                    TargetVerdicts {
                        target,
                        verdict: None,
                        per_category: Some(categories),
                    }
                }
            };
            results.push(entry);
        }
        Ok(ModerationResponse {
            policy_id: policy.id().to_string(),
            backend: self.backend.name().to_string(),
            latency_ms: started.elapsed().as_millis() as u64,
            results,
        })
    }

    /// One subset task per category, fanned out concurrently up to the
    /// backend limit. Verdict indices are mapped back into the parent
    /// policy's space.
    async fn per_category(
        &self,
        target: Target,
        policy: &Policy,
        conversation: &Conversation,
        audit: bool,
    ) -> Result<Vec<CategoryVerdict>, GatewayError> {
        let tasks = (1..=policy.len()).map(|k| {
            let sub = subset(policy, [k]).expect("index k lies within the policy");
            let conversation = conversation.clone();
            async move {
                let view = self
                    .classify(target, sub.policy(), conversation, audit)
                    .await?;
                let mapped: Vec<usize> = view
                    .violated
                    .iter()
                    .filter_map(|&i| sub.to_parent_index(i))
                    .collect();
                Ok::<CategoryVerdict, GatewayError>(CategoryVerdict {
                    category: k,
                    name: policy.get(k).expect("index k lies within the policy").name.clone(),
                    verdict: view.with_violated(mapped),
                })
            }
        });
        let mut verdicts: Vec<CategoryVerdict> = stream::iter(tasks)
            .buffer_unordered(self.max_in_flight)
            .collect::<Vec<Result<_, _>>>()
            .await
            .into_iter()
            .collect::<Result<_, _>>()?;
        verdicts.sort_by_key(|v| v.category);
        Ok(verdicts)
    }
}
