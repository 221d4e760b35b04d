//! The HTTP moderation service.
//!
//! Endpoints:
//! - `POST /v1/moderate` — moderate a conversation (`?audit=true` echoes
//!   raw classifier output);
//! - `GET /v1/policies` — list registered policies with category names;
//! - `GET /healthz` — `ok` or `degraded` depending on backend reachability.
//!
//! Every error body carries `{"error": {"code", "field", "message"}}`;
//! well-formed input never produces a 500.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use thiserror::Error;

use super::{Gateway, GatewayError, ModerationRequest};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Serialize)]
struct ErrorDetail {
    code: String,
    field: String,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    raw: Option<String>,
}

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        let status = match &self {
            GatewayError::Invalid { .. } => StatusCode::BAD_REQUEST,
            GatewayError::MalformedOutput { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            GatewayError::BackendUnavailable(_) => StatusCode::BAD_GATEWAY,
            GatewayError::Backend(_) => StatusCode::BAD_GATEWAY,
        };
        let raw = match &self {
            GatewayError::MalformedOutput { raw } => Some(raw.clone()),
            _ => None,
        };
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code().to_string(),
                field: self.field().to_string(),
                message: self.to_string(),
                raw,
            },
        };
        (status, Json(body)).into_response()
    }
}

async fn moderate_handler(
    State(gateway): State<Arc<Gateway>>,
    Query(params): Query<HashMap<String, String>>,
    payload: Result<Json<ModerationRequest>, JsonRejection>,
) -> Response {
    let Json(request) = match payload {
        Ok(json) => json,
        Err(rejection) => {
            return GatewayError::Invalid {
                code: "invalid_body",
                field: "",
                message: rejection.body_text(),
            }
            .into_response()
        }
    };
    let audit = params.get("audit").map(|v| v == "true").unwrap_or(false);
    match gateway.moderate(&request, audit).await {
        Ok(response) => Json(response).into_response(),
        Err(error) => error.into_response(),
    }
}

#[derive(Serialize)]
struct PolicySummary {
    id: String,
    categories: Vec<String>,
}

#[derive(Serialize)]
struct PoliciesBody {
    policies: Vec<PolicySummary>,
}

async fn policies_handler(State(gateway): State<Arc<Gateway>>) -> Json<PoliciesBody> {
    let mut policies: Vec<PolicySummary> = gateway
        .registry()
        .list()
        .into_iter()
        .map(|policy| PolicySummary {
            id: policy.id().to_string(),
            categories: policy.categories().iter().map(|c| c.name.clone()).collect(),
        })
        .collect();
    policies.sort_by(|a, b| a.id.cmp(&b.id));
    Json(PoliciesBody { policies })
}

#[derive(Serialize)]
struct HealthBody {
    status: &'static str,
    backend: String,
}

async fn health_handler(State(gateway): State<Arc<Gateway>>) -> Json<HealthBody> {
    let status = if gateway.healthy().await { "ok" } else { "degraded" };
    Json(HealthBody {
        status,
        backend: gateway.backend_name().to_string(),
    })
}

/// Builds the service router around a shared gateway.
pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new()
        .route("/v1/moderate", post(moderate_handler))
        .route("/v1/policies", get(policies_handler))
        .route("/healthz", get(health_handler))
        .with_state(gateway)
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
    tracing::info!("shutdown signal received, draining in-flight requests");
}

/// Binds and serves until interrupted; in-flight requests drain before the
/// process exits.
pub async fn serve(gateway: Arc<Gateway>, bind: SocketAddr) -> Result<(), ServeError> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|source| ServeError::Bind { addr: bind, source })?;
    let addr = listener.local_addr()?;
    tracing::info!(%addr, backend = gateway.backend_name(), "moderation gateway listening");
    axum::serve(listener, router(gateway))
        .with_graceful_shutdown(shutdown_signal())
        .await?;
    Ok(())
}
