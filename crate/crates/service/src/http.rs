//! HTTP surface: routing, full-pipeline answering, and registry
//! administration.
//!
//! Request and response bodies mirror the domain types field for field; the
//! `<Reason>`/`<ID>` grammar lives only on the model wire, never in this
//! API. Every response that made a decision embeds the registry revision and
//! config fingerprint it was served under, so results are auditable and
//! replayable. Registry mutations take effect for subsequent requests only:
//! each request pins its own snapshot at the start.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use switchboard_core::orchestrate::{Orchestrator, PipelineError, RefinedAnswer, StageFailure};
use switchboard_core::prompt::{ChatHistory, Turn};
use switchboard_core::registry::{AgentCard, RegistryError, SharedRegistry};

#[derive(Clone)]
pub struct AppState {
    pub registry: SharedRegistry,
    pub orchestrator: Arc<Orchestrator>,
    pub config_fingerprint: String,
    pub template_version: String,
}

pub fn app(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/route", post(route))
        .route("/answer", post(answer))
        .route("/agents", get(list_agents).post(add_agent))
        .route("/agents/{id}", delete(remove_agent))
        .with_state(state)
}

/// Structured error body with stage attribution.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    stage: String,
    kind: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, stage: &str, kind: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            stage: stage.into(),
            kind: kind.into(),
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "error": {
                "stage": self.stage,
                "kind": self.kind,
                "message": self.message,
            }
        });
        (self.status, Json(body)).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(err: PipelineError) -> Self {
        let stage = err.stage.to_string();
        let (status, kind) = match &err.source {
            StageFailure::Prompt(_) => (StatusCode::UNPROCESSABLE_ENTITY, "prompt"),
            // The model or an agent misbehaved; the gateway itself is fine.
            StageFailure::Backend(_) => (StatusCode::BAD_GATEWAY, "backend"),
            StageFailure::Parse(_) => (StatusCode::BAD_GATEWAY, "parse"),
            StageFailure::AllAgentsFailed => (StatusCode::BAD_GATEWAY, "all_agents_failed"),
            StageFailure::OutOfScopeSelection => (StatusCode::UNPROCESSABLE_ENTITY, "selection"),
        };
        ApiError::new(status, &stage, kind, err.to_string())
    }
}

impl From<RegistryError> for ApiError {
    fn from(err: RegistryError) -> Self {
        let (status, kind) = match &err {
            RegistryError::DuplicateId(_) => (StatusCode::CONFLICT, "duplicate_id"),
            RegistryError::UnknownId(_) => (StatusCode::NOT_FOUND, "unknown_id"),
            RegistryError::InvalidCard { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_card"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "registry"),
        };
        ApiError::new(status, "registry", kind, err.to_string())
    }
}

#[derive(Debug, Deserialize)]
pub struct HistoryBody {
    pub turns: Vec<Turn>,
}

impl HistoryBody {
    fn into_history(self) -> Result<ChatHistory, ApiError> {
        ChatHistory::new(self.turns).map_err(|e| {
            ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "request",
                "invalid_history",
                e.to_string(),
            )
        })
    }
}

#[derive(Debug, Serialize)]
struct RouteResponse {
    decision: switchboard_core::decision::RoutingDecision,
    registry_revision: u64,
    prompt_tokens: usize,
    latency_ms: u64,
    config_fingerprint: String,
}

async fn route(
    State(state): State<AppState>,
    Json(body): Json<HistoryBody>,
) -> Result<Json<RouteResponse>, ApiError> {
    let history = body.into_history()?;
    let snapshot = state.registry.snapshot();
    let outcome = state.orchestrator.route(&history, &snapshot).await?;
    Ok(Json(RouteResponse {
        decision: outcome.decision,
        registry_revision: outcome.registry_revision,
        prompt_tokens: outcome.prompt_tokens,
        latency_ms: outcome.latency.as_millis() as u64,
        config_fingerprint: state.config_fingerprint.clone(),
    }))
}

#[derive(Debug, Serialize)]
struct AnswerResponse {
    #[serde(flatten)]
    answer: RefinedAnswer,
    config_fingerprint: String,
}

async fn answer(
    State(state): State<AppState>,
    Json(body): Json<HistoryBody>,
) -> Result<Json<AnswerResponse>, ApiError> {
    let history = body.into_history()?;
    let snapshot = state.registry.snapshot();
    let answer = state.orchestrator.answer(&history, &snapshot).await?;
    Ok(Json(AnswerResponse {
        answer,
        config_fingerprint: state.config_fingerprint.clone(),
    }))
}

async fn healthz(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "registry_revision": state.registry.revision(),
        "template_version": state.template_version,
        "config_fingerprint": state.config_fingerprint,
    }))
}

async fn list_agents(State(state): State<AppState>) -> Json<serde_json::Value> {
    let snapshot = state.registry.snapshot();
    Json(json!({
        "revision": snapshot.revision(),
        "agents": snapshot.cards(),
    }))
}

async fn add_agent(
    State(state): State<AppState>,
    Json(card): Json<AgentCard>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let id = card.id.clone();
    let revision = state.registry.add_agent(card)?;
    tracing::info!(agent = %id, revision, "agent onboarded");
    Ok((
        StatusCode::CREATED,
        Json(json!({ "id": id, "revision": revision })),
    ))
}

async fn remove_agent(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let revision = state.registry.remove_agent(&id)?;
    tracing::info!(agent = %id, revision, "agent retired");
    Ok(Json(json!({ "id": id, "revision": revision })))
}
