//! HTTP sidecar. Request bodies are single transcript records.
//!
//! - `POST /v1/conversations` with an init record: 201
//! - `POST /v1/conversations/{id}/turns` with a turn record: 200 with the
//!   turn metrics and any new flags
//! - `GET /v1/conversations/{id}/state`: turn count, baseline, recent flags
//! - `GET /healthz`

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use idt_core::{BaselineModel, DetectorConfig, DeviationFlag, IdtError, TokenizerSpec, TurnMetrics};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};

use crate::session::Session;
use crate::transcript::{parse_record, TranscriptRecord};
use crate::TransportError;

/// Flags returned by the state endpoint.
pub const RECENT_FLAGS: usize = 20;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    spec: TokenizerSpec,
    detector: DetectorConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

impl AppState {
    pub fn new(spec: TokenizerSpec, detector: DetectorConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                spec,
                detector,
                sessions: RwLock::new(HashMap::new()),
            }),
        }
    }

    /// Adds a restored conversation.
    pub async fn insert(&self, session: Session) -> Result<(), TransportError> {
        let id = session.state.id().to_string();
        let mut map = self.inner.sessions.write().await;
        if map.contains_key(&id) {
            return Err(IdtError::DuplicateConversation(id).into());
        }
        map.insert(id, Arc::new(Mutex::new(session)));
        Ok(())
    }

    async fn session(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        self.inner.sessions.read().await.get(id).cloned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub conversation_id: String,
    pub next_turn_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnResponse {
    pub conversation_id: String,
    pub metrics: TurnMetrics,
    pub new_flags: Vec<DeviationFlag>,
    pub baseline_learned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub conversation_id: String,
    pub turn_count: u32,
    pub context_tokens: u64,
    pub baseline: Option<BaselineModel>,
    pub last_metrics: Option<TurnMetrics>,
    pub recent_flags: Vec<DeviationFlag>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

impl From<TransportError> for ApiError {
    fn from(e: TransportError) -> Self {
        let status = match &e {
            TransportError::Monitor(IdtError::OutOfOrderTurn { .. })
            | TransportError::Monitor(IdtError::DuplicateConversation(_)) => StatusCode::CONFLICT,
            TransportError::Monitor(IdtError::UnknownConversation(_)) => StatusCode::NOT_FOUND,
            TransportError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(status, e.to_string())
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn not_found(id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("unknown conversation {id:?}"))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/conversations", post(create))
        .route("/v1/conversations/{id}/turns", post(turn))
        .route("/v1/conversations/{id}/state", get(summary))
        .with_state(state)
}

async fn healthz() -> &'static str {
    "ok"
}

async fn create(State(app): State<AppState>, body: String) -> Result<Response, ApiError> {
    let record = parse_record(body.trim(), app.inner.spec).map_err(bad_request)?;
    if !matches!(record, TranscriptRecord::Init { .. }) {
        return Err(bad_request("expected an init record"));
    }
    let session = Session::from_init(&record, app.inner.spec, app.inner.detector.clone())?;
    let created = Created {
        conversation_id: session.state.id().to_string(),
        next_turn_index: session.state.next_turn_index(),
    };
    app.insert(session).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn turn(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: String,
) -> Result<Json<TurnResponse>, ApiError> {
    let session = app.session(&id).await.ok_or_else(|| not_found(&id))?;
    let record = parse_record(body.trim(), app.inner.spec).map_err(bad_request)?;
    if record.conversation_id() != id {
        return Err(bad_request(format!(
            "record is for conversation {:?}, path names {id:?}",
            record.conversation_id()
        )));
    }
    if !matches!(record, TranscriptRecord::Turn { .. }) {
        return Err(bad_request("expected a turn record"));
    }
    let mut session = session.lock().await;
    let outcome = session.apply(&record)?;
    Ok(Json(TurnResponse {
        conversation_id: id,
        metrics: outcome.metrics,
        new_flags: outcome.new_flags,
        baseline_learned: outcome.baseline_learned,
    }))
}

async fn summary(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<StateSummary>, ApiError> {
    let session = app.session(&id).await.ok_or_else(|| not_found(&id))?;
    let session = session.lock().await;
    let state = &session.state;
    let flags = state.flags();
    Ok(Json(StateSummary {
        conversation_id: id,
        turn_count: state.turn_count(),
        context_tokens: state.context().total(),
        baseline: state.baseline().cloned(),
        last_metrics: state.history().last().copied(),
        recent_flags: flags[flags.len().saturating_sub(RECENT_FLAGS)..].to_vec(),
    }))
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(addr: &str, state: AppState) -> Result<(), TransportError> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
