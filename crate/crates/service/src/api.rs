//! HTTP and WebSocket API.
//!
//! | method | path | body | response |
//! |---|---|---|---|
//! | GET | `/health` | | `{status, backend, blocks, sessions}` |
//! | GET | `/sessions` | | `{sessions: [id]}` |
//! | POST | `/sessions` | `{session_id?}` | 201 `{session_id, context_chars, flush_threshold_chars}` |
//! | DELETE | `/sessions/{id}` | | `{session_id, flushed_block_ids}` |
//! | POST | `/sessions/{id}/events` | `{text, timestamp?, speaker?}` | `{evicted, new_block_ids, context}` |
//! | GET | `/sessions/{id}/context` | | `{context, pending}` |
//! | POST | `/sessions/{id}/trigger` | `{mode, query?, query_time_ms?}` | interaction record |
//! | POST | `/sessions/{id}/trigger/start` | `{mode}` | `{trigger_id}` |
//! | POST | `/sessions/{id}/trigger/{tid}/end` | `{query}` | interaction record |
//! | GET | `/sessions/{id}/interactions?mode=` | | `[record]` |
//! | GET | `/sessions/{id}/ws` | | event stream |
//! | GET | `/memory?session_id=&limit=` | | `{dimension, count, blocks}` |
//!
//! Errors are `{"error": class, "message": text}` with a matching status.
//! Pipeline failures are not errors: the trigger returns a record whose
//! `status` is `failed`.

use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use memcue_core::{InteractionRecord, Mode, SessionError, TranscriptEvent};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::state::{AppState, LiveSession, StreamEvent};

pub type SharedState = Arc<AppState>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    class: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, class: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            class,
            message: message.into(),
        }
    }

    fn no_session(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "unknown_session",
            format!("no open session {id:?}"),
        )
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, class) = match &e {
            SessionError::SessionClosed => (StatusCode::CONFLICT, "session_closed"),
            SessionError::ModeArgMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "mode_arg_mismatch"),
            SessionError::UnknownTrigger(_) => (StatusCode::NOT_FOUND, "unknown_trigger"),
            SessionError::Ingest(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_event"),
            SessionError::Embed(_) => (StatusCode::SERVICE_UNAVAILABLE, "embedder_unavailable"),
            SessionError::Store(_) => (StatusCode::INTERNAL_SERVER_ERROR, "store"),
            SessionError::Log(_) => (StatusCode::INTERNAL_SERVER_ERROR, "log"),
        };
        Self::new(status, class, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.class, "message": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", delete(close_session))
        .route("/sessions/{id}/events", post(ingest))
        .route("/sessions/{id}/context", get(context))
        .route("/sessions/{id}/trigger", post(trigger))
        .route("/sessions/{id}/trigger/start", post(trigger_start))
        .route("/sessions/{id}/trigger/{tid}/end", post(trigger_end))
        .route("/sessions/{id}/interactions", get(interactions))
        .route("/sessions/{id}/ws", get(stream))
        .route("/memory", get(memory))
        .with_state(state)
}

fn live(state: &AppState, id: &str) -> ApiResult<Arc<LiveSession>> {
    state.session(id).ok_or_else(|| ApiError::no_session(id))
}

/// Runs blocking pipeline work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))
}

async fn health(State(state): State<SharedState>) -> Json<serde_json::Value> {
    let blocks = state.services.store.read().unwrap_or_else(|e| e.into_inner()).len();
    Json(json!({
        "status": "ok",
        "backend": state.backend_label,
        "blocks": blocks,
        "sessions": state.session_ids().len(),
    }))
}

async fn list_sessions(State(state): State<SharedState>) -> Json<serde_json::Value> {
    Json(json!({"sessions": state.session_ids()}))
}

#[derive(Debug, Default, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub session_id: Option<String>,
}

fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

async fn create_session(
    State(state): State<SharedState>,
    body: Option<Json<CreateSession>>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let requested = body.and_then(|Json(b)| b.session_id);
    if let Some(id) = &requested {
        if !valid_session_id(id) {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_session_id",
                "session ids are 1-64 characters of letters, digits, '_' or '.'",
            ));
        }
    }
    let live = state.open_session(requested.clone())?.ok_or_else(|| {
        ApiError::new(
            StatusCode::CONFLICT,
            "session_exists",
            format!("session id {:?} is already in use", requested.unwrap_or_default()),
        )
    })?;
    let cfg = live.session.config();
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "session_id": live.session.id(),
            "context_chars": cfg.context_chars,
            "flush_threshold_chars": cfg.flush_threshold_chars,
        })),
    ))
}

async fn close_session(State(state): State<SharedState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let st = state.clone();
    let sid = id.clone();
    let flushed = blocking(move || st.close_session(&sid))
        .await?
        .ok_or_else(|| ApiError::no_session(&id))??;
    let st = state.clone();
    if let Err(e) = blocking(move || st.persist_store()).await? {
        tracing::error!(error = %e, "persisting the memory store failed");
    }
    Ok(Json(json!({"session_id": id, "flushed_block_ids": flushed})))
}

#[derive(Debug, Deserialize)]
pub struct IngestBody {
    pub text: String,
    /// Milliseconds since the session opened; defaults to now.
    #[serde(default)]
    pub timestamp: Option<u64>,
    #[serde(default)]
    pub speaker: Option<String>,
}

async fn ingest(
    State(state): State<SharedState>,
    Path(id): Path<String>,
    Json(body): Json<IngestBody>,
) -> ApiResult<Json<memcue_core::session::IngestOutcome>> {
    let live = live(&state, &id)?;
    let timestamp = body.timestamp.unwrap_or_else(|| state.session_elapsed_ms(&live));
    let event = TranscriptEvent::new(&body.text, timestamp, body.speaker).map_err(SessionError::from)?;
    let l = live.clone();
    let ev = event.clone();
    let outcome = blocking(move || l.session.ingest(ev)).await??;
    live.publish(StreamEvent::Transcript {
        session_id: id,
        text: event.text,
        timestamp: event.timestamp,
        speaker: event.speaker,
        context: outcome.context.clone(),
        evicted: outcome.evicted.clone(),
        new_block_ids: outcome.new_block_ids.clone(),
    });
    Ok(Json(outcome))
}

async fn context(State(state): State<SharedState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let live = live(&state, &id)?;
    Ok(Json(json!({
        "context": live.session.context(),
        "pending": live.session.pending(),
    })))
}

#[derive(Debug, Deserialize)]
pub struct TriggerBody {
    pub mode: Mode,
    #[serde(default)]
    pub query: Option<String>,
    /// Client-measured time spent voicing the query.
    #[serde(default)]
    pub query_time_ms: Option<u64>,
}

async fn trigger(
    State(state): State<SharedState>,
    Path(id): Path<String>,
    Json(body): Json<TriggerBody>,
) -> ApiResult<Json<InteractionRecord>> {
    let live = live(&state, &id)?;
    live.publish(StreamEvent::TriggerStarted {
        session_id: id,
        trigger_id: None,
        mode: body.mode,
    });
    let l = live.clone();
    let record = blocking(move || l.session.trigger(body.mode, body.query.as_deref(), body.query_time_ms)).await??;
    live.publish(StreamEvent::Interaction {
        record: Box::new(record.clone()),
    });
    Ok(Json(record))
}

#[derive(Debug, Deserialize)]
pub struct TriggerStartBody {
    #[serde(default = "default_hold_mode")]
    pub mode: Mode,
}

fn default_hold_mode() -> Mode {
    Mode::Query
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TriggerStarted {
    pub trigger_id: String,
}

async fn trigger_start(
    State(state): State<SharedState>,
    Path(id): Path<String>,
    body: Option<Json<TriggerStartBody>>,
) -> ApiResult<Json<TriggerStarted>> {
    let live = live(&state, &id)?;
    let mode = body.map(|Json(b)| b.mode).unwrap_or(Mode::Query);
    let trigger_id = live.session.start_trigger(mode)?;
    live.publish(StreamEvent::TriggerStarted {
        session_id: id,
        trigger_id: Some(trigger_id.clone()),
        mode,
    });
    Ok(Json(TriggerStarted { trigger_id }))
}

#[derive(Debug, Deserialize)]
pub struct TriggerEndBody {
    pub query: String,
}

async fn trigger_end(
    State(state): State<SharedState>,
    Path((id, tid)): Path<(String, String)>,
    Json(body): Json<TriggerEndBody>,
) -> ApiResult<Json<InteractionRecord>> {
    let live = live(&state, &id)?;
    let l = live.clone();
    let record = blocking(move || l.session.end_trigger(&tid, &body.query)).await??;
    live.publish(StreamEvent::Interaction {
        record: Box::new(record.clone()),
    });
    Ok(Json(record))
}

#[derive(Debug, Deserialize)]
pub struct InteractionFilter {
    #[serde(default)]
    pub mode: Option<Mode>,
}

async fn interactions(
    State(state): State<SharedState>,
    Path(id): Path<String>,
    Query(filter): Query<InteractionFilter>,
) -> Json<Vec<InteractionRecord>> {
    // the log outlives sessions, so closed sessions can still be listed
    Json(state.services.log.list(Some(&id), filter.mode))
}

#[derive(Debug, Deserialize)]
pub struct MemoryFilter {
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub limit: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BlockView {
    pub id: String,
    pub session_id: String,
    pub start_timestamp: u64,
    pub text: String,
}

async fn memory(State(state): State<SharedState>, Query(filter): Query<MemoryFilter>) -> Json<serde_json::Value> {
    let store = state.services.store.read().unwrap_or_else(|e| e.into_inner());
    let blocks: Vec<BlockView> = store
        .blocks()
        .iter()
        .filter(|b| filter.session_id.as_deref().is_none_or(|s| b.session_id == s))
        .take(filter.limit.unwrap_or(usize::MAX))
        .map(|b| BlockView {
            id: b.id.clone(),
            session_id: b.session_id.clone(),
            start_timestamp: b.start_timestamp,
            text: b.text.clone(),
        })
        .collect();
    Json(json!({
        "dimension": store.dimension(),
        "count": blocks.len(),
        "blocks": blocks,
    }))
}

async fn stream(
    State(state): State<SharedState>,
    Path(id): Path<String>,
    upgrade: WebSocketUpgrade,
) -> ApiResult<Response> {
    let live = live(&state, &id)?;
    Ok(upgrade.on_upgrade(move |socket| forward(socket, live)))
}

async fn forward(mut socket: WebSocket, live: Arc<LiveSession>) {
    let mut rx = live.events.subscribe();
    drop(live);
    loop {
        tokio::select! {
            event = rx.recv() => {
                let (text, last) = match event {
                    Ok(e) => {
                        let last = matches!(e, StreamEvent::SessionClosed { .. });
                        (serde_json::to_string(&e).expect("stream events serialize"), last)
                    }
                    Err(RecvError::Lagged(skipped)) => (json!({"type": "lagged", "skipped": skipped}).to_string(), false),
                    Err(RecvError::Closed) => break,
                };
                if socket.send(Message::Text(text.into())).await.is_err() || last {
                    break;
                }
            }
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}
