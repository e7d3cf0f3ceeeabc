//! Live elicitation over HTTP. Each session holds a belief, serves the next
//! actively chosen query and ingests answers.
//!
//! Endpoints: `POST /sessions`, `GET /sessions/{id}/query`,
//! `POST /sessions/{id}/responses`, `GET /sessions/{id}/estimate`,
//! `GET /sessions/{id}/history` and `GET /healthz`. Errors are
//! `{code, message, detail}` documents.

pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::routing::{get, post};
use axum::{Json, Router};
use prefkit::domain::Response;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use session::{Ack, Estimate, History, HistoryEntry, NextQuery, QueryView, Session, SessionConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn validation(message: impl Into<String>, detail: Value) -> Self {
        ApiError { status: StatusCode::UNPROCESSABLE_ENTITY, code: "validation", message: message.into(), detail }
    }

    pub fn conflict(message: impl Into<String>, detail: Value) -> Self {
        ApiError { status: StatusCode::CONFLICT, code: "conflict", message: message.into(), detail }
    }

    pub fn not_found(id: &str) -> Self {
        ApiError { status: StatusCode::NOT_FOUND, code: "not_found", message: format!("no session {id}"), detail: json!({ "session": id }) }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, code: "internal", message: message.into(), detail: Value::Null }
    }
}

#[derive(Serialize)]
struct ErrorDoc<'a> {
    code: &'a str,
    message: &'a str,
    detail: &'a Value,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> HttpResponse {
        let doc = ErrorDoc { code: self.code, message: &self.message, detail: &self.detail };
        (self.status, Json(json!(doc))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

impl AppState {
    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions.read().expect("session map").get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub version: u64,
    pub interactions: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PostResponse {
    pub query_id: u64,
    pub response: Response<f64>,
}

fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::validation(format!("malformed body: {e}"), json!({ "line": e.line(), "column": e.column() })))
}

/// Runs `f` on the locked session off the async workers; sampling can take
/// a while.
async fn with_session<T, F>(state: &AppState, id: &str, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> Result<T, ApiError> + Send + 'static,
{
    let sess = state.get(id)?;
    tokio::task::spawn_blocking(move || {
        let mut guard = sess.lock().map_err(|_| ApiError::internal("session state poisoned"))?;
        f(&mut guard)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn create(State(state): State<Arc<AppState>>, body: Bytes) -> Result<(StatusCode, Json<Created>), ApiError> {
    let cfg: SessionConfig = parse(&body)?;
    let id = format!("s{}", state.next_id.fetch_add(1, Ordering::Relaxed) + 1);
    let sid = id.clone();
    let sess = tokio::task::spawn_blocking(move || Session::new(sid, cfg)).await.map_err(|e| ApiError::internal(e.to_string()))??;
    let out = Created { session_id: id.clone(), version: sess.version(), interactions: sess.interactions() };
    state.sessions.write().expect("session map").insert(id, Arc::new(Mutex::new(sess)));
    Ok((StatusCode::CREATED, Json(out)))
}

async fn next_query(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<NextQuery> {
    with_session(&state, &id, |s| s.next_query()).await.map(Json)
}

async fn respond(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Ack> {
    // an unknown session is reported before a malformed body
    state.get(&id)?;
    let req: PostResponse = parse(&body)?;
    with_session(&state, &id, move |s| s.respond(req.query_id, req.response)).await.map(Json)
}

async fn estimate(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Estimate> {
    with_session(&state, &id, |s| s.estimate()).await.map(Json)
}

async fn history(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<History> {
    with_session(&state, &id, |s| Ok(s.history())).await.map(Json)
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

/// Router over a fresh, empty session table.
pub fn router() -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create))
        .route("/sessions/{id}/query", get(next_query))
        .route("/sessions/{id}/responses", post(respond))
        .route("/sessions/{id}/estimate", get(estimate))
        .route("/sessions/{id}/history", get(history))
        .with_state(Arc::new(AppState::default()))
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router()).await
}
