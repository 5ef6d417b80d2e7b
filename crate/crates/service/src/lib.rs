//! HTTP session service: live matches played round by round by human
//! participants (or any external program) against configured agents.
//!
//! Endpoints:
//!
//! | method | path | body / query |
//! |---|---|---|
//! | POST | `/sessions` | [`CreateSession`] |
//! | GET | `/sessions` | |
//! | GET | `/sessions/{id}` | |
//! | GET | `/sessions/{id}/state` | `?slot=0` |
//! | POST | `/sessions/{id}/choices` | `{"slot": 0, "action": "Paper"}` |
//! | POST | `/sessions/{id}/advance` | |
//! | GET | `/sessions/{id}/log` | |
//!
//! Writes to a session are serialized; reads are served from a snapshot
//! published after each write, so repeated reads between writes return the
//! same body.

pub mod live;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gamelab_core::error::Error;
use gamelab_core::gateway::Gateway;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use live::{CreateSession, LiveSession, Phase, Rejection, SessionSummary, SlotState, Snapshot, SubmitOutcome};

/// Header carrying the shared token when one is configured.
pub const TOKEN_HEADER: &str = "x-gamelab-token";

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Each session gets `<data_dir>/<session id>/` with a manifest and log.
    pub data_dir: PathBuf,
    pub idle_timeout: Duration,
    pub shared_token: Option<String>,
    pub max_concurrent_calls: usize,
    pub timestamps: bool,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            idle_timeout: Duration::from_secs(30 * 60),
            shared_token: None,
            max_concurrent_calls: 4,
            timestamps: true,
        }
    }
}

struct Entry {
    writer: Mutex<LiveSession>,
    snapshot: RwLock<Arc<Snapshot>>,
}

impl Entry {
    fn read(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Runs `f` under the writer lock and publishes the new snapshot.
    fn write<T>(&self, f: impl FnOnce(&mut LiveSession) -> T) -> T {
        let mut s = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let out = f(&mut s);
        *self.snapshot.write().expect("snapshot lock") = Arc::new(s.snapshot());
        out
    }
}

pub struct Service {
    config: ServiceConfig,
    gateway: Arc<Gateway>,
    sessions: RwLock<BTreeMap<String, Arc<Entry>>>,
    counter: AtomicU64,
}

impl Service {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        let gateway = Arc::new(Gateway::new(config.max_concurrent_calls));
        Arc::new(Service {
            config,
            gateway,
            sessions: RwLock::new(BTreeMap::new()),
            counter: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn entry(&self, id: &str) -> Result<Arc<Entry>, ApiError> {
        self.sessions
            .read()
            .expect("session table")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session `{id}`")))
    }

    /// Reserves a session directory; `create_dir` fails for taken ids.
    fn reserve(&self, requested: Option<String>) -> Result<(String, PathBuf), ApiError> {
        std::fs::create_dir_all(&self.config.data_dir).map_err(internal)?;
        if let Some(id) = requested {
            let ok = !id.is_empty()
                && id.len() <= 64
                && id
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
                && !id.starts_with('.');
            if !ok {
                return Err(ApiError::bad(format!("invalid session id `{id}`")));
            }
            let dir = self.config.data_dir.join(&id);
            return match std::fs::create_dir(&dir) {
                Ok(()) => Ok((id, dir)),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(ApiError::new(
                    StatusCode::CONFLICT,
                    format!("session `{id}` already exists"),
                )),
                Err(e) => Err(internal(e)),
            };
        }
        loop {
            let n = self.counter.fetch_add(1, Ordering::Relaxed) + 1;
            let id = format!("live-{n:04}");
            let dir = self.config.data_dir.join(&id);
            match std::fs::create_dir(&dir) {
                Ok(()) => return Ok((id, dir)),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(internal(e)),
            }
        }
    }

    /// Creates and starts a session. Blocks while automated slots decide.
    pub fn create(&self, req: CreateSession) -> Result<(String, Arc<Snapshot>), ApiError> {
        let timestamps = req.timestamps.unwrap_or(self.config.timestamps);
        let (id, dir) = self.reserve(req.session_id.clone())?;
        let started = req
            .into_plan(id.clone())
            .and_then(|plan| LiveSession::start(plan, &dir, self.gateway.clone(), timestamps));
        let session = match started {
            Ok(s) => s,
            Err(e) => {
                let _ = std::fs::remove_dir_all(&dir);
                return Err(e.into());
            }
        };
        let snapshot = Arc::new(session.snapshot());
        let entry = Arc::new(Entry {
            writer: Mutex::new(session),
            snapshot: RwLock::new(snapshot.clone()),
        });
        self.sessions.write().expect("session table").insert(id.clone(), entry);
        tracing::info!(session_id = %id, "session created");
        Ok((id, snapshot))
    }

    pub fn submit(&self, id: &str, slot: usize, action: &str) -> Result<SubmitOutcome, ApiError> {
        let entry = self.entry(id)?;
        entry.write(|s| s.submit(slot, action)).map_err(ApiError::from)
    }

    pub fn advance(&self, id: &str) -> Result<Phase, ApiError> {
        let entry = self.entry(id)?;
        entry.write(|s| s.advance()).map_err(ApiError::from)
    }

    pub fn state(&self, id: &str, slot: usize) -> Result<SlotState, ApiError> {
        let snap = self.entry(id)?.read();
        snap.slots.get(&slot).cloned().ok_or_else(|| {
            ApiError::new(
                StatusCode::FORBIDDEN,
                format!("slot {slot} of the current match is not played by a human"),
            )
        })
    }

    pub fn summary(&self, id: &str) -> Result<SessionSummary, ApiError> {
        Ok(self.entry(id)?.read().summary.clone().expect("published summary"))
    }

    pub fn list(&self) -> Vec<SessionSummary> {
        let entries: Vec<Arc<Entry>> = self.sessions.read().expect("session table").values().cloned().collect();
        entries.iter().filter_map(|e| e.read().summary.clone()).collect()
    }

    pub fn log_text(&self, id: &str) -> Result<String, ApiError> {
        let entry = self.entry(id)?;
        let path = entry.writer.lock().unwrap_or_else(|p| p.into_inner()).log_path();
        std::fs::read_to_string(path).map_err(internal)
    }

    /// Expires sessions idle for longer than the configured timeout and
    /// returns their ids.
    pub fn expire_idle(&self, now: Instant) -> Vec<String> {
        let entries: Vec<(String, Arc<Entry>)> = self
            .sessions
            .read()
            .expect("session table")
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let limit = self.config.idle_timeout;
        let mut expired = Vec::new();
        for (id, entry) in entries {
            // sessions busy with a model call are not idle
            let Ok(s) = entry.writer.try_lock() else { continue };
            let idle = s.idle_for(now);
            let due = idle >= limit && s.phase() != Phase::Finished;
            drop(s);
            if due {
                if let Err(e) = entry.write(|s| s.expire(idle)) {
                    tracing::error!(session_id = %id, error = %e, "could not log expired session");
                }
                tracing::info!(session_id = %id, idle_secs = idle.as_secs(), "session expired");
                expired.push(id);
            }
        }
        expired
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, message)
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Domain(_) | Error::Validation(_) | Error::Config(_) | Error::Plan(_) | Error::Schema(_) => {
                StatusCode::BAD_REQUEST
            }
            Error::Gateway(_) | Error::ProtocolViolation { .. } => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<Rejection> for ApiError {
    fn from(r: Rejection) -> Self {
        match r {
            Rejection::Invalid(m) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, m),
            Rejection::Conflict(m) => ApiError::new(StatusCode::CONFLICT, m),
            Rejection::Gone(m) => ApiError::new(StatusCode::GONE, m),
            Rejection::Forbidden(m) => ApiError::new(StatusCode::FORBIDDEN, m),
            Rejection::Failed(e) => e.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(internal)?
}

#[derive(Serialize)]
struct Created {
    session_id: String,
    summary: SessionSummary,
    /// Messages shown so far to each human slot: instructions and the first
    /// decision prompt.
    instructions: BTreeMap<usize, Vec<String>>,
}

async fn create(State(svc): State<Arc<Service>>, body: Bytes) -> ApiResult<Response> {
    let req: CreateSession =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad(format!("invalid session request: {e}")))?;
    let (session_id, snap) = blocking(move || svc.create(req)).await?;
    let created = Created {
        session_id,
        summary: snap.summary.clone().expect("published summary"),
        instructions: snap.slots.iter().map(|(k, v)| (*k, v.view.messages.clone())).collect(),
    };
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn list(State(svc): State<Arc<Service>>) -> Json<Vec<SessionSummary>> {
    Json(svc.list())
}

async fn summary(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Json<SessionSummary>> {
    svc.summary(&id).map(Json)
}

#[derive(Deserialize)]
struct SlotQuery {
    slot: usize,
}

async fn state(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    Query(q): Query<SlotQuery>,
) -> ApiResult<Json<SlotState>> {
    svc.state(&id, q.slot).map(Json)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Choice {
    slot: usize,
    action: String,
}

async fn choose(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<SubmitOutcome>> {
    let c: Choice = serde_json::from_slice(&body).map_err(|e| ApiError::bad(format!("invalid choice: {e}")))?;
    blocking(move || svc.submit(&id, c.slot, &c.action)).await.map(Json)
}

async fn advance(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let phase = blocking(move || svc.advance(&id)).await?;
    Ok(Json(json!({ "phase": phase })))
}

async fn log(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Response> {
    let text = svc.log_text(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

async fn check_token(State(svc): State<Arc<Service>>, headers: HeaderMap, req: Request, next: Next) -> Response {
    if let Some(token) = &svc.config.shared_token {
        let given = headers.get(TOKEN_HEADER).map(|v| v.as_bytes());
        if given != Some(token.as_bytes()) {
            return ApiError::new(
                StatusCode::UNAUTHORIZED,
                format!("missing or wrong `{TOKEN_HEADER}` header"),
            )
            .into_response();
        }
    }
    next.run(req).await
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(summary))
        .route("/sessions/{id}/state", get(state))
        .route("/sessions/{id}/choices", post(choose))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/log", get(log))
        .layer(middleware::from_fn_with_state(svc.clone(), check_token))
        .with_state(svc)
}

/// Serves until the listener fails, expiring idle sessions in the
/// background.
pub async fn serve(listener: tokio::net::TcpListener, svc: Arc<Service>) -> std::io::Result<()> {
    let sweeper = svc.clone();
    let period = (svc.config.idle_timeout / 4).clamp(Duration::from_millis(10), Duration::from_secs(5));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            let svc = sweeper.clone();
            let _ = tokio::task::spawn_blocking(move || svc.expire_idle(Instant::now())).await;
        }
    });
    axum::serve(listener, router(svc)).await
}
