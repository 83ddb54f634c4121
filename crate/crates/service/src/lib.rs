//! HTTP API over planning sessions.
//!
//! | method | path                          | body              |
//! |--------|-------------------------------|-------------------|
//! | POST   | `/sessions`                   | session config    |
//! | GET    | `/sessions/{id}`              |                   |
//! | POST   | `/sessions/{id}/step`         |                   |
//! | POST   | `/sessions/{id}/feedback`     | `{"q": 0 or 1}`   |
//! | GET    | `/sessions/{id}/metrics`      |                   |
//! | GET    | `/sessions/{id}/events?from=k`|                   |
//! | GET    | `/healthz`                    |                   |
//!
//! Each session is persisted as `<data>/<id>.jsonl` and recovered on
//! startup. Requests to one session are serialized by its mutex.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use atp_core::estimator::Label;
use atp_core::matrix::Matrix;
use atp_core::model::Srdm;
use atp_core::session::{
    load_session, FieldProblem, MetricsPoint, Mode, PendingRound, RoundRecord, Session,
    SessionConfig, SessionError, Status, UpdateOutcome,
};
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

type Shared = Arc<Mutex<Session>>;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    data_dir: PathBuf,
    sessions: RwLock<HashMap<String, Shared>>,
}

impl AppState {
    /// Opens `data_dir` (creating it if needed) and recovers every session
    /// log found there. Unreadable logs are skipped with a warning.
    pub fn open(data_dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let data_dir = data_dir.into();
        std::fs::create_dir_all(&data_dir)?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(&data_dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let Some(id) = path
                .file_stem()
                .and_then(|s| s.to_str())
                .map(str::to_string)
            else {
                continue;
            };
            match load_session(&path) {
                Ok((s, _warnings)) => {
                    sessions.insert(id, Arc::new(Mutex::new(s)));
                }
                Err(e) => tracing::warn!(path = %path.display(), "skipping session log: {e}"),
            }
        }
        tracing::info!(count = sessions.len(), dir = %data_dir.display(), "sessions recovered");
        Ok(Self {
            inner: Arc::new(Inner {
                data_dir,
                sessions: RwLock::new(sessions),
            }),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.inner.data_dir
    }

    pub fn session_count(&self) -> usize {
        self.inner.sessions.read().expect("lock").len()
    }

    fn get(&self, id: &str) -> Result<Shared, ApiError> {
        self.inner
            .sessions
            .read()
            .expect("lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session `{id}`")))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/step", post(step))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/events", get(events))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub problems: Vec<FieldProblem>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                problems: Vec::new(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::InvalidConfig(_) => StatusCode::BAD_REQUEST,
            SessionError::AwaitingFeedback(_)
            | SessionError::NotAwaiting
            | SessionError::WrongMode(_) => StatusCode::CONFLICT,
            SessionError::BudgetExhausted(_) => StatusCode::GONE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let problems = match &e {
            SessionError::InvalidConfig(p) => p.clone(),
            _ => Vec::new(),
        };
        Self {
            status,
            body: ErrorBody {
                error: e.to_string(),
                problems,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionHandle {
    pub id: String,
    pub created_at: u64,
    pub mode: Mode,
    pub status: Status,
    pub rounds_done: u64,
    pub rounds: u64,
}

fn handle(id: &str, s: &Session) -> SessionHandle {
    SessionHandle {
        id: id.to_string(),
        created_at: s.created_at(),
        mode: s.config().mode,
        status: s.status(),
        rounds_done: s.rounds_done(),
        rounds: s.config().rounds,
    }
}

/// What a client sees of a round. The label and update fields are absent
/// while the round awaits feedback.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundView {
    pub status: Status,
    pub round: u64,
    pub srdm: Srdm,
    pub plan: Matrix,
    pub effect: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delivered: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub update: Option<UpdateOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regret: Option<f64>,
}

impl RoundView {
    fn completed(r: &RoundRecord, status: Status) -> Self {
        Self {
            status,
            round: r.round,
            srdm: r.srdm.clone(),
            plan: r.realized.clone(),
            effect: r.effect,
            q: Some(r.label.into()),
            delivered: Some(r.delivered),
            update: Some(r.update.clone()),
            estimate: Some(r.estimate.clone()),
            regret: r.regret,
        }
    }

    fn pending(p: &PendingRound, status: Status) -> Self {
        Self {
            status,
            round: p.round,
            srdm: p.srdm.clone(),
            plan: p.realized.clone(),
            effect: p.effect,
            q: None,
            delivered: None,
            update: None,
            estimate: None,
            regret: None,
        }
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, msg)
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<SessionConfig>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionHandle>), ApiError> {
    let Json(config) = body.map_err(|e| bad_request(e.body_text()))?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let path = state.data_dir().join(format!("{id}.jsonl"));
    let session = Session::create(config, &path).inspect_err(|_| {
        let _ = std::fs::remove_file(&path);
    })?;
    let h = handle(&id, &session);
    state
        .inner
        .sessions
        .write()
        .expect("lock")
        .insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(h)))
}

async fn get_session(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionHandle>, ApiError> {
    let shared = state.get(&id)?;
    let s = shared.lock().expect("lock");
    Ok(Json(handle(&id, &s)))
}

/// Runs a blocking session operation off the async workers.
async fn with_session<T: Send + 'static>(
    shared: Shared,
    f: impl FnOnce(&mut Session) -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(move || {
        let mut s = shared.lock().expect("lock");
        f(&mut s)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn step(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<RoundView>, ApiError> {
    let shared = state.get(&id)?;
    let view = with_session(shared, |s| {
        match s.status() {
            Status::AwaitingFeedback => {
                return Err(ApiError::new(StatusCode::CONFLICT, "round awaits feedback"))
            }
            Status::Done => return Err(ApiError::new(StatusCode::GONE, "session is done")),
            Status::Running => {}
        }
        if s.config().is_simulated() {
            let r = s.run_round()?;
            Ok(RoundView::completed(&r, s.status()))
        } else {
            let p = s.begin_round()?;
            Ok(RoundView::pending(&p, s.status()))
        }
    })
    .await?;
    Ok(Json(view))
}

#[derive(Debug, Deserialize)]
struct Feedback {
    q: serde_json::Value,
}

async fn feedback(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<Feedback>, JsonRejection>,
) -> Result<Json<RoundView>, ApiError> {
    let shared = state.get(&id)?;
    let Json(fb) = body.map_err(|e| bad_request(e.body_text()))?;
    let label =
        fb.q.as_u64()
            .and_then(|q| u8::try_from(q).ok())
            .and_then(|q| Label::try_from(q).ok())
            .ok_or_else(|| bad_request(format!("q must be 0 or 1, got {}", fb.q)))?;
    let view = with_session(shared, move |s| {
        if s.status() != Status::AwaitingFeedback {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "no round awaits feedback",
            ));
        }
        let r = s.submit_feedback(label)?;
        Ok(RoundView::completed(&r, s.status()))
    })
    .await?;
    Ok(Json(view))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsView {
    pub mode: Mode,
    pub series: Vec<MetricsPoint>,
}

async fn metrics(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<MetricsView>, ApiError> {
    let shared = state.get(&id)?;
    let s = shared.lock().expect("lock");
    Ok(Json(MetricsView {
        mode: s.config().mode,
        series: s.metrics().to_vec(),
    }))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    from: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EventsView {
    pub from: usize,
    /// Index to poll from next.
    pub next: usize,
    pub events: Vec<serde_json::Value>,
}

/// Removes the hidden gains from a config event unless the session
/// reveals them.
fn redact(mut event: serde_json::Value, reveal: bool) -> serde_json::Value {
    if !reveal && event["type"] == "config" {
        if let Some(cfg) = event.get_mut("config").and_then(|c| c.as_object_mut()) {
            cfg.remove("truth");
        }
    }
    event
}

async fn events(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    query: Result<Query<EventsQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<EventsView>, ApiError> {
    let Query(q) = query.map_err(|e| bad_request(e.body_text()))?;
    let shared = state.get(&id)?;
    let s = shared.lock().expect("lock");
    let reveal = s.config().reveal_truth && s.config().is_simulated();
    let all = s.events();
    let events = all
        .iter()
        .skip(q.from)
        .map(|line| serde_json::from_str(line).map(|v| redact(v, reveal)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(EventsView {
        from: q.from,
        next: all.len().max(q.from),
        events,
    }))
}
