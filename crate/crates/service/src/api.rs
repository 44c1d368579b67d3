//! Routes and handlers.

use std::collections::HashMap;
use std::convert::Infallible;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use fuzzcfg::io::{serialize_model, ParseFailure, ParseFailureKind};
use fuzzcfg::pipeline::{OptionChange, ScoreAggregator, UpdateRejected};
use fuzzcfg::{AgentId, Update};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast;

use crate::session::{
    execute, log_line, Computed, EngineEvent, EventBody, LogEntry, RunJob, Session,
};

type Shared = Arc<Mutex<Session>>;

/// Service-wide state: the session table and the optional log directory.
#[derive(Clone, Default)]
pub struct AppState {
    inner: Arc<Inner>,
}

#[derive(Default)]
struct Inner {
    sessions: Mutex<HashMap<String, Shared>>,
    next: AtomicU64,
    log_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends every session's update log to `<dir>/<id>.jsonl`.
    pub fn with_log_dir(dir: impl Into<PathBuf>) -> Self {
        AppState {
            inner: Arc::new(Inner {
                log_dir: Some(dir.into()),
                ..Inner::default()
            }),
        }
    }

    fn session(&self, id: &str) -> Result<Shared, ApiError> {
        lock(&self.inner.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id:?}")))
    }

    /// Writes log entries the file has not seen yet.
    fn persist(&self, session: &Session, from: usize) {
        let Some(dir) = &self.inner.log_dir else { return };
        let path = dir.join(format!("{}.jsonl", session.id()));
        let lines: String = session.log()[from..]
            .iter()
            .map(|e| log_line(e) + "\n")
            .collect();
        let written = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .and_then(|mut f| f.write_all(lines.as_bytes()));
        if let Err(e) = written {
            eprintln!("fuzzcfg-service: cannot append to {}: {e}", path.display());
        }
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/updates", post(post_update))
        .route("/sessions/{id}/runs", post(start_run))
        .route("/sessions/{id}/result", get(get_result))
        .route("/sessions/{id}/events", get(stream_events))
        .route("/sessions/{id}/log", get(get_log))
        .route("/sessions/{id}/model", get(get_model))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
    details: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.into(),
            message: message.into(),
            details: Value::Null,
        }
    }

    fn with(mut self, key: &str, value: impl serde::Serialize) -> Self {
        if self.details.is_null() {
            self.details = json!({});
        }
        self.details[key] = serde_json::to_value(value).expect("error details serialize");
        self
    }

    fn bad_json(e: serde_json::Error) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "malformed_request", e.to_string())
    }

    fn rejected(r: UpdateRejected) -> Self {
        let status = if r.code == crate::session::MALFORMED {
            StatusCode::BAD_REQUEST
        } else {
            StatusCode::UNPROCESSABLE_ENTITY
        };
        ApiError::new(status, r.code.clone(), r.to_string()).with("reasons", r.reasons)
    }

    fn parse(f: ParseFailure) -> Self {
        let (status, code) = match f.kind {
            ParseFailureKind::Syntax => (StatusCode::BAD_REQUEST, "syntax_error"),
            ParseFailureKind::Semantic => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_model"),
        };
        ApiError::new(status, code, f.to_string()).with("issues", f.issues)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if let Value::Object(extra) = self.details {
            body.as_object_mut().expect("object").extend(extra);
        }
        (self.status, Json(body)).into_response()
    }
}

fn decode<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> Result<T, serde_json::Error> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body)
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    document: String,
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let body: CreateBody = decode(&body).map_err(ApiError::bad_json)?;
    let id = format!("s{}", state.inner.next.fetch_add(1, Ordering::SeqCst) + 1);
    let session = Session::create(id.clone(), &body.document).map_err(ApiError::parse)?;
    let reply = json!({
        "id": id,
        "revision": session.revision(),
        "warnings": session.warnings(),
    });
    state.persist(&session, 0);
    lock(&state.inner.sessions).insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(reply)).into_response())
}

async fn post_update(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let shared = state.session(&id)?;
    let mut s = lock(&shared);
    let from = s.log().len();
    let outcome = match serde_json::from_slice::<Update>(&body) {
        Ok(update) => s.post_update(update),
        Err(e) => Err(s.reject_malformed(e.to_string())),
    };
    state.persist(&s, from);
    let revision = outcome.map_err(ApiError::rejected)?;
    Ok(Json(json!({ "revision": revision, "running": s.is_running() })))
}

/// Options of a run request. Each present field becomes a `set_option`
/// update before the run starts, so the run stays reproducible from the
/// update log.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RunBody {
    alpha: Option<f64>,
    epsilon: Option<f64>,
    generalized: Option<bool>,
    max_sweeps: Option<usize>,
    score: Option<ScoreAggregator>,
    sweep_order: Option<Vec<AgentId>>,
    #[serde(default)]
    wait: bool,
}

impl RunBody {
    fn changes(&self) -> Vec<OptionChange> {
        let mut out = Vec::new();
        out.extend(self.alpha.map(OptionChange::Alpha));
        out.extend(self.epsilon.map(OptionChange::Epsilon));
        out.extend(self.generalized.map(OptionChange::Generalized));
        out.extend(self.max_sweeps.map(OptionChange::MaxSweeps));
        out.extend(self.score.map(OptionChange::Score));
        out.extend(self.sweep_order.clone().map(OptionChange::SweepOrder));
        out
    }
}

async fn start_run(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let shared = state.session(&id)?;
    let run: RunBody = decode(&body).map_err(ApiError::bad_json)?;
    let (job, mut rx) = {
        let mut s = lock(&shared);
        let from = s.log().len();
        let applied = s.apply_options(run.changes());
        if applied.is_err() {
            state.persist(&s, from);
        }
        applied.map_err(ApiError::rejected)?;
        let job = s.begin_run();
        state.persist(&s, from);
        (job, s.subscribe(u64::MAX).1)
    };
    let revision = job.revision;
    spawn_run(shared, job);
    if !run.wait {
        return Ok((StatusCode::ACCEPTED, Json(json!({ "revision": revision }))).into_response());
    }
    // The run may be superseded and restarted on a newer revision; the
    // first result or failure at or past this revision answers.
    loop {
        match rx.recv().await {
            Ok(EngineEvent {
                revision: r,
                body: EventBody::ResultReady { result },
                ..
            }) if r >= revision => {
                return Ok(Json(json!({ "revision": r, "result": result })).into_response());
            }
            Ok(EngineEvent {
                body: EventBody::RunFailed { code, message },
                revision: r,
                ..
            }) if r >= revision => {
                return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, code, message));
            }
            Ok(_) | Err(broadcast::error::RecvError::Lagged(_)) => {}
            Err(broadcast::error::RecvError::Closed) => {
                return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "run_lost", "session closed"));
            }
        }
    }
}

/// Runs `job` on the blocking pool, following restarts after supersession.
fn spawn_run(shared: Shared, mut job: RunJob) {
    tokio::task::spawn_blocking(move || loop {
        let outcome = execute(&job, &mut |body| lock(&shared).progress(&job, body));
        match lock(&shared).finish_run(&job, outcome) {
            (_, Some(next)) => job = next,
            (_, None) => return,
        }
    });
}

async fn get_result(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    let shared = state.session(&id)?;
    let s = lock(&shared);
    let (result_revision, result) = match s.computed() {
        Some(Computed { revision, result }) => (Some(*revision), Some(result)),
        None => (None, None),
    };
    Ok(Json(json!({
        "revision": s.revision(),
        "result_revision": result_revision,
        "result": result,
        "running": s.is_running(),
    })))
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    since: u64,
    #[serde(default = "yes")]
    follow: bool,
}

fn yes() -> bool {
    true
}

fn sse_event(e: &EngineEvent) -> Event {
    Event::default()
        .id(e.seq.to_string())
        .event(e.body.kind())
        .data(serde_json::to_string(e).expect("events serialize"))
}

async fn stream_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let shared = state.session(&id)?;
    let (stored, rx) = lock(&shared).subscribe(q.since);
    let backlog = stream::iter(stored.iter().map(sse_event).collect::<Vec<_>>());
    let live = stream::unfold((rx, q.follow), |(mut rx, follow)| async move {
        if !follow {
            return None;
        }
        // A lagging subscriber ends its stream; it resumes with `since`.
        let e = rx.recv().await.ok()?;
        Some((sse_event(&e), (rx, follow)))
    });
    Ok(Sse::new(backlog.chain(live).map(Ok)).keep_alive(KeepAlive::default()))
}

async fn get_log(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let shared = state.session(&id)?;
    let text: String = lock(&shared)
        .log()
        .iter()
        .map(|e: &LogEntry| log_line(e) + "\n")
        .collect();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

async fn get_model(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let shared = state.session(&id)?;
    let text = serialize_model(lock(&shared).model());
    Ok(([(header::CONTENT_TYPE, "application/toml")], text).into_response())
}
