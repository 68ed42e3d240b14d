//! HTTP/SSE control API over a [`RunRegistry`].
//!
//! Handlers only read snapshots or enqueue signals; agents always run on
//! the worker thread owned by the run.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ResumeError, RunEntry, RunRegistry, RunSettings, RunStatus, StepEvent};
use crate::intervention::{Guidance, GuidanceKind, SignalSource};
use crate::workspace::{render_dir_listing, DirEntryInfo, WorkspaceError, WorkspaceHandle, WorkspacePolicy};

/// JSON error body with a matching status code.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn unknown_run(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown run '{id}'"))
    }
}

impl From<WorkspaceError> for ApiError {
    fn from(e: WorkspaceError) -> Self {
        let status = match &e {
            WorkspaceError::SandboxViolation { .. } => StatusCode::FORBIDDEN,
            WorkspaceError::NotFound { .. } => StatusCode::NOT_FOUND,
            WorkspaceError::UnsupportedFormat { .. } => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            WorkspaceError::Argument(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Deserialize)]
pub struct CreateRun {
    pub task: String,
    #[serde(default)]
    pub config: RunSettings,
}

#[derive(Debug, Deserialize)]
pub struct GuidanceBody {
    pub text: String,
    #[serde(default)]
    pub kind: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct PathQuery {
    #[serde(default)]
    pub path: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TreeView {
    pub path: String,
    pub entries: Vec<DirEntryInfo>,
    /// The same text `list_dir` returns to agents.
    pub listing: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FileView {
    pub path: String,
    pub content: String,
}

pub fn router(registry: Arc<RunRegistry>) -> Router {
    Router::new()
        .route("/runs", get(list_runs).post(create_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/events", get(events))
        .route("/runs/{id}/workspace/tree", get(tree))
        .route("/runs/{id}/workspace/file", get(file))
        .route("/runs/{id}/interrupt", post(interrupt))
        .route("/runs/{id}/guidance", post(guidance))
        .route("/runs/{id}/resume", post(resume))
        .with_state(registry)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(registry: Arc<RunRegistry>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "control API listening");
    axum::serve(listener, router(registry)).await
}

fn lookup(registry: &RunRegistry, id: &str) -> ApiResult<Arc<RunEntry>> {
    registry.get(id).ok_or_else(|| ApiError::unknown_run(id))
}

async fn list_runs(State(registry): State<Arc<RunRegistry>>) -> impl IntoResponse {
    Json(registry.list())
}

async fn get_run(State(registry): State<Arc<RunRegistry>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(lookup(&registry, &id)?.descriptor()))
}

async fn create_run(State(registry): State<Arc<RunRegistry>>, Json(body): Json<CreateRun>) -> ApiResult<Response> {
    let registry = registry.clone();
    let entry = tokio::task::spawn_blocking(move || registry.start(&body.task, &body.config))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e))?;
    Ok((StatusCode::CREATED, Json(entry.descriptor())).into_response())
}

async fn interrupt(State(registry): State<Arc<RunRegistry>>, Path(id): Path<String>) -> ApiResult<Response> {
    let entry = lookup(&registry, &id)?;
    if !entry.is_active() {
        return Err(ApiError::new(StatusCode::CONFLICT, format!("run '{id}' is not running")));
    }
    let raised = entry.channel().raise(SignalSource::Api, chrono::Utc::now());
    Ok((StatusCode::ACCEPTED, Json(json!({ "raised": raised }))).into_response())
}

/// Queues guidance. Unless the run is already waiting for it, also raises a signal.
async fn guidance(
    State(registry): State<Arc<RunRegistry>>,
    Path(id): Path<String>,
    Json(body): Json<GuidanceBody>,
) -> ApiResult<Response> {
    let entry = lookup(&registry, &id)?;
    if !entry.is_active() {
        return Err(ApiError::new(StatusCode::CONFLICT, format!("run '{id}' is not running")));
    }
    if body.text.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "guidance text must not be empty"));
    }
    let kind = match body.kind.as_deref() {
        None => GuidanceKind::default(),
        Some(k) => k.parse().map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, e))?,
    };
    entry.guidance().submit(Guidance::new(body.text, kind));
    let raised = entry.status() != RunStatus::SuspendedForGuidance
        && entry.channel().raise(SignalSource::Api, chrono::Utc::now());
    Ok((StatusCode::ACCEPTED, Json(json!({ "queued": true, "raised": raised }))).into_response())
}

async fn resume(State(registry): State<Arc<RunRegistry>>, Path(id): Path<String>) -> ApiResult<Response> {
    let registry = registry.clone();
    let rid = id.clone();
    let result = tokio::task::spawn_blocking(move || registry.resume(&rid))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    match result {
        Ok(entry) => Ok((StatusCode::ACCEPTED, Json(entry.descriptor())).into_response()),
        Err(ResumeError::Unknown) => Err(ApiError::unknown_run(&id)),
        Err(ResumeError::Running) => Err(ApiError::new(StatusCode::CONFLICT, format!("run '{id}' is already running"))),
        Err(ResumeError::Session(m)) => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, m)),
    }
}

fn workspace_of(entry: &RunEntry) -> ApiResult<WorkspaceHandle> {
    Ok(WorkspaceHandle::open(entry.root())?)
}

async fn tree(
    State(registry): State<Arc<RunRegistry>>,
    Path(id): Path<String>,
    Query(q): Query<PathQuery>,
) -> ApiResult<Json<TreeView>> {
    let entry = lookup(&registry, &id)?;
    let ws = workspace_of(&entry)?;
    let path = q.path.unwrap_or_else(|| ".".into());
    let entries = ws.list_dir(&WorkspacePolicy::manager("control_api"), &path)?;
    let listing = render_dir_listing(&path, &entries);
    Ok(Json(TreeView { path, entries, listing }))
}

async fn file(
    State(registry): State<Arc<RunRegistry>>,
    Path(id): Path<String>,
    Query(q): Query<PathQuery>,
) -> ApiResult<Json<FileView>> {
    let entry = lookup(&registry, &id)?;
    let ws = workspace_of(&entry)?;
    let path = q
        .path
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "query parameter 'path' is required"))?;
    let content = ws.see_file(&WorkspacePolicy::manager("control_api"), &path)?;
    Ok(Json(FileView { path, content }))
}

fn last_event_id(headers: &HeaderMap) -> u64 {
    headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

fn to_sse(event: &StepEvent) -> Event {
    Event::default()
        .id(event.id.to_string())
        .event("step")
        .json_data(event)
        .unwrap_or_else(|_| Event::default().comment("unserializable step"))
}

/// Replays events after `Last-Event-ID`, then follows the run live. The
/// stream ends with an `end` event once the run has stopped.
async fn events(
    State(registry): State<Arc<RunRegistry>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let entry = lookup(&registry, &id)?;
    let cursor = last_event_id(&headers);
    let rx = entry.subscribe();
    let stream = futures::stream::unfold(
        Some((entry, cursor, rx, std::collections::VecDeque::<StepEvent>::new())),
        |state| async move {
            let (entry, mut cursor, mut rx, mut buffered) = state?;
            loop {
                if let Some(ev) = buffered.pop_front() {
                    cursor = ev.id;
                    return Some((Ok(to_sse(&ev)), Some((entry, cursor, rx, buffered))));
                }
                rx.borrow_and_update();
                let settled = entry.is_settled();
                let fresh = entry.events_after(cursor);
                if !fresh.is_empty() {
                    buffered.extend(fresh);
                    continue;
                }
                if settled {
                    let end = Event::default()
                        .event("end")
                        .json_data(entry.descriptor())
                        .unwrap_or_else(|_| Event::default().event("end"));
                    return Some((Ok(end), None));
                }
                if rx.changed().await.is_err() {
                    return None;
                }
            }
        },
    );
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
