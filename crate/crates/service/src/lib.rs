//! HTTP control plane for live runs. Every run is owned by one worker
//! thread; handlers only read its snapshots or queue labels to it.

mod worker;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot, watch};
use tracing::info;

use rewardtree_core::agent::EpisodeTrace;
use rewardtree_core::api::{CreateRun, ErrorBody, LabelAccepted, LabelRequest, PairResponse, RunSummary};
use rewardtree_core::env::EnvSpec;
use rewardtree_core::orchestrator::{report_card, Mode, ReportCard, Session, TimelineExport};
use rewardtree_core::storage::read_store;
use rewardtree_core::tree::{rectangle_projection, RectangleProjection, TreeExport};
use rewardtree_core::Error;

pub use worker::Snapshot;
use worker::{Command, Worker};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(what: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("{what} not found"))
    }

    pub fn status(&self) -> StatusCode {
        self.status
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.status, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::StaleNonce(_) | Error::InvalidState(_) => StatusCode::CONFLICT,
            Error::InvalidLabel(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Config(_)
            | Error::Parse(_)
            | Error::SpecMismatch { .. }
            | Error::InvalidTrajectory(_)
            | Error::Json(_)
            | Error::Io { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

struct RunHandle {
    commands: mpsc::Sender<Command>,
    snapshots: watch::Receiver<Arc<Snapshot>>,
}

#[derive(Clone, Default)]
pub struct AppState {
    runs: Arc<RwLock<BTreeMap<String, RunHandle>>>,
    next_id: Arc<AtomicU64>,
    /// Run directories are created under this root when set.
    root: Option<PathBuf>,
}

impl AppState {
    pub fn new(root: Option<PathBuf>) -> Self {
        Self {
            root,
            ..Self::default()
        }
    }

    fn snapshot(&self, id: &str) -> Result<Arc<Snapshot>, ApiError> {
        let runs = self.runs.read().expect("run table lock");
        let handle = runs.get(id).ok_or_else(|| ApiError::not_found(format!("run {id:?}")))?;
        let snap = handle.snapshots.borrow().clone();
        Ok(snap)
    }

    /// Builds the session described by `req` and hands it to a new worker.
    pub async fn start_run(&self, req: CreateRun) -> Result<RunSummary, ApiError> {
        let id = format!("run-{:04}", self.next_id.fetch_add(1, Ordering::SeqCst) + 1);
        let out = self.root.as_ref().map(|r| r.join(&id));
        let labeler = req.labeler;
        let session = tokio::task::spawn_blocking(move || build_session(req))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
        let (commands, snapshots) = Worker::spawn(id.clone(), session, out, labeler)?;
        let summary = snapshots.borrow().summary.clone();
        self.runs
            .write()
            .expect("run table lock")
            .insert(id.clone(), RunHandle { commands, snapshots });
        info!(run = %id, mode = ?summary.mode, "run started");
        Ok(summary)
    }
}

fn build_session(req: CreateRun) -> Result<Session, Error> {
    let spec = match req.env_spec {
        Some(spec) => spec,
        None => EnvSpec::builtin(&req.env).map_err(|e| Error::Parse(e.to_string()))?,
    };
    match req.mode {
        Mode::Online => Session::online(req.config, spec),
        Mode::Offline => {
            let dir = req
                .store
                .ok_or_else(|| Error::Parse("offline runs need a store directory".into()))?;
            let (store, tag) = read_store(&dir)?;
            if let Some(tag) = &tag {
                spec.check_tag(tag)?;
            }
            Session::offline(req.config, store, Some(spec))
        }
    }
}

async fn list_runs(State(app): State<AppState>) -> Json<Vec<RunSummary>> {
    let runs = app.runs.read().expect("run table lock");
    Json(runs.values().map(|h| h.snapshots.borrow().summary.clone()).collect())
}

async fn create_run(State(app): State<AppState>, Json(req): Json<CreateRun>) -> Result<impl IntoResponse, ApiError> {
    let summary = app.start_run(req).await?;
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn get_run(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<RunSummary> {
    Ok(Json(app.snapshot(&id)?.summary.clone()))
}

async fn get_pair(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<PairResponse> {
    Ok(Json(app.snapshot(&id)?.pair.clone()))
}

async fn post_label(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<LabelRequest>,
) -> ApiResult<LabelAccepted> {
    let commands = {
        let runs = app.runs.read().expect("run table lock");
        let handle = runs.get(&id).ok_or_else(|| ApiError::not_found(format!("run {id:?}")))?;
        handle.commands.clone()
    };
    let (reply, rx) = oneshot::channel();
    let gone = || ApiError::new(StatusCode::GONE, "run worker has stopped");
    commands
        .send(Command::Label {
            nonce: req.nonce,
            y: req.y,
            reply,
        })
        .await
        .map_err(|_| gone())?;
    Ok(Json(rx.await.map_err(|_| gone())??))
}

#[derive(Debug, Deserialize)]
struct VersionQuery {
    version: Option<u64>,
}

async fn get_tree(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<VersionQuery>,
) -> ApiResult<TreeExport> {
    let snap = app.snapshot(&id)?;
    let v = q.version.unwrap_or(snap.summary.tree_version);
    snap.tree_exports
        .get(v as usize)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("tree version {v}")))
}

async fn get_timeline(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<TimelineExport> {
    Ok(Json(app.snapshot(&id)?.timeline.as_ref().clone()))
}

async fn get_traces(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Vec<EpisodeTrace>> {
    Ok(Json(app.snapshot(&id)?.traces.as_ref().clone()))
}

#[derive(Debug, Deserialize)]
struct RectangleQuery {
    d1: String,
    d2: String,
    version: Option<u64>,
}

/// A dimension given by index or by name.
fn resolve_dim(names: &[String], key: &str) -> Result<usize, ApiError> {
    key.parse::<usize>()
        .ok()
        .or_else(|| names.iter().position(|n| n == key))
        .filter(|&d| d < names.len())
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, format!("unknown dimension {key:?}")))
}

async fn get_rectangles(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<RectangleQuery>,
) -> ApiResult<RectangleProjection> {
    let snap = app.snapshot(&id)?;
    let names = &snap.store.dimension_names;
    let dims = (resolve_dim(names, &q.d1)?, resolve_dim(names, &q.d2)?);
    let v = q.version.unwrap_or(snap.summary.tree_version);
    let tree = snap
        .trees
        .get(v as usize)
        .ok_or_else(|| ApiError::not_found(format!("tree version {v}")))?;
    Ok(Json(rectangle_projection(tree, dims, &snap.store)?))
}

async fn get_report(
    State(app): State<AppState>,
    Path((id, episode)): Path<(String, usize)>,
) -> ApiResult<ReportCard> {
    let snap = app.snapshot(&id)?;
    let v = snap.summary.tree_version;
    let tree = &snap.trees[v as usize];
    Ok(Json(report_card(tree, v, &snap.store, episode, snap.spec.as_deref())?))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/runs", get(list_runs).post(create_run))
        .route("/v1/runs/{id}", get(get_run))
        .route("/v1/runs/{id}/pair", get(get_pair))
        .route("/v1/runs/{id}/label", post(post_label))
        .route("/v1/runs/{id}/tree", get(get_tree))
        .route("/v1/runs/{id}/timeline", get(get_timeline))
        .route("/v1/runs/{id}/traces", get(get_traces))
        .route("/v1/runs/{id}/rectangles", get(get_rectangles))
        .route("/v1/runs/{id}/report/{episode}", get(get_report))
        .with_state(state)
}

/// Serves on `listener` until ctrl-c.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
