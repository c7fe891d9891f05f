//! HTTP annotation service: proposes batches with the configured
//! acquisition strategy, records human labels in an append-only log and
//! retrains in the background.

mod error;
mod project;
pub mod wire;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::sync::{Mutex, RwLock};

pub use error::{ErrorBody, ServiceError};
pub use project::{offline_next_batch, propose, Project, CONTEXT_DEPTH};
use wire::*;

pub const DATA_DIR_ENV: &str = "DIALCART_DATA_DIR";

type Handle = Arc<Mutex<Project>>;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    root: PathBuf,
    projects: RwLock<HashMap<String, Handle>>,
    counter: AtomicU64,
}

impl AppState {
    /// Open (or create) the data directory and replay every project in it.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let root = root.as_ref().to_owned();
        std::fs::create_dir_all(&root)?;
        let mut projects = HashMap::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("project.json").is_file())
            .collect();
        entries.sort();
        for dir in entries {
            let project = Project::open(&dir)?;
            projects.insert(project.id().to_owned(), Arc::new(Mutex::new(project)));
        }
        let counter = AtomicU64::new(projects.len() as u64);
        Ok(Self { inner: Arc::new(Inner { root, projects: RwLock::new(projects), counter }) })
    }

    /// Data directory from `DIALCART_DATA_DIR`, defaulting to
    /// `./dialcart-data`.
    pub fn from_env() -> Result<Self, ServiceError> {
        Self::open(std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("dialcart-data"), PathBuf::from))
    }

    pub fn root(&self) -> &Path {
        &self.inner.root
    }

    async fn project(&self, id: &str) -> Result<Handle, ServiceError> {
        self.inner.projects.read().await.get(id).cloned().ok_or_else(|| ServiceError::ProjectNotFound(id.to_owned()))
    }

    fn new_id(&self) -> String {
        let n = self.inner.counter.fetch_add(1, Ordering::SeqCst) + 1;
        let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_nanos());
        let salt = dialcart_core::reporting::sha256_hex(format!("{n}:{nanos}:{}", std::process::id()).as_bytes());
        format!("p{n:04}-{}", &salt[..10])
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/projects", post(create_project))
        .route("/projects/{id}/batch", get(next_batch))
        .route("/projects/{id}/labels", post(submit_labels))
        .route("/projects/{id}/retrain", post(retrain))
        .route("/projects/{id}/status", get(status))
        .route("/projects/{id}/export", get(export))
        .with_state(state)
}

/// Bind and serve until ctrl-c.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn create_project(
    State(state): State<AppState>,
    body: Result<Json<CreateProject>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<ProjectCreated>, ServiceError> {
    let Json(req) = body.map_err(|e| ServiceError::invalid("invalid_request", e.body_text(), serde_json::Value::Null))?;
    let id = state.new_id();
    let root = state.inner.root.clone();
    let project = tokio::task::spawn_blocking(move || Project::create(&root, id, &req))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    let status = project.status();
    let created = ProjectCreated { project_id: project.id().to_owned(), total: status.total, heldout: status.heldout };
    state.inner.projects.write().await.insert(created.project_id.clone(), Arc::new(Mutex::new(project)));
    Ok(Json(created))
}

#[derive(Debug, Deserialize)]
struct BatchQuery {
    size: Option<usize>,
    annotator: Option<String>,
}

async fn next_batch(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    query: Result<Query<BatchQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<BatchTicket>, ServiceError> {
    let Query(q) = query.map_err(|e| ServiceError::invalid("invalid_query", e.body_text(), serde_json::Value::Null))?;
    let handle = state.project(&id).await?;
    let mut project = handle.lock().await;
    Ok(Json(project.next_batch(q.size, q.annotator.as_deref().unwrap_or(""))?))
}

async fn submit_labels(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<SubmitLabels>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<LabelsAccepted>, ServiceError> {
    let Json(req) = body.map_err(|e| ServiceError::invalid("invalid_request", e.body_text(), serde_json::Value::Null))?;
    let handle = state.project(&id).await?;
    let mut project = handle.lock().await;
    Ok(Json(project.submit_labels(req)?))
}

#[derive(Debug, Deserialize)]
struct RetrainQuery {
    #[serde(default)]
    wait: bool,
}

async fn retrain(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<RetrainQuery>,
) -> Result<(axum::http::StatusCode, Json<RetrainStarted>), ServiceError> {
    let handle = state.project(&id).await?;
    let job = handle.lock().await.start_retrain()?;
    let generation = job.generation();
    let task = tokio::spawn(async move {
        let result = match tokio::task::spawn_blocking(move || job.run()).await {
            Ok(r) => r,
            Err(e) => Err(ServiceError::Internal(e.to_string())),
        };
        handle.lock().await.finish_retrain(result)
    });
    if q.wait {
        task.await.map_err(|e| ServiceError::Internal(e.to_string()))??;
        return Ok((axum::http::StatusCode::OK, Json(RetrainStarted { generation, state: ProjectState::Idle })));
    }
    Ok((axum::http::StatusCode::ACCEPTED, Json(RetrainStarted { generation, state: ProjectState::Training })))
}

async fn status(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<ProjectStatus>, ServiceError> {
    let handle = state.project(&id).await?;
    let project = handle.lock().await;
    Ok(Json(project.status()))
}

async fn export(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<ProjectExport>, ServiceError> {
    let handle = state.project(&id).await?;
    let project = handle.lock().await;
    Ok(Json(project.export()?))
}
