//! HTTP exploration API over the gallery, the image store and the job queue.

use std::fs;
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use seeds_core::bridge::Bridge;
use seeds_core::composer::{
    Clock, CombinationJob, ComposeError, Composer, JobKind, JobQueue, JobRequest, JobStatus, DEFAULT_SEEDS,
};
use seeds_core::manifest::{read_manifest, ManifestWriter};
use seeds_core::store::{ImageRef, StoreError};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tracing::info;

use crate::gallery::{Gallery, GalleryEntry, GalleryError, Origin};

pub const API_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("address {0} is already in use")]
    PortInUse(SocketAddr),
    #[error("store directory {path} is not writable: {reason}")]
    StoreUnwritable { path: PathBuf, reason: String },
    #[error(transparent)]
    Gallery(#[from] GalleryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub struct AppState {
    bridge: Arc<Bridge>,
    gallery: Gallery,
    queue: JobQueue,
}

fn job_number(id: &str) -> Option<u64> {
    id.strip_prefix("job-")?.parse().ok()
}

impl AppState {
    /// Opens the gallery and jobs manifests under `<store>/manifests` and
    /// reloads finished jobs.
    pub fn open(bridge: Arc<Bridge>, concurrency: usize, clock: Option<Arc<dyn Clock>>) -> Result<Self, ServeError> {
        let root = bridge.store().root().to_path_buf();
        let manifests = root.join("manifests");
        let unwritable = |e: std::io::Error| ServeError::StoreUnwritable {
            path: root.clone(),
            reason: e.to_string(),
        };
        fs::create_dir_all(&manifests).map_err(unwritable)?;
        let probe = manifests.join(".write-probe");
        fs::write(&probe, b"").and_then(|_| fs::remove_file(&probe)).map_err(unwritable)?;

        let jobs_path = manifests.join("jobs.jsonl");
        let previous = read_manifest::<CombinationJob>(&jobs_path).map_err(GalleryError::from)?.records;
        let mut composer = Composer::new(Arc::clone(&bridge))
            .with_manifest(ManifestWriter::open(&jobs_path).map_err(GalleryError::from)?);
        if let Some(clock) = clock {
            composer = composer.with_clock(clock);
        }
        composer.skip_ids(previous.iter().filter_map(|j| job_number(&j.id)).max().unwrap_or(0));
        let queue = JobQueue::new(Arc::new(composer), concurrency);
        for job in previous {
            queue.restore(job);
        }
        Ok(Self {
            gallery: Gallery::open(&manifests.join("gallery.jsonl"))?,
            bridge,
            queue,
        })
    }

    pub fn gallery(&self) -> &Gallery {
        &self.gallery
    }

    pub fn queue(&self) -> &JobQueue {
        &self.queue
    }

    pub fn bridge(&self) -> &Bridge {
        &self.bridge
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "api_version": API_VERSION,
            "error": { "code": self.code, "message": self.message },
        });
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

impl From<GalleryError> for ApiError {
    fn from(e: GalleryError) -> Self {
        match e {
            GalleryError::JobNotDone(_) => ApiError::new(StatusCode::CONFLICT, "job_not_done", e.to_string()),
            GalleryError::IndexOutOfRange { .. } => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "index_out_of_range", e.to_string())
            }
            GalleryError::Manifest(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        }
    }
}

impl From<ComposeError> for ApiError {
    fn from(e: ComposeError) -> Self {
        match e {
            ComposeError::Precondition(_) => ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
            ComposeError::QueueClosed => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "shutting_down", e.to_string()),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageView {
    pub id: String,
    pub url: String,
    pub width: u32,
    pub height: u32,
    pub content_hash: String,
}

impl From<&ImageRef> for ImageView {
    fn from(r: &ImageRef) -> Self {
        Self {
            id: r.id.clone(),
            url: format!("/api/images/{}", r.id),
            width: r.width,
            height: r.height,
            content_hash: r.content_hash.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryView {
    pub id: String,
    pub image: ImageView,
    pub origin: Origin,
    pub parent_job: Option<String>,
    pub result_index: Option<usize>,
}

impl From<&GalleryEntry> for EntryView {
    fn from(e: &GalleryEntry) -> Self {
        Self {
            id: e.id.clone(),
            image: ImageView::from(&e.image),
            origin: e.origin,
            parent_job: e.parent_job.clone(),
            result_index: e.result_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultView {
    pub index: usize,
    pub seed: u64,
    pub image: ImageView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    pub seeds: Vec<u64>,
    pub input_a: ImageView,
    pub input_b: ImageView,
    pub results: Vec<ResultView>,
    pub error: Option<String>,
    pub created_at: u64,
    pub finished_at: Option<u64>,
}

impl From<&CombinationJob> for JobView {
    fn from(j: &CombinationJob) -> Self {
        Self {
            id: j.id.clone(),
            kind: j.kind.clone(),
            status: j.status,
            seeds: j.seeds.clone(),
            input_a: ImageView::from(&j.input_a),
            input_b: ImageView::from(&j.input_b),
            results: j
                .results
                .iter()
                .zip(&j.result_seeds)
                .enumerate()
                .map(|(index, (img, &seed))| ResultView {
                    index,
                    seed,
                    image: ImageView::from(img),
                })
                .collect(),
            error: j.error.clone(),
            created_at: j.created_at,
            finished_at: j.finished_at,
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct CombineBody {
    pub a_id: String,
    pub b_id: String,
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Deserialize)]
pub struct PromoteBody {
    pub job_id: String,
    pub index: usize,
}

type Shared = State<Arc<AppState>>;

async fn health(State(state): Shared) -> Json<serde_json::Value> {
    Json(json!({
        "api_version": API_VERSION,
        "status": "ok",
        "mock": state.bridge.is_mock(),
    }))
}

async fn gallery(State(state): Shared) -> Json<serde_json::Value> {
    let entries: Vec<EntryView> = state.gallery.list().iter().map(EntryView::from).collect();
    Json(json!({ "api_version": API_VERSION, "entries": entries }))
}

async fn image(State(state): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let state = Arc::clone(&state);
    let found = tokio::task::spawn_blocking(move || {
        let img = state.bridge.store().get(&id)?;
        let bytes = img.read_bytes()?;
        Ok::<_, StoreError>((img.content_type(), bytes))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    match found {
        Ok((content_type, bytes)) => Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response()),
        Err(StoreError::NotFound(id)) => Err(ApiError::not_found(format!("image {id}"))),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())),
    }
}

async fn combine(
    State(state): Shared,
    body: Result<Json<CombineBody>, JsonRejection>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let Json(body) = body?;
    let lookup = |id: &str| {
        state
            .gallery
            .get(id)
            .ok_or_else(|| ApiError::not_found(format!("gallery entry {id}")))
    };
    let a = lookup(&body.a_id)?;
    let b = lookup(&body.b_id)?;
    let kind = match a.origin {
        Origin::Promoted => JobKind::Branch { parent: a.parent_job },
        Origin::Seeded => JobKind::Combine,
    };
    let job = state.queue.submit(JobRequest {
        kind,
        a: a.image,
        b: b.image,
        seeds: body.seeds.unwrap_or_else(|| DEFAULT_SEEDS.to_vec()),
    })?;
    info!(job = %job.id, a = %body.a_id, b = %body.b_id, "combination queued");
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "api_version": API_VERSION, "job": JobView::from(&job) })),
    ))
}

async fn job(State(state): Shared, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let job = state.queue.get(&id).ok_or_else(|| ApiError::not_found(format!("job {id}")))?;
    Ok(Json(json!({ "api_version": API_VERSION, "job": JobView::from(&job) })))
}

async fn promote(
    State(state): Shared,
    body: Result<Json<PromoteBody>, JsonRejection>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let Json(body) = body?;
    let job = state
        .queue
        .get(&body.job_id)
        .ok_or_else(|| ApiError::not_found(format!("job {}", body.job_id)))?;
    let entry = state.gallery.promote(&job, body.index)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "api_version": API_VERSION, "entry": EntryView::from(&entry) })),
    ))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/gallery", get(gallery))
        .route("/api/images/{id}", get(image))
        .route("/api/combine", post(combine))
        .route("/api/jobs/{id}", get(job))
        .route("/api/promote", post(promote))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then drains the job queue.
pub async fn serve(
    state: Arc<AppState>,
    addr: SocketAddr,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServeError::PortInUse(addr),
        _ => ServeError::Io(e),
    })?;
    info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(Arc::clone(&state)))
        .with_graceful_shutdown(shutdown)
        .await?;
    info!("draining job queue");
    tokio::task::spawn_blocking(move || state.queue.shutdown())
        .await
        .map_err(|e| ServeError::Io(std::io::Error::other(e)))?;
    Ok(())
}
