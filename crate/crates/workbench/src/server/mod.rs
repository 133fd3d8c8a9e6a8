//! HTTP API over a data directory, for the review UI.
//!
//! Data directory layout:
//!
//! ```text
//! manifest.json            corpus manifest (annotations are edited in place)
//! images/…                 rasters referenced by the manifest
//! models/<model_id>.pscn   trained models
//! detections/<image>.json  latest detection result per image
//! reviews.jsonl            append-only review verdicts
//! ```

mod api;
mod jobs;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicU64;
use std::sync::{Arc, Mutex};

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tokio::sync::mpsc;
use tower_http::services::ServeDir;

pub use api::{AnnotationDoc, AnnotationUpdate, ImageSummary, ImageDetections, ModelSummary, ReviewVerdict, Verdict};
pub use jobs::{DetectJobRequest, JobKind, JobRecord, JobStatus};

pub const DATA_DIR_ENV: &str = "PATHOSCOPE_DATA_DIR";

pub struct AppState {
    pub data_dir: PathBuf,
    /// Serializes every read-modify-write of files in the data directory.
    write_lock: tokio::sync::Mutex<()>,
    jobs: Mutex<HashMap<String, JobRecord>>,
    next_job: AtomicU64,
    queue: mpsc::UnboundedSender<jobs::QueuedJob>,
}

impl AppState {
    fn manifest_path(&self) -> PathBuf {
        self.data_dir.join("manifest.json")
    }

    fn models_dir(&self) -> PathBuf {
        self.data_dir.join("models")
    }

    fn detections_path(&self, image_id: &str) -> PathBuf {
        self.data_dir.join("detections").join(format!("{image_id}.json"))
    }

    fn reviews_path(&self) -> PathBuf {
        self.data_dir.join("reviews.jsonl")
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, what)
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    pub fn internal(err: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, err.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

/// Builds the router and starts the single job worker. Must be called
/// inside a Tokio runtime.
pub fn router(data_dir: &Path, ui_dir: Option<&Path>) -> Router {
    let (tx, rx) = mpsc::unbounded_channel();
    let state = Arc::new(AppState {
        data_dir: data_dir.to_path_buf(),
        write_lock: tokio::sync::Mutex::new(()),
        jobs: Mutex::new(HashMap::new()),
        next_job: AtomicU64::new(1),
        queue: tx,
    });
    tokio::spawn(jobs::worker(state.clone(), rx));
    let api = Router::new()
        .route("/api/images", get(api::list_images))
        .route("/api/images/{id}", get(api::get_image))
        .route("/api/images/{id}/annotations", get(api::get_annotations).put(api::put_annotations))
        .route("/api/images/{id}/detections", get(api::get_detections))
        .route("/api/models", get(api::list_models))
        .route("/api/jobs/detect", post(jobs::submit_detect))
        .route("/api/jobs/{id}", get(jobs::get_job))
        .route("/api/reviews", post(api::post_review))
        .route("/api/export/annotations", get(api::export_annotations))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(data_dir: &Path, ui_dir: Option<&Path>, addr: &str) -> anyhow::Result<()> {
    let app = router(data_dir, ui_dir);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("serving {} on http://{}", data_dir.display(), listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}
