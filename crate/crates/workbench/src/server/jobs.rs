//! Background jobs, executed one at a time in submission order.

use std::sync::atomic::Ordering;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::Json;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use pathoscope_core::detector::DetectorConfig;
use pathoscope_core::model::load_model;
use pathoscope_core::patchset::load_image;

use super::api::{find_entry, load_manifest, ApiResult, ImageDetections};
use super::{ApiError, AppState};
use crate::config::DetectCmdConfig;
use crate::detection::{detect_records, detector_config, spec_for};
use crate::run::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Train,
    Detect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    pub progress: f64,
    /// Paths relative to the data directory.
    pub artifacts: Vec<String>,
    pub error: Option<String>,
    pub image_id: String,
    pub model_id: String,
}

/// Same options as the `detect` command; `images` is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectJobRequest {
    pub image_id: String,
    pub model_id: String,
    #[serde(default)]
    pub config: DetectCmdConfig,
}

pub(super) struct QueuedJob {
    id: String,
    request: DetectJobRequest,
}

fn model_path(state: &AppState, model_id: &str) -> ApiResult<std::path::PathBuf> {
    let valid = !model_id.is_empty() && model_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    let path = state.models_dir().join(format!("{model_id}.pscn"));
    if !valid || !path.is_file() {
        return Err(ApiError::not_found(format!("unknown model {model_id:?}")));
    }
    Ok(path)
}

fn update(state: &AppState, id: &str, f: impl FnOnce(&mut JobRecord)) {
    let mut jobs = state.jobs.lock().expect("job table lock");
    if let Some(job) = jobs.get_mut(id) {
        f(job);
    }
}

pub(super) async fn submit_detect(
    State(state): State<Arc<AppState>>,
    Json(request): Json<DetectJobRequest>,
) -> ApiResult<(StatusCode, Json<JobRecord>)> {
    let manifest = load_manifest(&state)?;
    find_entry(&manifest, &request.image_id)?;
    model_path(&state, &request.model_id)?;
    let c = &request.config;
    DetectorConfig {
        stride: c.stride.unwrap_or(1),
        probability_threshold: c.probability_threshold,
        overlap_threshold: c.overlap_threshold,
    }
    .validate()
    .map_err(|e| ApiError::invalid(e.to_string()))?;

    let id = format!("job-{}", state.next_job.fetch_add(1, Ordering::SeqCst));
    let record = JobRecord {
        id: id.clone(),
        kind: JobKind::Detect,
        status: JobStatus::Queued,
        progress: 0.0,
        artifacts: Vec::new(),
        error: None,
        image_id: request.image_id.clone(),
        model_id: request.model_id.clone(),
    };
    state.jobs.lock().expect("job table lock").insert(id.clone(), record.clone());
    state
        .queue
        .send(QueuedJob { id, request })
        .map_err(|_| ApiError::internal("job worker has stopped"))?;
    Ok((StatusCode::ACCEPTED, Json(record)))
}

pub(super) async fn get_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<JobRecord>> {
    let jobs = state.jobs.lock().expect("job table lock");
    jobs.get(&id).cloned().map(Json).ok_or_else(|| ApiError::not_found(format!("unknown job {id:?}")))
}

fn run_detect(state: &AppState, request: &DetectJobRequest) -> anyhow::Result<ImageDetections> {
    let manifest = load_manifest(state).map_err(|e| anyhow::anyhow!(e.message))?;
    let entry = find_entry(&manifest, &request.image_id).map_err(|e| anyhow::anyhow!(e.message))?;
    let image = load_image(&state.data_dir, entry)?;
    let path = model_path(state, &request.model_id).map_err(|e| anyhow::anyhow!(e.message))?;
    let model = load_model(&path)?;
    let config = detector_config(&model, &request.config);
    config.validate()?;
    let detections = detect_records(&model, &image, &config)?;
    Ok(ImageDetections {
        image_id: request.image_id.clone(),
        model_id: request.model_id.clone(),
        label: spec_for(&model).target_label,
        config,
        detections,
    })
}

pub(super) async fn worker(state: Arc<AppState>, mut rx: mpsc::UnboundedReceiver<QueuedJob>) {
    while let Some(job) = rx.recv().await {
        update(&state, &job.id, |r| r.status = JobStatus::Running);
        let s = state.clone();
        let request = job.request.clone();
        let result = tokio::task::spawn_blocking(move || run_detect(&s, &request))
            .await
            .map_err(|e| anyhow::anyhow!("detection task panicked: {e}"))
            .and_then(|r| r);
        let outcome = match result {
            Ok(found) => {
                let _guard = state.write_lock.lock().await;
                let path = state.detections_path(&job.request.image_id);
                let bytes = serde_json::to_vec_pretty(&found).expect("detections serialize");
                write_atomic(&path, &bytes).map(|()| format!("detections/{}.json", job.request.image_id))
            }
            Err(e) => Err(e),
        };
        update(&state, &job.id, |r| match outcome {
            Ok(artifact) => {
                r.status = JobStatus::Done;
                r.progress = 1.0;
                r.artifacts.push(artifact);
            }
            Err(e) => {
                r.status = JobStatus::Failed;
                r.error = Some(format!("{e:#}"));
            }
        });
    }
}
