use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Write};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::Json;
use serde::{Deserialize, Serialize};

use pathoscope_core::detector::{DetectionRecord, DetectorConfig};
use pathoscope_core::model::load_model;
use pathoscope_core::patchset::{load_image, Manifest, ManifestImage, ManifestObject};

use super::{ApiError, AppState};
use crate::run::{file_sha256, sha256_hex, write_atomic};

pub type ApiResult<T> = Result<T, ApiError>;

pub(super) fn load_manifest(state: &AppState) -> ApiResult<Manifest> {
    Manifest::load(&state.manifest_path()).map_err(ApiError::internal)
}

pub(super) fn find_entry<'a>(manifest: &'a Manifest, id: &str) -> ApiResult<&'a ManifestImage> {
    manifest.image(id).ok_or_else(|| ApiError::not_found(format!("unknown image {id:?}")))
}

/// Optimistic-concurrency token: digest of the entry's canonical JSON.
pub fn version_token(entry: &ManifestImage) -> String {
    sha256_hex(serde_json::to_string(entry).expect("entries serialize").as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSummary {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub objects: usize,
    pub version: String,
}

pub(super) async fn list_images(State(state): State<Arc<AppState>>) -> ApiResult<Json<Vec<ImageSummary>>> {
    let manifest = load_manifest(&state)?;
    Ok(Json(
        manifest
            .images
            .iter()
            .map(|e| ImageSummary {
                id: e.id.clone(),
                width: e.width,
                height: e.height,
                objects: e.objects.len(),
                version: version_token(e),
            })
            .collect(),
    ))
}

/// The raster re-encoded as PNG, whatever its stored format.
pub(super) async fn get_image(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let manifest = load_manifest(&state)?;
    let entry = find_entry(&manifest, &id)?;
    let image = load_image(&state.data_dir, entry).map_err(ApiError::internal)?;
    let mut png = Vec::new();
    image.raster.to_rgb8().write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png).map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDoc {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub version: String,
    pub objects: Vec<ManifestObject>,
}

impl AnnotationDoc {
    fn of(entry: &ManifestImage) -> Self {
        Self {
            image_id: entry.id.clone(),
            width: entry.width,
            height: entry.height,
            version: version_token(entry),
            objects: entry.objects.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationUpdate {
    /// The `version` of the document the edit started from.
    pub version: String,
    pub objects: Vec<ManifestObject>,
}

pub(super) async fn get_annotations(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<AnnotationDoc>> {
    let manifest = load_manifest(&state)?;
    Ok(Json(AnnotationDoc::of(find_entry(&manifest, &id)?)))
}

pub(super) async fn put_annotations(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(update): Json<AnnotationUpdate>,
) -> ApiResult<Json<AnnotationDoc>> {
    let _guard = state.write_lock.lock().await;
    let mut manifest = load_manifest(&state)?;
    let entry = find_entry(&manifest, &id)?;
    if update.version != version_token(entry) {
        return Err(ApiError::new(StatusCode::CONFLICT, format!("annotations of {id:?} changed since version {}", update.version)));
    }
    for (i, object) in update.objects.iter().enumerate() {
        if object.label.trim().is_empty() {
            return Err(ApiError::invalid(format!("object {i}: empty label")));
        }
        object.to_box().validate(entry.width, entry.height).map_err(|e| ApiError::invalid(format!("object {i}: {e}")))?;
    }
    let slot = manifest.images.iter_mut().find(|e| e.id == id).expect("entry exists");
    slot.objects = update.objects;
    manifest.validate().map_err(|e| ApiError::invalid(e.to_string()))?;
    write_atomic(&state.manifest_path(), manifest.to_json().as_bytes()).map_err(ApiError::internal)?;
    Ok(Json(AnnotationDoc::of(find_entry(&manifest, &id)?)))
}

/// Stored result of the latest detection job on one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDetections {
    pub image_id: String,
    pub model_id: String,
    /// Class label of the model, used for confirmed boxes in the export.
    pub label: String,
    pub config: DetectorConfig,
    pub detections: Vec<DetectionRecord>,
}

pub(super) fn read_detections(state: &AppState, id: &str) -> ApiResult<Option<ImageDetections>> {
    let path = state.detections_path(id);
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(ApiError::internal)?;
    serde_json::from_str(&text).map(Some).map_err(ApiError::internal)
}

pub(super) async fn get_detections(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<ImageDetections>> {
    let manifest = load_manifest(&state)?;
    find_entry(&manifest, &id)?;
    read_detections(&state, &id)?
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no detections for image {id:?}; submit a detect job first")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub id: String,
    pub patch_size: usize,
    pub downsample_factor: Option<u32>,
    pub epochs_trained: usize,
    pub final_loss: Option<f64>,
    pub dataset_hash: String,
    pub sha256: String,
}

pub(super) async fn list_models(State(state): State<Arc<AppState>>) -> ApiResult<Json<Vec<ModelSummary>>> {
    let dir = state.models_dir();
    let mut out = Vec::new();
    if let Ok(entries) = fs::read_dir(&dir) {
        let mut paths: Vec<_> = entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "pscn"))
            .collect();
        paths.sort();
        for path in paths {
            let model = load_model(&path).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
            out.push(ModelSummary {
                id: path.file_stem().unwrap().to_string_lossy().into_owned(),
                patch_size: model.patch_size(),
                downsample_factor: model.provenance.patch_spec.as_ref().map(|s| s.downsample_factor),
                epochs_trained: model.history.len(),
                final_loss: model.history.last().copied(),
                dataset_hash: model.provenance.dataset_hash.clone(),
                sha256: file_sha256(&path).map_err(ApiError::internal)?,
            });
        }
    }
    Ok(Json(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Confirm,
    Reject,
}

/// A technician's decision on one detection, identified by its index in the
/// image's stored detections or by its exact box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewVerdict {
    pub image_id: String,
    #[serde(default)]
    pub detection_index: Option<usize>,
    #[serde(default)]
    pub bbox: Option<[u32; 4]>,
    pub verdict: Verdict,
    #[serde(default)]
    pub reviewer: String,
    /// Filled with Unix seconds when omitted.
    #[serde(default)]
    pub timestamp: Option<String>,
    /// Filled by the server from the stored detections.
    #[serde(default)]
    pub label: Option<String>,
}

pub(super) async fn post_review(
    State(state): State<Arc<AppState>>,
    Json(mut review): Json<ReviewVerdict>,
) -> ApiResult<(StatusCode, Json<ReviewVerdict>)> {
    let manifest = load_manifest(&state)?;
    find_entry(&manifest, &review.image_id)?;
    let stored = read_detections(&state, &review.image_id)?
        .ok_or_else(|| ApiError::invalid(format!("image {:?} has no detections to review", review.image_id)))?;
    let index = match (review.detection_index, review.bbox) {
        (Some(i), bbox) => {
            let d = stored.detections.get(i).ok_or_else(|| ApiError::invalid(format!("detection index {i} out of range")))?;
            if bbox.is_some_and(|b| b != d.bbox) {
                return Err(ApiError::invalid(format!("bbox does not match detection {i}")));
            }
            i
        }
        (None, Some(b)) => stored
            .detections
            .iter()
            .position(|d| d.bbox == b)
            .ok_or_else(|| ApiError::invalid(format!("no stored detection has bbox {b:?}")))?,
        (None, None) => return Err(ApiError::invalid("a review needs detection_index or bbox")),
    };
    review.detection_index = Some(index);
    review.bbox = Some(stored.detections[index].bbox);
    review.label = Some(stored.label.clone());
    if review.timestamp.is_none() {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        review.timestamp = Some(secs.to_string());
    }
    let line = serde_json::to_string(&review).map_err(ApiError::internal)? + "\n";
    let _guard = state.write_lock.lock().await;
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(state.reviews_path())
        .map_err(ApiError::internal)?;
    file.write_all(line.as_bytes()).map_err(ApiError::internal)?;
    Ok((StatusCode::CREATED, Json(review)))
}

pub(super) fn read_reviews(state: &AppState) -> ApiResult<Vec<ReviewVerdict>> {
    let path = state.reviews_path();
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&path).map_err(ApiError::internal)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(ApiError::internal))
        .collect()
}

/// The corpus manifest with every confirmed detection added to its image's
/// expert boxes. The latest verdict on a box wins; boxes already present are
/// not duplicated.
pub(super) async fn export_annotations(State(state): State<Arc<AppState>>) -> ApiResult<Json<Manifest>> {
    let mut manifest = load_manifest(&state)?;
    let mut latest: BTreeMap<(String, [u32; 4]), ReviewVerdict> = BTreeMap::new();
    for r in read_reviews(&state)? {
        if let Some(b) = r.bbox {
            latest.insert((r.image_id.clone(), b), r);
        }
    }
    for ((image_id, bbox), review) in latest {
        if review.verdict != Verdict::Confirm {
            continue;
        }
        let Some(entry) = manifest.images.iter_mut().find(|e| e.id == image_id) else { continue };
        let label = review.label.unwrap_or_default();
        if !entry.objects.iter().any(|o| o.bbox == bbox && o.label == label) {
            entry.objects.push(ManifestObject { label, bbox });
        }
    }
    manifest.validate().map_err(ApiError::internal)?;
    Ok(Json(manifest))
}
