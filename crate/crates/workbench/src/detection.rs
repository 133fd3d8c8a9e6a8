//! The detection path shared by the `detect` command and the API job worker.

use anyhow::Result;

use pathoscope_core::detector::{detect, DetectionRecord, DetectorConfig};
use pathoscope_core::model::TrainedModel;
use pathoscope_core::patchset::{AnnotatedImage, PatchSpec};

use crate::config::DetectCmdConfig;

/// The patch geometry recorded at training time, or the defaults at the
/// model's patch size for a model without one.
pub fn spec_for(model: &TrainedModel) -> PatchSpec {
    model
        .provenance
        .patch_spec
        .clone()
        .unwrap_or_else(|| PatchSpec { patch_size: model.patch_size(), ..PatchSpec::default() })
}

pub fn detector_config(model: &TrainedModel, cfg: &DetectCmdConfig) -> DetectorConfig {
    let defaults = DetectorConfig::for_patch_size(model.patch_size());
    DetectorConfig {
        stride: cfg.stride.unwrap_or(defaults.stride),
        probability_threshold: cfg.probability_threshold,
        overlap_threshold: cfg.overlap_threshold,
    }
}

pub fn detect_records(model: &TrainedModel, image: &AnnotatedImage, cfg: &DetectorConfig) -> Result<Vec<DetectionRecord>> {
    let detections = detect(model, &image.raster, &spec_for(model), cfg)?;
    Ok(detections.iter().map(|d| DetectionRecord::new(&image.id, d)).collect())
}

/// One JSON object per line, newline-terminated.
pub fn to_jsonl(records: &[DetectionRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect()
}

pub fn parse_jsonl(text: &str) -> Result<Vec<DetectionRecord>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}
