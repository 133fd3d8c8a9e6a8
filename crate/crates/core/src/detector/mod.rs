//! Whole-image localization: sliding-window scoring with a trained model,
//! probability thresholding and greedy non-maximum suppression.

use std::cmp::Ordering;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, TrainedModel};
use crate::patchset::{BoundingBox, PatchError, PatchSpec, Raster};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("image {width}×{height} is smaller than the {patch_size}px patch after downsampling")]
    ImageTooSmall { width: usize, height: usize, patch_size: usize },
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
    #[error("patch spec patch_size {spec} does not match model patch size {model}")]
    PatchSizeMismatch { spec: usize, model: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Patch(#[from] PatchError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Window spacing in downsampled pixels.
    pub stride: usize,
    pub probability_threshold: f64,
    /// Candidates overlapping a kept detection by more than this IoU are dropped.
    pub overlap_threshold: f64,
}

impl DetectorConfig {
    /// Stride `p/4`, probability 0.5, IoU 0.3.
    pub fn for_patch_size(patch_size: usize) -> Self {
        Self { stride: (patch_size / 4).max(1), probability_threshold: 0.5, overlap_threshold: 0.3 }
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        if self.stride == 0 {
            return Err(DetectError::InvalidConfig("stride must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.probability_threshold) {
            return Err(DetectError::InvalidConfig("probability_threshold must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap_threshold) {
            return Err(DetectError::InvalidConfig("overlap_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::for_patch_size(32)
    }
}

/// A scored window in downsampled coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub bbox: BoundingBox,
    pub probability: f64,
}

/// A candidate that survived suppression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub probability: f64,
}

/// One line of the detections JSON-lines export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub bbox: [u32; 4],
    pub probability: f64,
}

impl DetectionRecord {
    pub fn new(image_id: &str, d: &Detection) -> Self {
        Self { image_id: image_id.to_string(), bbox: d.bbox.to_array(), probability: d.probability }
    }
}

/// Top-left corners of every window at `stride`, row-major.
pub fn window_origins(width: usize, height: usize, patch_size: usize, stride: usize) -> Vec<(u32, u32)> {
    if width < patch_size || height < patch_size || stride == 0 {
        return Vec::new();
    }
    let ys = (0..=height - patch_size).step_by(stride);
    ys.flat_map(|y| (0..=width - patch_size).step_by(stride).map(move |x| (x as u32, y as u32))).collect()
}

const SCORE_BATCH: usize = 256;

/// Scores every window of an already-downsampled raster and keeps those with
/// probability ≥ the threshold.
pub fn score_image(
    model: &TrainedModel,
    raster: &Raster,
    spec: &PatchSpec,
    cfg: &DetectorConfig,
) -> Result<Vec<Candidate>, DetectError> {
    cfg.validate()?;
    let p = model.patch_size();
    if spec.patch_size != p {
        return Err(DetectError::PatchSizeMismatch { spec: spec.patch_size, model: p });
    }
    if raster.width() < p || raster.height() < p {
        return Err(DetectError::ImageTooSmall { width: raster.width(), height: raster.height(), patch_size: p });
    }
    let origins = window_origins(raster.width(), raster.height(), p, cfg.stride);
    let mut out = Vec::new();
    for chunk in origins.chunks(SCORE_BATCH) {
        let mut stacked = Vec::with_capacity(chunk.len() * 3 * p * p);
        for &(x, y) in chunk {
            stacked.extend(raster.crop_planar_unit(x as usize, y as usize, p));
        }
        let probs = model.predict_batch(&stacked, chunk.len())?;
        for (&(x, y), prob) in chunk.iter().zip(probs) {
            if prob >= cfg.probability_threshold {
                out.push(Candidate { bbox: spec.window(x, y), probability: prob });
            }
        }
    }
    Ok(out)
}

/// Canonical processing order: probability descending, then lower y, lower
/// x, lower input index.
pub fn canonical_order(candidates: &[Candidate]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| canonical_cmp(candidates, a, b));
    order
}

pub(crate) fn canonical_cmp(c: &[Candidate], a: usize, b: usize) -> Ordering {
    c[b].probability
        .total_cmp(&c[a].probability)
        .then(c[a].bbox.y_min.cmp(&c[b].bbox.y_min))
        .then(c[a].bbox.x_min.cmp(&c[b].bbox.x_min))
        .then(a.cmp(&b))
}

/// Greedy suppression: the best remaining candidate is emitted and every
/// candidate with IoU > `overlap_threshold` against it is removed.
pub fn non_max_suppression(candidates: &[Candidate], overlap_threshold: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for i in canonical_order(candidates) {
        let c = &candidates[i];
        if kept.iter().all(|k| k.bbox.iou(&c.bbox) <= overlap_threshold) {
            kept.push(Detection { bbox: c.bbox.clone(), probability: c.probability });
        }
    }
    kept
}

fn scale_box(b: &BoundingBox, factor: u32) -> BoundingBox {
    BoundingBox::new(b.x_min * factor, b.y_min * factor, b.x_max * factor, b.y_max * factor, b.label.clone())
}

/// Downsample, score, suppress; boxes are returned in original image
/// coordinates.
pub fn detect(
    model: &TrainedModel,
    raster: &Raster,
    spec: &PatchSpec,
    cfg: &DetectorConfig,
) -> Result<Vec<Detection>, DetectError> {
    spec.validate()?;
    let f = spec.downsample_factor as usize;
    let (w, h) = (raster.width() / f, raster.height() / f);
    if w < spec.patch_size || h < spec.patch_size {
        return Err(DetectError::ImageTooSmall { width: w, height: h, patch_size: spec.patch_size });
    }
    let small = raster.box_downsample(f);
    let candidates = score_image(model, &small, spec, cfg)?;
    Ok(non_max_suppression(&candidates, cfg.overlap_threshold)
        .into_iter()
        .map(|d| Detection { bbox: scale_box(&d.bbox, spec.downsample_factor), probability: d.probability })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// `(detection index, truth index)` for every true positive.
    pub pairs: Vec<(usize, usize)>,
}

/// IoU at or above which a detection matches a truth box even when its
/// center falls outside.
pub const MATCH_IOU: f64 = 0.5;

/// One-to-one greedy matching in descending probability. A detection matches
/// an unmatched truth box containing its center or overlapping it with IoU ≥
/// [`MATCH_IOU`]; among several, the highest IoU wins, then the lowest index.
pub fn match_detections(detections: &[Detection], truth: &[BoundingBox]) -> MatchResult {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].probability.total_cmp(&detections[a].probability).then(a.cmp(&b)));
    let mut taken = vec![false; truth.len()];
    let mut result = MatchResult::default();
    for d in order {
        let bbox = &detections[d].bbox;
        let (cx, cy) = bbox.center();
        let best = truth
            .iter()
            .enumerate()
            .filter(|&(t, b)| !taken[t] && (b.contains_point(cx, cy) || b.iou(bbox) >= MATCH_IOU))
            .map(|(t, b)| (t, b.iou(bbox)))
            .fold(None::<(usize, f64)>, |acc, (t, iou)| match acc {
                Some((_, best)) if best >= iou => acc,
                _ => Some((t, iou)),
            });
        match best {
            Some((t, _)) => {
                taken[t] = true;
                result.true_positives += 1;
                result.pairs.push((d, t));
            }
            None => result.false_positives += 1,
        }
    }
    result.false_negatives = truth.len() - result.true_positives;
    result
}

pub const TRUTH_COLOR: [u8; 3] = [255, 255, 255];
pub const DETECTION_COLOR: [u8; 3] = [255, 0, 0];

fn draw_rect(img: &mut RgbImage, b: &BoundingBox, color: [u8; 3], thickness: u32) {
    let (w, h) = img.dimensions();
    let (x0, y0) = (b.x_min.min(w), b.y_min.min(h));
    let (x1, y1) = (b.x_max.min(w), b.y_max.min(h));
    if x0 >= x1 || y0 >= y1 {
        return;
    }
    for y in y0..y1 {
        for x in x0..x1 {
            let edge = x < x0 + thickness || x + thickness >= x1 || y < y0 + thickness || y + thickness >= y1;
            if edge {
                img.put_pixel(x, y, Rgb(color));
            }
        }
    }
}

/// Truth boxes in white, detections in red on top.
pub fn render_overlay(raster: &Raster, truth: &[BoundingBox], detections: &[Detection]) -> RgbImage {
    let mut img = raster.to_rgb8();
    for b in truth {
        draw_rect(&mut img, b, TRUTH_COLOR, 1);
    }
    for d in detections {
        draw_rect(&mut img, &d.bbox, DETECTION_COLOR, 1);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(x: u32, y: u32, w: u32, p: f64) -> Candidate {
        Candidate { bbox: BoundingBox::new(x, y, x + w, y + w, "o"), probability: p }
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_origins(64, 64, 32, 8).len(), 25);
        assert_eq!(window_origins(32, 32, 32, 5).len(), 1);
        assert!(window_origins(31, 64, 32, 1).is_empty());
    }

    #[test]
    fn nms_keeps_best_and_disjoint() {
        let a = cand(0, 0, 10, 0.9);
        let b = Candidate { bbox: BoundingBox::new(0, 0, 10, 5, "o"), probability: 0.8 };
        assert_eq!(a.bbox.iou(&b.bbox), 0.5);
        let c = cand(50, 50, 10, 0.7);
        let out = non_max_suppression(&[b, c.clone(), a.clone()], 0.3);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].bbox, a.bbox);
        assert_eq!(out[1].bbox, c.bbox);
    }

    #[test]
    fn ties_prefer_top_left() {
        let out = non_max_suppression(&[cand(4, 0, 10, 0.5), cand(0, 4, 10, 0.5), cand(0, 0, 10, 0.5)], 0.1);
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].bbox.x_min, out[0].bbox.y_min), (0, 0));
    }

    #[test]
    fn matching_rules() {
        let t = BoundingBox::new(10, 10, 20, 20, "o");
        let d = |p| Detection { bbox: t.clone(), probability: p };
        let r = match_detections(&[d(0.9)], std::slice::from_ref(&t));
        assert_eq!((r.true_positives, r.false_positives, r.false_negatives), (1, 0, 0));
        let r = match_detections(&[], &[t.clone(), BoundingBox::new(0, 0, 2, 2, "o")]);
        assert_eq!(r.false_negatives, 2);
        let r = match_detections(&[d(0.9), d(0.8)], std::slice::from_ref(&t));
        assert_eq!((r.true_positives, r.false_positives, r.false_negatives), (1, 1, 0));
        assert_eq!(r.pairs, vec![(0, 0)]);
    }

    #[test]
    fn overlay_colors() {
        let raster = Raster::filled(20, 20, [0.0; 3]);
        let img = render_overlay(
            &raster,
            &[BoundingBox::new(1, 1, 5, 5, "o")],
            &[Detection { bbox: BoundingBox::new(10, 10, 15, 15, "o"), probability: 0.9 }],
        );
        assert_eq!(img.get_pixel(1, 1).0, TRUTH_COLOR);
        assert_eq!(img.get_pixel(2, 2).0, [0, 0, 0]);
        assert_eq!(img.get_pixel(14, 12).0, DETECTION_COLOR);
    }
}
