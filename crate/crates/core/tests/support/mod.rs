//! Brute-force reference implementations used as test oracles. Each one is
//! written from the definition, independently of the library code.

#![allow(dead_code)]

use pathoscope_core::detector::{Candidate, Detection};
use pathoscope_core::patchset::{AnnotatedImage, BoundingBox, Patch, PatchSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Intersection over union from pixel counts of half-open boxes.
pub fn iou_by_definition(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x_max.min(b.x_max).saturating_sub(a.x_min.max(b.x_min)) as f64;
    let ih = a.y_max.min(b.y_max).saturating_sub(a.y_min.max(b.y_min)) as f64;
    let inter = iw * ih;
    let area = |r: &BoundingBox| (r.x_max - r.x_min) as f64 * (r.y_max - r.y_min) as f64;
    inter / (area(a) + area(b) - inter)
}

/// Quadratic re-scan NMS: repeatedly scan all remaining candidates for the
/// best one (probability, then lower y, lower x, lower index), emit it and
/// drop everything overlapping it by more than `threshold`.
pub fn reference_nms(cands: &[Candidate], threshold: f64) -> Vec<Detection> {
    let mut alive: Vec<bool> = vec![true; cands.len()];
    let mut out = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..cands.len() {
            if !alive[i] {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) => {
                    let (ci, cb) = (&cands[i], &cands[b]);
                    let better = ci.probability > cb.probability
                        || (ci.probability == cb.probability
                            && (ci.bbox.y_min, ci.bbox.x_min, i) < (cb.bbox.y_min, cb.bbox.x_min, b));
                    Some(if better { i } else { b })
                }
            };
        }
        let Some(b) = best else { break };
        alive[b] = false;
        out.push(Detection { bbox: cands[b].bbox.clone(), probability: cands[b].probability });
        for i in 0..cands.len() {
            if alive[i] && iou_by_definition(&cands[i].bbox, &cands[b].bbox) > threshold {
                alive[i] = false;
            }
        }
    }
    out
}

/// Random candidate boxes on a `extent × extent` canvas, with probabilities
/// drawn from a small grid so ties are frequent.
pub fn random_candidates(rng: &mut ChaCha8Rng, n: usize, extent: u32) -> Vec<Candidate> {
    let levels = rng.random_range(2..20u32);
    (0..n)
        .map(|_| {
            let w = rng.random_range(4..40u32);
            let h = if rng.random_bool(0.5) { w } else { rng.random_range(4..40u32) };
            let x = rng.random_range(0..extent - w);
            let y = rng.random_range(0..extent - h);
            let probability = f64::from(rng.random_range(0..=levels)) / f64::from(levels);
            Candidate { bbox: BoundingBox::new(x, y, x + w, y + h, "o"), probability }
        })
        .collect()
}

/// Probability that a random positive outranks a random negative, counting
/// every pair; ties score one half.
pub fn mann_whitney(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Step-wise AP from the definition: for each positive, its rank is the
/// number of items with a higher score plus earlier items with an equal
/// score (input order breaks ties), and its precision is the fraction of
/// positives among the items ranked at or above it.
pub fn stepwise_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let ranked_at_or_above = |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
    let mut total = 0.0;
    let mut positives = 0usize;
    for i in 0..scores.len() {
        if !labels[i] {
            continue;
        }
        positives += 1;
        let (mut rank, mut hits) = (0usize, 0usize);
        for j in 0..scores.len() {
            if ranked_at_or_above(i, j) {
                rank += 1;
                hits += usize::from(labels[j]);
            }
        }
        total += hits as f64 / rank as f64;
    }
    total / positives as f64
}

/// Random scored set with both classes; scores are quantized about half the
/// time so tie handling is exercised.
pub fn random_scored_set(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<bool>) {
    let quantize = rng.random_bool(0.5);
    let levels = f64::from(rng.random_range(2..50u32));
    let bias = rng.random_range(0.0..0.6);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    labels[0] = true;
    labels[n - 1] = false;
    let scores = labels
        .iter()
        .map(|&l| {
            let s: f64 = rng.random::<f64>() + if l { bias } else { 0.0 };
            if quantize { (s * levels).floor() / levels } else { s }
        })
        .collect();
    (scores, labels)
}

/// Scans every original-resolution pixel of each negative window and
/// reports the first one that lies inside any annotation, whatever its label.
pub fn negative_overlap(images: &[AnnotatedImage], negatives: &[Patch], spec: &PatchSpec) -> Option<String> {
    let f = spec.downsample_factor;
    let p = spec.patch_size as u32;
    for patch in negatives {
        let image = images.iter().find(|i| i.id == patch.source_image_id).expect("patch from known image");
        let (ox, oy) = patch.origin;
        for v in oy * f..(oy + p) * f {
            for u in ox * f..(ox + p) * f {
                for b in &image.boxes {
                    if b.x_min <= u && u < b.x_max && b.y_min <= v && v < b.y_max {
                        return Some(format!(
                            "negative at {:?} in {} covers pixel ({u},{v}) of box {:?}",
                            patch.origin,
                            image.id,
                            b.to_array()
                        ));
                    }
                }
            }
        }
    }
    None
}

/// Adds one box labelled `other` at a random spot to every second image, so
/// oracles see annotations outside the target class too.
pub fn add_foreign_boxes(images: &mut [AnnotatedImage], rng: &mut ChaCha8Rng) {
    for image in images.iter_mut().step_by(2) {
        let (w, h) = (image.width() as u32, image.height() as u32);
        let x = rng.random_range(0..w - 12);
        let y = rng.random_range(0..h - 12);
        image.boxes.push(BoundingBox::new(x, y, x + rng.random_range(4..12), y + rng.random_range(4..12), "other"));
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
