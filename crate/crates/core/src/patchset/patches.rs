//! Patch geometry and the per-image patch operations: downsampling, positive
//! extraction, negative sampling, negative balancing and D4 augmentation.

use std::collections::HashSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotatedImage, BoundingBox, PatchError};
use crate::neural::Tensor;

/// How patches are cut from one image type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchSpec {
    pub downsample_factor: u32,
    /// Side length in downsampled pixels.
    pub patch_size: usize,
    /// Spacing of the overlapping patch grid, in downsampled pixels.
    pub stride: usize,
    /// Negatives kept are at most this multiple of the original positive count.
    pub neg_cap_ratio: usize,
    pub target_label: String,
    /// Negative windows drawn per image; `None` means one per grid window.
    #[serde(default)]
    pub negatives_per_image: Option<usize>,
}

pub const DEFAULT_TARGET_LABEL: &str = "synthetic-pathogen";

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            downsample_factor: 2,
            patch_size: 32,
            stride: 8,
            neg_cap_ratio: 100,
            target_label: DEFAULT_TARGET_LABEL.to_string(),
            negatives_per_image: None,
        }
    }
}

impl PatchSpec {
    pub fn validate(&self) -> Result<(), PatchError> {
        let problem = if self.downsample_factor == 0 {
            Some("downsample_factor must be ≥ 1")
        } else if self.patch_size < 2 {
            Some("patch_size must be ≥ 2")
        } else if self.stride == 0 {
            Some("stride must be ≥ 1")
        } else if self.neg_cap_ratio == 0 {
            Some("neg_cap_ratio must be ≥ 1")
        } else {
            None
        };
        match problem {
            Some(p) => Err(PatchError::InvalidSpec(p.to_string())),
            None => Ok(()),
        }
    }

    /// `⌈(W − p + 1)/stride⌉ · ⌈(H − p + 1)/stride⌉` grid windows on a downsampled image.
    pub fn grid_window_count(&self, width: usize, height: usize) -> usize {
        if width < self.patch_size || height < self.patch_size {
            return 0;
        }
        (width - self.patch_size + 1).div_ceil(self.stride) * (height - self.patch_size + 1).div_ceil(self.stride)
    }

    pub fn window(&self, x: u32, y: u32) -> BoundingBox {
        let p = self.patch_size as u32;
        BoundingBox::new(x, y, x + p, y + p, self.target_label.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn class_index(self) -> usize {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PatchProvenance {
    Original,
    /// Dihedral transform id 0–7; 0 is the identity.
    Augmented(u8),
}

/// A square patch, planar `[3, p, p]`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub pixels: Tensor<f32>,
    pub label: Label,
    pub source_image_id: String,
    /// Top-left corner in downsampled coordinates.
    pub origin: (u32, u32),
    pub provenance: PatchProvenance,
}

impl Patch {
    pub fn size(&self) -> usize {
        self.pixels.shape()[2]
    }
}

/// Box-filter downsampling of the raster; boxes are scaled by `1/factor` with
/// floor on the minimum corner and ceil on the maximum corner so coverage is
/// never lost. Boxes that fall entirely in dropped trailing pixels are removed.
pub fn downsample(image: &AnnotatedImage, factor: u32) -> Result<AnnotatedImage, PatchError> {
    if factor == 0 {
        return Err(PatchError::InvalidSpec("downsample factor must be ≥ 1".into()));
    }
    let f = factor as usize;
    let (w, h) = (image.width() / f, image.height() / f);
    if w == 0 || h == 0 {
        return Err(PatchError::FactorTooLarge { factor, width: image.width(), height: image.height(), min_side: 1 });
    }
    let boxes = image
        .boxes
        .iter()
        .filter_map(|b| {
            let x0 = b.x_min / factor;
            let y0 = b.y_min / factor;
            let x1 = b.x_max.div_ceil(factor).min(w as u32);
            let y1 = b.y_max.div_ceil(factor).min(h as u32);
            (x0 < x1 && y0 < y1).then(|| BoundingBox::new(x0, y0, x1, y1, b.label.clone()))
        })
        .collect();
    Ok(AnnotatedImage { id: image.id.clone(), raster: image.raster.box_downsample(f), boxes })
}

/// [`downsample`], additionally requiring the result to hold at least one patch.
pub fn downsample_for(image: &AnnotatedImage, spec: &PatchSpec) -> Result<AnnotatedImage, PatchError> {
    let ds = downsample(image, spec.downsample_factor)?;
    if ds.width() < spec.patch_size || ds.height() < spec.patch_size {
        return Err(PatchError::FactorTooLarge {
            factor: spec.downsample_factor,
            width: image.width(),
            height: image.height(),
            min_side: spec.patch_size,
        });
    }
    Ok(ds)
}

pub(crate) fn materialize(image: &AnnotatedImage, spec: &PatchSpec, (x, y): (u32, u32), label: Label) -> Patch {
    let p = spec.patch_size;
    let data = image.raster.crop_planar_unit(x as usize, y as usize, p);
    Patch {
        pixels: Tensor::new(vec![3, p, p], data).expect("crop has patch shape"),
        label,
        source_image_id: image.id.clone(),
        origin: (x, y),
        provenance: PatchProvenance::Original,
    }
}

/// Origins of windows centered on each `target_label` box, plus the number of
/// boxes skipped because their window would leave the raster.
pub(crate) fn positive_origins(image: &AnnotatedImage, spec: &PatchSpec) -> (Vec<(u32, u32)>, usize) {
    let p = spec.patch_size as i64;
    let (w, h) = (image.width() as i64, image.height() as i64);
    let mut origins = Vec::new();
    let mut skipped = 0;
    for b in image.boxes.iter().filter(|b| b.label == spec.target_label) {
        let cx = (i64::from(b.x_min) + i64::from(b.x_max)) / 2;
        let cy = (i64::from(b.y_min) + i64::from(b.y_max)) / 2;
        let (x, y) = (cx - p / 2, cy - p / 2);
        if x < 0 || y < 0 || x + p > w || y + p > h {
            skipped += 1;
        } else {
            origins.push((x as u32, y as u32));
        }
    }
    (origins, skipped)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositiveExtraction {
    pub patches: Vec<Patch>,
    pub skipped: usize,
}

/// One patch centered on each target box of an already-downsampled image.
pub fn extract_positive_patches(image: &AnnotatedImage, spec: &PatchSpec) -> PositiveExtraction {
    let (origins, skipped) = positive_origins(image, spec);
    PositiveExtraction {
        patches: origins.into_iter().map(|o| materialize(image, spec, o, Label::Positive)).collect(),
        skipped,
    }
}

/// Rejection-samples up to `count` distinct window origins whose windows share
/// no pixel with any box. Returns the origins and whether the attempt budget
/// (1000 rejections per requested window) ran out first.
pub(crate) fn negative_origins(image: &AnnotatedImage, spec: &PatchSpec, count: usize, seed: u64) -> (Vec<(u32, u32)>, bool) {
    let p = spec.patch_size;
    if image.width() < p || image.height() < p {
        return (Vec::new(), count > 0);
    }
    let (max_x, max_y) = ((image.width() - p) as u32, (image.height() - p) as u32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = count.saturating_mul(1000);
    let mut rejected = 0usize;
    let mut seen = HashSet::with_capacity(count);
    let mut origins = Vec::with_capacity(count);
    while origins.len() < count {
        if rejected >= budget {
            return (origins, true);
        }
        let x = rng.random_range(0..=max_x);
        let y = rng.random_range(0..=max_y);
        let window = spec.window(x, y);
        if image.boxes.iter().any(|b| b.intersects(&window)) || !seen.insert((x, y)) {
            rejected += 1;
        } else {
            origins.push((x, y));
        }
    }
    (origins, false)
}

/// `count` negative patches at random locations not intersecting any
/// annotated box (of any class). Deterministic given `seed`.
pub fn sample_negative_patches(
    image: &AnnotatedImage,
    spec: &PatchSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<Patch>, PatchError> {
    let (origins, exhausted) = negative_origins(image, spec, count, seed);
    if exhausted {
        return Err(PatchError::SamplingExhausted { image_id: image.id.clone(), requested: count, found: origins.len() });
    }
    Ok(origins.into_iter().map(|o| materialize(image, spec, o, Label::Negative)).collect())
}

/// Randomly discards negatives so that at most `cap_ratio · |positives|`
/// remain. Kept negatives retain their relative order.
pub fn balance<P, N>(positives: &[P], negatives: Vec<N>, cap_ratio: usize, seed: u64) -> Result<Vec<N>, PatchError> {
    balance_count(positives.len(), negatives, cap_ratio, seed)
}

pub(crate) fn balance_count<N>(positives: usize, negatives: Vec<N>, cap_ratio: usize, seed: u64) -> Result<Vec<N>, PatchError> {
    if positives == 0 {
        return Err(PatchError::NoPositives);
    }
    let cap = positives.saturating_mul(cap_ratio);
    if negatives.len() <= cap {
        return Ok(negatives);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = index::sample(&mut rng, negatives.len(), cap).into_vec();
    keep.sort_unstable();
    let mut keep = keep.into_iter().peekable();
    Ok(negatives
        .into_iter()
        .enumerate()
        .filter_map(|(i, n)| {
            if keep.peek() == Some(&i) {
                keep.next();
                Some(n)
            } else {
                None
            }
        })
        .collect())
}

/// Applies dihedral transform `t` (0–7) to a planar `[c, n, n]` buffer:
/// horizontal flip when `t ≥ 4`, then `t mod 4` quarter turns counter-clockwise.
pub fn dihedral_transform(src: &[f32], channels: usize, n: usize, t: u8) -> Vec<f32> {
    let flip = t >= 4;
    let turns = t % 4;
    let mut out = vec![0.0f32; src.len()];
    for y in 0..n {
        for x in 0..n {
            let (mut ty, mut tx) = if flip { (y, n - 1 - x) } else { (y, x) };
            for _ in 0..turns {
                (ty, tx) = (n - 1 - tx, ty);
            }
            for c in 0..channels {
                out[(c * n + ty) * n + tx] = src[(c * n + y) * n + x];
            }
        }
    }
    out
}

/// The eight D4 variants of a square patch; element 0 is the input itself.
pub fn augment(patch: &Patch) -> Result<Vec<Patch>, PatchError> {
    let [c, h, w] = patch.pixels.shape()[..] else {
        return Err(PatchError::NotSquare { height: 0, width: 0 });
    };
    if h != w {
        return Err(PatchError::NotSquare { height: h, width: w });
    }
    Ok((0..8u8)
        .map(|t| {
            let pixels = if t == 0 {
                patch.pixels.clone()
            } else {
                Tensor::new(vec![c, h, w], dihedral_transform(patch.pixels.data(), c, h, t)).expect("same shape")
            };
            Patch { pixels, provenance: PatchProvenance::Augmented(t), ..patch.clone() }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patchset::Raster;

    fn blank(w: usize, h: usize, boxes: Vec<BoundingBox>) -> AnnotatedImage {
        AnnotatedImage::new("img", Raster::filled(w, h, [200.0, 180.0, 220.0]), boxes).unwrap()
    }

    fn spec(p: usize) -> PatchSpec {
        PatchSpec { patch_size: p, downsample_factor: 1, ..PatchSpec::default() }
    }

    #[test]
    fn downsample_identity_and_exact_box_division() {
        let img = blank(40, 40, vec![BoundingBox::new(10, 10, 20, 20, "x")]);
        assert_eq!(downsample(&img, 1).unwrap(), img);
        let ds = downsample(&img, 2).unwrap();
        assert_eq!(ds.boxes[0].to_array(), [5, 5, 10, 10]);
        assert_eq!((ds.width(), ds.height()), (20, 20));
    }

    #[test]
    fn downsample_checkerboard_is_block_mean() {
        let mut r = Raster::filled(4, 4, [0.0; 3]);
        for y in 0..4 {
            for x in 0..4 {
                if (x + y) % 2 == 0 {
                    r.set_pixel(x, y, [255.0; 3]);
                }
            }
        }
        let img = AnnotatedImage::new("c", r, vec![]).unwrap();
        let ds = downsample(&img, 2).unwrap();
        assert_eq!((ds.width(), ds.height()), (2, 2));
        assert!(ds.raster.data().iter().all(|&v| v == 127.5));
    }

    #[test]
    fn downsample_rounds_boxes_outward() {
        let img = blank(41, 41, vec![BoundingBox::new(3, 5, 8, 9, "x"), BoundingBox::new(40, 40, 41, 41, "x")]);
        let ds = downsample(&img, 2).unwrap();
        // second box lives only in the dropped trailing column/row
        assert_eq!(ds.boxes.len(), 1);
        assert_eq!(ds.boxes[0].to_array(), [1, 2, 4, 5]);
    }

    #[test]
    fn factor_too_large() {
        let img = blank(40, 40, vec![]);
        let s = PatchSpec { downsample_factor: 2, patch_size: 32, ..PatchSpec::default() };
        assert!(matches!(downsample_for(&img, &s), Err(PatchError::FactorTooLarge { .. })));
        assert!(matches!(downsample(&img, 41), Err(PatchError::FactorTooLarge { .. })));
    }

    #[test]
    fn centered_positive_origin() {
        let s = spec(32);
        let img = blank(64, 64, vec![BoundingBox::new(28, 28, 36, 36, DEFAULT_TARGET_LABEL)]);
        let ext = extract_positive_patches(&img, &s);
        assert_eq!(ext.skipped, 0);
        assert_eq!(ext.patches.len(), 1);
        assert_eq!(ext.patches[0].origin, (32 - 16, 32 - 16));
        assert_eq!(ext.patches[0].pixels.shape(), &[3, 32, 32]);
        assert!(ext.patches[0].pixels.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn boundary_box_skipped() {
        let img = blank(64, 64, vec![BoundingBox::new(0, 30, 4, 34, DEFAULT_TARGET_LABEL)]);
        let ext = extract_positive_patches(&img, &spec(32));
        assert!(ext.patches.is_empty());
        assert_eq!(ext.skipped, 1);
    }

    #[test]
    fn three_interior_boxes_and_other_labels_ignored() {
        let l = DEFAULT_TARGET_LABEL;
        let img = blank(
            128,
            128,
            vec![
                BoundingBox::new(20, 20, 30, 30, l),
                BoundingBox::new(60, 60, 70, 70, l),
                BoundingBox::new(90, 30, 100, 40, l),
                BoundingBox::new(50, 20, 60, 30, "taenia"),
            ],
        );
        let ext = extract_positive_patches(&img, &spec(32));
        assert_eq!(ext.patches.len(), 3);
        let origins: HashSet<_> = ext.patches.iter().map(|p| p.origin).collect();
        assert_eq!(origins.len(), 3);
    }

    #[test]
    fn negatives_on_empty_and_saturated_images() {
        let s = spec(16);
        let empty = blank(48, 48, vec![]);
        let negs = sample_negative_patches(&empty, &s, 5, 1).unwrap();
        assert_eq!(negs.len(), 5);
        assert!(negs.iter().all(|p| p.label == Label::Negative));

        let full = blank(48, 48, vec![BoundingBox::new(0, 0, 48, 48, "x")]);
        assert!(matches!(sample_negative_patches(&full, &s, 1, 1), Err(PatchError::SamplingExhausted { .. })));
        assert!(sample_negative_patches(&full, &s, 0, 1).unwrap().is_empty());
    }

    #[test]
    fn negative_sampling_is_seeded() {
        let s = spec(16);
        let img = blank(64, 64, vec![BoundingBox::new(20, 20, 30, 30, "x")]);
        let a = sample_negative_patches(&img, &s, 10, 42).unwrap();
        let b = sample_negative_patches(&img, &s, 10, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn balance_caps_at_ratio() {
        let pos = vec![(); 10];
        assert_eq!(balance(&pos, (0..1500).collect::<Vec<_>>(), 100, 3).unwrap().len(), 1000);
        let pos = vec![(); 5];
        assert_eq!(balance(&pos, (0..200).collect::<Vec<_>>(), 100, 3).unwrap(), (0..200).collect::<Vec<_>>());
        let none: Vec<()> = vec![];
        assert!(matches!(balance(&none, vec![1, 2], 100, 3), Err(PatchError::NoPositives)));
    }

    fn patch_from(values: Vec<f32>, n: usize) -> Patch {
        let len = values.len();
        Patch {
            pixels: Tensor::new(vec![len / (n * n), n, n], values).unwrap(),
            label: Label::Positive,
            source_image_id: "p".into(),
            origin: (0, 0),
            provenance: PatchProvenance::Original,
        }
    }

    #[test]
    fn d4_on_two_by_two_enumerated_by_hand() {
        // [[1,2],[3,4]] under: identity, 3 CCW turns, and flip followed by turns.
        let expected: [[f32; 4]; 8] = [
            [1.0, 2.0, 3.0, 4.0],
            [2.0, 4.0, 1.0, 3.0],
            [4.0, 3.0, 2.0, 1.0],
            [3.0, 1.0, 4.0, 2.0],
            [2.0, 1.0, 4.0, 3.0],
            [1.0, 3.0, 2.0, 4.0],
            [3.0, 4.0, 1.0, 2.0],
            [4.0, 2.0, 3.0, 1.0],
        ];
        let out = augment(&patch_from(vec![1.0, 2.0, 3.0, 4.0], 2)).unwrap();
        assert_eq!(out.len(), 8);
        for (t, (p, e)) in out.iter().zip(expected.iter()).enumerate() {
            assert_eq!(p.pixels.data(), e, "transform {t}");
            assert_eq!(p.provenance, PatchProvenance::Augmented(t as u8));
        }
        let distinct: HashSet<Vec<u32>> =
            out.iter().map(|p| p.pixels.data().iter().map(|v| v.to_bits()).collect()).collect();
        assert_eq!(distinct.len(), 8);
    }

    #[test]
    fn constant_patch_still_yields_eight() {
        let out = augment(&patch_from(vec![0.5; 3 * 16], 4)).unwrap();
        assert_eq!(out.len(), 8);
        assert!(out.iter().all(|p| p.pixels == out[0].pixels));
    }

    #[test]
    fn non_square_rejected() {
        let mut p = patch_from(vec![0.0; 3 * 4], 2);
        p.pixels = Tensor::new(vec![3, 1, 4], vec![0.0; 12]).unwrap();
        assert!(matches!(augment(&p), Err(PatchError::NotSquare { height: 1, width: 4 })));
    }
}
