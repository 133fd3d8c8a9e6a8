//! Whole-corpus patch generation and the 50/50 train/test split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::patches::{augment, balance_count, downsample_for, materialize, negative_origins, positive_origins};
use super::{AnnotatedImage, Label, Patch, PatchError, PatchSpec};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Images are partitioned first; no source image contributes to both halves.
    Image,
    /// Patches from the whole corpus (augmented copies included) are split,
    /// stratified by label. Overlapping and transformed copies of one object
    /// can land on both sides.
    Patch,
}

/// Bookkeeping from one run of the patch pipeline.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStats {
    /// Positive windows before augmentation.
    pub original_positives: usize,
    /// Target boxes whose centered window left the raster.
    pub skipped_positives: usize,
    pub negatives_sampled: usize,
    pub negatives_kept: usize,
    /// Images where negative sampling ran out of attempts before reaching its quota.
    pub exhausted_images: usize,
}

impl PipelineStats {
    fn absorb(&mut self, other: &PipelineStats) {
        self.original_positives += other.original_positives;
        self.skipped_positives += other.skipped_positives;
        self.negatives_sampled += other.negatives_sampled;
        self.negatives_kept += other.negatives_kept;
        self.exhausted_images += other.exhausted_images;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Patch>,
    pub test: Vec<Patch>,
    pub seed: u64,
    pub mode: SplitMode,
    pub spec: PatchSpec,
    pub train_image_ids: Vec<String>,
    pub test_image_ids: Vec<String>,
    pub stats: PipelineStats,
}

impl DatasetSplit {
    pub fn positive_fraction(patches: &[Patch]) -> f64 {
        if patches.is_empty() {
            return 0.0;
        }
        patches.iter().filter(|p| p.label.is_positive()).count() as f64 / patches.len() as f64
    }
}

/// Full patch pipeline over a set of images: downsample, centered positives,
/// random negatives, cap negatives at `neg_cap_ratio ×` the original positive
/// count, then expand every positive into its 8 dihedral variants.
///
/// Output order: all (augmented) positives in image order, then kept negatives.
pub fn generate_patches(
    images: &[&AnnotatedImage],
    spec: &PatchSpec,
    seed: u64,
    balance_key: &str,
) -> Result<(Vec<Patch>, PipelineStats), PatchError> {
    spec.validate()?;
    let mut stats = PipelineStats::default();
    let mut downsampled = Vec::with_capacity(images.len());
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (idx, image) in images.iter().enumerate() {
        let ds = downsample_for(image, spec)?;
        let (pos, skipped) = positive_origins(&ds, spec);
        let count = spec.negatives_per_image.unwrap_or_else(|| spec.grid_window_count(ds.width(), ds.height()));
        let (neg, exhausted) = negative_origins(&ds, spec, count, derive_seed(seed, &format!("negatives/{}", image.id)));
        stats.skipped_positives += skipped;
        stats.exhausted_images += usize::from(exhausted);
        positives.extend(pos.into_iter().map(|o| (idx, o)));
        negatives.extend(neg.into_iter().map(|o| (idx, o)));
        downsampled.push(ds);
    }
    stats.original_positives = positives.len();
    stats.negatives_sampled = negatives.len();
    let negatives = balance_count(positives.len(), negatives, spec.neg_cap_ratio, derive_seed(seed, balance_key))?;
    stats.negatives_kept = negatives.len();

    let mut patches = Vec::with_capacity(positives.len() * 8 + negatives.len());
    for (idx, origin) in positives {
        patches.extend(augment(&materialize(&downsampled[idx], spec, origin, Label::Positive))?);
    }
    for (idx, origin) in negatives {
        patches.push(materialize(&downsampled[idx], spec, origin, Label::Negative));
    }
    Ok((patches, stats))
}

/// Default split: by source image.
pub fn split_50_50(corpus: &[AnnotatedImage], spec: &PatchSpec, seed: u64) -> Result<DatasetSplit, PatchError> {
    split_dataset(corpus, spec, seed, SplitMode::Image)
}

pub fn split_dataset(
    corpus: &[AnnotatedImage],
    spec: &PatchSpec,
    seed: u64,
    mode: SplitMode,
) -> Result<DatasetSplit, PatchError> {
    if corpus.len() < 2 {
        return Err(PatchError::CorpusTooSmall(corpus.len()));
    }
    spec.validate()?;
    match mode {
        SplitMode::Image => {
            let mut order: Vec<&AnnotatedImage> = corpus.iter().collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "split/images")));
            let (train_imgs, test_imgs) = order.split_at(corpus.len().div_ceil(2));
            let (train, train_stats) = generate_patches(train_imgs, spec, seed, "balance/train")?;
            let (test, test_stats) = generate_patches(test_imgs, spec, seed, "balance/test")?;
            let mut stats = train_stats;
            stats.absorb(&test_stats);
            Ok(DatasetSplit {
                train,
                test,
                seed,
                mode,
                spec: spec.clone(),
                train_image_ids: train_imgs.iter().map(|i| i.id.clone()).collect(),
                test_image_ids: test_imgs.iter().map(|i| i.id.clone()).collect(),
                stats,
            })
        }
        SplitMode::Patch => {
            let all: Vec<&AnnotatedImage> = corpus.iter().collect();
            let (patches, stats) = generate_patches(&all, spec, seed, "balance/all")?;
            let (mut pos, mut neg): (Vec<Patch>, Vec<Patch>) = patches.into_iter().partition(|p| p.label.is_positive());
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "split/patches"));
            pos.shuffle(&mut rng);
            neg.shuffle(&mut rng);
            // The test half takes the odd positive and leaves the odd negative,
            // so its positive fraction is never below the corpus fraction.
            let test_neg = neg.split_off(neg.len().div_ceil(2));
            let test_pos = pos.split_off(pos.len() / 2);
            let mut train = pos;
            train.extend(neg);
            let mut test = test_pos;
            test.extend(test_neg);
            let ids: Vec<String> = corpus.iter().map(|i| i.id.clone()).collect();
            Ok(DatasetSplit {
                train,
                test,
                seed,
                mode,
                spec: spec.clone(),
                train_image_ids: ids.clone(),
                test_image_ids: ids,
                stats,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patchset::{BoundingBox, Raster, DEFAULT_TARGET_LABEL};
    use std::collections::HashSet;

    fn corpus(n: usize) -> Vec<AnnotatedImage> {
        (0..n)
            .map(|i| {
                let c = 20 + (i as u32 * 7) % 24;
                AnnotatedImage::new(
                    format!("img-{i:02}"),
                    Raster::filled(64, 64, [210.0, 190.0, 220.0]),
                    vec![BoundingBox::new(c, c, c + 6, c + 6, DEFAULT_TARGET_LABEL)],
                )
                .unwrap()
            })
            .collect()
    }

    fn spec() -> PatchSpec {
        PatchSpec { downsample_factor: 1, patch_size: 16, stride: 4, ..PatchSpec::default() }
    }

    #[test]
    fn image_split_is_disjoint_and_halved() {
        let split = split_50_50(&corpus(10), &spec(), 9).unwrap();
        assert_eq!(split.train_image_ids.len(), 5);
        assert_eq!(split.test_image_ids.len(), 5);
        let train: HashSet<_> = split.train.iter().map(|p| &p.source_image_id).collect();
        let test: HashSet<_> = split.test.iter().map(|p| &p.source_image_id).collect();
        assert!(train.is_disjoint(&test));
        assert!(!split.train.is_empty() && !split.test.is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        let c = corpus(6);
        assert_eq!(split_50_50(&c, &spec(), 4).unwrap(), split_50_50(&c, &spec(), 4).unwrap());
        assert_ne!(split_50_50(&c, &spec(), 4).unwrap().train_image_ids, split_50_50(&c, &spec(), 5).unwrap().train_image_ids);
    }

    #[test]
    fn too_small() {
        assert!(matches!(split_50_50(&corpus(1), &spec(), 0), Err(PatchError::CorpusTooSmall(1))));
    }

    #[test]
    fn positive_fraction_respects_cap() {
        // ratio 2 with plenty of negatives: positives 8·P vs at most 2·P negatives
        let s = PatchSpec { neg_cap_ratio: 2, ..spec() };
        let split = split_dataset(&corpus(8), &s, 1, SplitMode::Patch).unwrap();
        assert!(DatasetSplit::positive_fraction(&split.test) >= 8.0 / 10.0 - 1e-12);
        assert_eq!(split.stats.negatives_kept, 2 * split.stats.original_positives);
    }
}
