//! Annotated images to balanced, augmented, split patch datasets.

mod annotation;
mod cache;
mod patches;
mod raster;
mod split;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use annotation::{load_corpus, load_image, AnnotatedImage, BoundingBox, Manifest, ManifestImage, ManifestObject, MANIFEST_VERSION};
pub use cache::{decode_split, encode_split, load_split, save_split, PATCH_CACHE_MAGIC, PATCH_CACHE_VERSION};
pub use patches::{
    augment, balance, dihedral_transform, downsample, downsample_for, extract_positive_patches, sample_negative_patches,
    Label, Patch, PatchProvenance, PatchSpec, PositiveExtraction, DEFAULT_TARGET_LABEL,
};
pub use raster::{Raster, CHANNELS};
pub use split::{generate_patches, split_50_50, split_dataset, DatasetSplit, PipelineStats, SplitMode};

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("box {bbox:?} outside {width}x{height} raster or empty")]
    InvalidBox { bbox: [u32; 4], width: usize, height: usize },
    #[error("invalid patch spec: {0}")]
    InvalidSpec(String),
    #[error("downsampling {width}x{height} by {factor} leaves less than {min_side} pixels per side")]
    FactorTooLarge { factor: u32, width: usize, height: usize, min_side: usize },
    #[error("negative sampling exhausted on image {image_id}: found {found} of {requested} windows")]
    SamplingExhausted { image_id: String, requested: usize, found: usize },
    #[error("no positive patches to balance against")]
    NoPositives,
    #[error("patch is {height}x{width}, augmentation needs a square patch")]
    NotSquare { height: usize, width: usize },
    #[error("corpus has {0} image(s); a split needs at least 2")]
    CorpusTooSmall(usize),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("patch cache: {0}")]
    Cache(String),
    #[error("patch cache truncated")]
    CacheTruncated,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl PatchError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}
