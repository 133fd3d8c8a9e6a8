//! Per-command configuration files.
//!
//! Each subcommand accepts `--config <file.toml>`; keys mirror the long flag
//! names with `_` in place of `-`, and flags given on the command line win
//! over the file. Missing keys take their defaults.
//!
//! ```toml
//! # build-patches.toml
//! seed = 7
//! split = "image"          # or "patch"
//! [patch]
//! downsample_factor = 2
//! patch_size = 32
//! stride = 8
//! ```

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use pathoscope_core::patchset::{PatchSpec, SplitMode};

pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildPatchesConfig {
    pub seed: u64,
    pub split: SplitMode,
    pub patch: PatchSpec,
}

impl Default for BuildPatchesConfig {
    fn default() -> Self {
        Self { seed: DEFAULT_SEED, split: SplitMode::Image, patch: PatchSpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectCmdConfig {
    /// Window stride in downsampled pixels; `None` means a quarter patch.
    pub stride: Option<usize>,
    pub probability_threshold: f64,
    pub overlap_threshold: f64,
    /// Image ids to process; empty means every image in the corpus.
    pub images: Vec<String>,
}

impl Default for DetectCmdConfig {
    fn default() -> Self {
        Self { stride: None, probability_threshold: 0.5, overlap_threshold: 0.3, images: Vec::new() }
    }
}

/// Parses `path` as TOML into `T`, or returns `T::default()` without a file.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}
