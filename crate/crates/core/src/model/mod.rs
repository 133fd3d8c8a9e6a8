//! The patch classifier: fixed architecture, mini-batch SGD training, patch
//! prediction and the versioned model file.

mod io;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural::{LayerSpec, Network, NetworkConfig, NeuralError};
use crate::patchset::{Patch, PatchSpec};

pub use io::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use train::{train, TrainEvent};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("patch size {0} is too small for the network (need ≥ 8)")]
    PatchTooSmall(usize),
    #[error("training set must contain both classes")]
    SingleClassDataset,
    #[error("training loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("patch shape {got:?} does not match model input {expected:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("model format version {0} is not supported")]
    VersionUnsupported(u32),
    #[error("model file is truncated")]
    TruncatedFile,
    #[error("model checksum mismatch")]
    ChecksumMismatch,
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

pub const MIN_PATCH_SIZE: usize = 8;

/// conv(7 filters, 3×3) → ReLU → maxpool(2) → conv(12 filters, 2×2) → ReLU →
/// dense(500) → ReLU → dense(2) with softmax, on `3 × p × p` inputs.
pub fn standard_config(patch_size: usize) -> NetworkConfig {
    NetworkConfig {
        input_channels: 3,
        patch_size,
        layers: vec![
            LayerSpec::Conv { filters: 7, size: 3 },
            LayerSpec::Relu,
            LayerSpec::Maxpool { factor: 2 },
            LayerSpec::Conv { filters: 12, size: 2 },
            LayerSpec::Relu,
            LayerSpec::Dense { units: 500 },
            LayerSpec::Relu,
            LayerSpec::SoftmaxOutput { classes: 2 },
        ],
    }
}

/// Flattened conv-stack output for the standard network: `12 · s²` with
/// `s = ⌊(p − 2)/2⌋ − 1`.
pub fn standard_flatten_size(patch_size: usize) -> usize {
    let s = (patch_size - 2) / 2 - 1;
    12 * s * s
}

/// `7·(3·3·3+1) + 12·(7·2·2+1) + (flatten·500+500) + (500·2+2)`
pub fn standard_parameter_count(patch_size: usize) -> usize {
    7 * (3 * 3 * 3 + 1) + 12 * (7 * 2 * 2 + 1) + (standard_flatten_size(patch_size) * 500 + 500) + (500 * 2 + 2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 500, learning_rate: 0.01, momentum: 0.9, batch_size: 64, seed: 0, shuffle_each_epoch: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 {
            return Err(ModelError::InvalidConfig("epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.momentum.is_finite()) {
            return Err(ModelError::InvalidConfig("learning_rate and momentum must be finite".into()));
        }
        Ok(())
    }
}

/// Where a model's weights came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub init_seed: u64,
    /// SHA-256 over the training patches, empty for an untrained model.
    pub dataset_hash: String,
    pub train: Option<TrainConfig>,
    /// Patch geometry the model was trained on; detection reuses it.
    pub patch_spec: Option<PatchSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub network: Network<f32>,
    /// Mean training loss per completed epoch.
    pub history: Vec<f64>,
    pub provenance: Provenance,
}

impl TrainedModel {
    pub fn config(&self) -> &NetworkConfig {
        self.network.config()
    }

    pub fn patch_size(&self) -> usize {
        self.network.config().patch_size
    }

    pub fn input_shape(&self) -> Vec<usize> {
        let c = self.network.config();
        vec![c.input_channels, c.patch_size, c.patch_size]
    }

    /// Probability of the positive class for one patch.
    pub fn predict_patch(&self, patch: &Patch) -> Result<f64, ModelError> {
        Ok(self.class_probabilities(patch.pixels.shape(), patch.pixels.data())?[1])
    }

    /// Softmax over both classes, computed in `f64` from the network's logits.
    pub fn class_probabilities(&self, shape: &[usize], pixels: &[f32]) -> Result<[f64; 2], ModelError> {
        let expected = self.input_shape();
        if shape != expected.as_slice() {
            return Err(ModelError::ShapeMismatch { expected, got: shape.to_vec() });
        }
        let logits = self.network.logits(pixels, 1)?;
        Ok(two_class_softmax(logits[0], logits[1]))
    }

    /// Positive-class probabilities for `n` stacked planar inputs.
    pub fn predict_batch(&self, stacked: &[f32], n: usize) -> Result<Vec<f64>, ModelError> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let logits = self.network.logits(stacked, n)?;
        Ok(logits.chunks_exact(2).map(|l| two_class_softmax(l[0], l[1])[1]).collect())
    }

    /// Positive-class probabilities for a list of patches, scored in batches.
    pub fn predict_patches(&self, patches: &[Patch]) -> Result<Vec<f64>, ModelError> {
        let expected = self.input_shape();
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(256) {
            let mut stacked = Vec::with_capacity(chunk.len() * self.network.config().input_len());
            for p in chunk {
                if p.pixels.shape() != expected.as_slice() {
                    return Err(ModelError::ShapeMismatch { expected, got: p.pixels.shape().to_vec() });
                }
                stacked.extend_from_slice(p.pixels.data());
            }
            out.extend(self.predict_batch(&stacked, chunk.len())?);
        }
        Ok(out)
    }
}

fn two_class_softmax(a: f32, b: f32) -> [f64; 2] {
    let (a, b) = (f64::from(a), f64::from(b));
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    let total = ea + eb;
    [ea / total, eb / total]
}

/// Untrained standard network with seeded Glorot-uniform weights.
pub fn build_network(patch_size: usize, seed: u64) -> Result<TrainedModel, ModelError> {
    if patch_size < MIN_PATCH_SIZE {
        return Err(ModelError::PatchTooSmall(patch_size));
    }
    let network = Network::glorot(standard_config(patch_size), seed)?;
    Ok(TrainedModel { network, history: Vec::new(), provenance: Provenance { init_seed: seed, ..Provenance::default() } })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_law_for_32() {
        let shapes = standard_config(32).activation_shapes().unwrap();
        assert_eq!(shapes[1], vec![7, 30, 30]);
        assert_eq!(shapes[3], vec![7, 15, 15]);
        assert_eq!(shapes[4], vec![12, 14, 14]);
        assert_eq!(standard_flatten_size(32), 2352);
        assert_eq!(shapes[5].iter().product::<usize>(), 2352);
    }

    #[test]
    fn conv1_parameter_count() {
        let shapes = standard_config(32).parameter_shapes().unwrap();
        let (w, b) = shapes[0].as_ref().unwrap();
        assert_eq!(w.iter().product::<usize>() + b.iter().product::<usize>(), 196);
    }

    #[test]
    fn too_small_patch() {
        assert!(matches!(build_network(7, 0), Err(ModelError::PatchTooSmall(7))));
        assert!(build_network(8, 0).is_ok());
    }

    #[test]
    fn seeded_init_is_reproducible() {
        assert_eq!(build_network(16, 5).unwrap(), build_network(16, 5).unwrap());
        assert_ne!(build_network(16, 5).unwrap().network, build_network(16, 6).unwrap().network);
    }

    #[test]
    fn probabilities_sum_to_one_even_for_zero_network() {
        let zero = TrainedModel {
            network: Network::zeros(standard_config(16)).unwrap(),
            history: vec![],
            provenance: Provenance::default(),
        };
        let pixels = vec![0.3f32; 3 * 16 * 16];
        let p = zero.class_probabilities(&[3, 16, 16], &pixels).unwrap();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
        assert!((0.0..=1.0).contains(&p[1]));

        let m = build_network(16, 1).unwrap();
        let p = m.class_probabilities(&[3, 16, 16], &pixels).unwrap();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
        assert!(matches!(m.class_probabilities(&[3, 8, 8], &pixels[..192]), Err(ModelError::ShapeMismatch { .. })));
    }
}
