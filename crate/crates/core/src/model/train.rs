use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{ModelError, TrainConfig, TrainedModel};
use crate::neural::{sgd_step, NeuralError, Tensor};
use crate::patchset::{DatasetSplit, Patch};
use crate::seed::derive_seed;

/// Emitted after every completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainEvent {
    pub epoch: usize,
    pub epochs: usize,
    pub mean_loss: f64,
}

pub(crate) fn dataset_hash(patches: &[Patch]) -> String {
    let mut h = Sha256::new();
    for p in patches {
        h.update([p.label.class_index() as u8]);
        for v in p.pixels.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Mini-batch SGD with momentum on the split's training patches, minimizing
/// mean softmax cross-entropy.
///
/// `progress` sees every finished epoch; returning `ControlFlow::Break` stops
/// training and returns the weights as of that epoch.
pub fn train(
    model: &TrainedModel,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&TrainEvent) -> ControlFlow<()>,
) -> Result<TrainedModel, ModelError> {
    cfg.validate()?;
    let patches = &split.train;
    let positives = patches.iter().filter(|p| p.label.is_positive()).count();
    if positives == 0 || positives == patches.len() {
        return Err(ModelError::SingleClassDataset);
    }
    let expected = model.input_shape();
    if let Some(bad) = patches.iter().find(|p| p.pixels.shape() != expected.as_slice()) {
        return Err(ModelError::ShapeMismatch { expected, got: bad.pixels.shape().to_vec() });
    }

    let mut net = model.network.clone();
    let mut velocity: Vec<Option<(Tensor<f32>, Tensor<f32>)>> = net
        .layers()
        .iter()
        .map(|l| l.as_ref().map(|p| (Tensor::zeros(p.weights.shape()), Tensor::zeros(p.bias.shape()))))
        .collect();
    let lr = cfg.learning_rate as f32;
    let momentum = cfg.momentum as f32;
    let input_len = net.config().input_len();
    let mut history = model.history.clone();
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut stacked = Vec::with_capacity(cfg.batch_size * input_len);
    let mut labels = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        if cfg.shuffle_each_epoch {
            order.sort_unstable();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("epoch/{epoch}"))));
        }
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            stacked.clear();
            labels.clear();
            for &i in chunk {
                stacked.extend_from_slice(patches[i].pixels.data());
                labels.push(patches[i].label.class_index());
            }
            let (loss, grads) = net.loss_and_gradients(&stacked, &labels).map_err(|e| match e {
                NeuralError::NonFinite { .. } => ModelError::DivergedLoss { epoch: epoch + 1 },
                other => other.into(),
            })?;
            for ((param, grad), vel) in net.layers_mut().iter_mut().zip(&grads.layers).zip(&mut velocity) {
                if let (Some(p), Some(g), Some((vw, vb))) = (param, grad, vel) {
                    sgd_step(&mut p.weights, &g.weights, lr, momentum, vw)?;
                    sgd_step(&mut p.bias, &g.bias, lr, momentum, vb)?;
                }
            }
            loss_sum += f64::from(loss);
            batches += 1;
        }
        let mean_loss = loss_sum / batches as f64;
        if !mean_loss.is_finite() {
            return Err(ModelError::DivergedLoss { epoch: epoch + 1 });
        }
        history.push(mean_loss);
        let event = TrainEvent { epoch: epoch + 1, epochs: cfg.epochs, mean_loss };
        if progress(&event).is_break() {
            break;
        }
    }

    let mut provenance = model.provenance.clone();
    provenance.dataset_hash = dataset_hash(patches);
    provenance.train = Some(cfg.clone());
    provenance.patch_spec = Some(split.spec.clone());
    Ok(TrainedModel { network: net, history, provenance })
}
