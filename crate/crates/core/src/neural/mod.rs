//! Dense-tensor numerical engine: forward/backward passes for convolution,
//! max pooling, fully connected and ReLU layers, softmax cross-entropy, SGD
//! with momentum, and finite-difference gradient verification.

mod activation;
mod conv;
mod dense;
pub mod gradcheck;
mod loss;
pub mod network;
mod optim;
mod pool;
mod real;
mod tensor;

use thiserror::Error;

pub use activation::{relu_backward, relu_forward};
pub use conv::{conv2d_backward, conv2d_forward, Conv2dGrads};
pub use dense::{dense_backward, dense_forward, DenseGrads};
pub use gradcheck::{gradient_check, gradient_check_with, relative_error, GradCheckOptions, GradCheckReport};
pub use loss::{softmax, softmax_cross_entropy};
pub use network::{ForwardPass, Gradients, LayerSpec, Network, NetworkConfig, ParamPair};
pub use optim::sgd_step;
pub use pool::{maxpool_backward, maxpool_forward, PoolIndices};
pub use real::Real;
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NeuralError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("index {index} out of range for {len} elements")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid layer configuration: {0}")]
    InvalidLayer(String),
}

impl NeuralError {
    pub(crate) fn shape(op: &'static str, detail: String) -> Self {
        Self::ShapeMismatch { op, detail }
    }
}
