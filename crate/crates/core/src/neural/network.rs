//! Sequential network over the fixed layer set, generic over precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{self, ConvGeometry};
use super::loss::cross_entropy_row;
use super::{activation, dense, pool, NeuralError, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv { filters: usize, size: usize },
    Maxpool { factor: usize },
    Dense { units: usize },
    Relu,
    /// Final dense layer producing one logit per class; softmax is applied by
    /// the loss and by prediction.
    SoftmaxOutput { classes: usize },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = match *self {
            LayerSpec::Conv { filters, size } => (filters == 0 || size == 0).then(|| "conv needs filters ≥ 1 and size ≥ 1"),
            LayerSpec::Maxpool { factor } => (factor < 2).then_some("pool factor must be ≥ 2"),
            LayerSpec::Dense { units } => (units == 0).then_some("dense needs ≥ 1 unit"),
            LayerSpec::SoftmaxOutput { classes } => (classes < 2).then_some("output needs ≥ 2 classes"),
            LayerSpec::Relu => None,
        };
        match bad {
            Some(msg) => Err(NeuralError::InvalidLayer(format!("{self:?}: {msg}"))),
            None => Ok(()),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Maxpool { .. } => "maxpool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::SoftmaxOutput { .. } => "softmax-output",
        }
    }
}

/// Input geometry plus the ordered layer stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub patch_size: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkConfig {
    /// Shape of the activation entering each layer, followed by the output
    /// shape. Spatial activations are `[C, H, W]`; dense ones `[n]`.
    pub fn activation_shapes(&self) -> Result<Vec<Vec<usize>>, NeuralError> {
        if self.input_channels == 0 || self.patch_size == 0 {
            return Err(NeuralError::InvalidLayer("empty input geometry".into()));
        }
        let Some(LayerSpec::SoftmaxOutput { .. }) = self.layers.last() else {
            return Err(NeuralError::InvalidLayer("last layer must be softmax-output".into()));
        };
        let mut shapes = vec![vec![self.input_channels, self.patch_size, self.patch_size]];
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if matches!(layer, LayerSpec::SoftmaxOutput { .. }) && i + 1 != self.layers.len() {
                return Err(NeuralError::InvalidLayer("softmax-output must be the last layer".into()));
            }
            let cur = shapes.last().unwrap().clone();
            let next = match *layer {
                LayerSpec::Conv { filters, size } => {
                    let [_, h, w] = cur[..] else {
                        return Err(NeuralError::InvalidLayer(format!("conv after flattened layer at {i}")));
                    };
                    if h < size || w < size {
                        return Err(NeuralError::InvalidLayer(format!(
                            "layer {i}: {h}x{w} activation smaller than {size}x{size} filter"
                        )));
                    }
                    vec![filters, h - size + 1, w - size + 1]
                }
                LayerSpec::Maxpool { factor } => {
                    let [c, h, w] = cur[..] else {
                        return Err(NeuralError::InvalidLayer(format!("maxpool after flattened layer at {i}")));
                    };
                    if h < factor || w < factor {
                        return Err(NeuralError::InvalidLayer(format!(
                            "layer {i}: {h}x{w} activation smaller than pool factor {factor}"
                        )));
                    }
                    vec![c, h / factor, w / factor]
                }
                LayerSpec::Dense { units } => vec![units],
                LayerSpec::SoftmaxOutput { classes } => vec![classes],
                LayerSpec::Relu => cur,
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::SoftmaxOutput { classes }) => *classes,
            _ => 0,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.patch_size * self.patch_size
    }

    /// `(weights shape, bias shape)` for each layer; `None` for parameter-free layers.
    pub fn parameter_shapes(&self) -> Result<Vec<Option<(Vec<usize>, Vec<usize>)>>, NeuralError> {
        let shapes = self.activation_shapes()?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let inp: usize = shapes[i].iter().product();
                match *layer {
                    LayerSpec::Conv { filters, size } => {
                        Some((vec![filters, shapes[i][0], size, size], vec![filters]))
                    }
                    LayerSpec::Dense { units: m } | LayerSpec::SoftmaxOutput { classes: m } => {
                        Some((vec![m, inp], vec![m]))
                    }
                    LayerSpec::Maxpool { .. } | LayerSpec::Relu => None,
                }
            })
            .collect())
    }

    pub fn parameter_count(&self) -> Result<usize, NeuralError> {
        Ok(self
            .parameter_shapes()?
            .iter()
            .flatten()
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum())
    }
}

/// Weights and bias of one parametric layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPair<T = f32> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ParamPair<T> {
    fn zeros(shapes: &(Vec<usize>, Vec<usize>)) -> Self {
        Self { weights: Tensor::zeros(&shapes.0), bias: Tensor::zeros(&shapes.1) }
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cast<U: Real>(&self) -> ParamPair<U> {
        ParamPair { weights: self.weights.cast(), bias: self.bias.cast() }
    }
}

/// Per-layer parameter gradients, laid out like [`Network`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    pub layers: Vec<Option<ParamPair<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| l.as_ref().map(|p| ParamPair { weights: Tensor::zeros(p.weights.shape()), bias: Tensor::zeros(p.bias.shape()) }))
                .collect(),
        }
    }

    /// Parameter gradients flattened in layer order, weights before bias.
    pub fn flatten(&self) -> Vec<T> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|p| p.weights.data().iter().chain(p.bias.data()).copied())
            .collect()
    }
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardPass<T = f32> {
    batch: usize,
    /// `activations[i]` is the input of layer `i`; the last entry holds the logits.
    activations: Vec<Vec<T>>,
    pool_argmax: Vec<Option<Vec<usize>>>,
}

impl<T: Real> ForwardPass<T> {
    pub fn logits(&self) -> &[T] {
        self.activations.last().expect("forward pass has output")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub(crate) fn activation(&self, layer: usize) -> &[T] {
        &self.activations[layer]
    }

    pub(crate) fn pool_argmax(&self, layer: usize) -> Option<&[usize]> {
        self.pool_argmax[layer].as_deref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    config: NetworkConfig,
    shapes: Vec<Vec<usize>>,
    layers: Vec<Option<ParamPair<T>>>,
}

impl<T: Real> Network<T> {
    pub fn zeros(config: NetworkConfig) -> Result<Self, NeuralError> {
        let shapes = config.activation_shapes()?;
        let layers = config.parameter_shapes()?.iter().map(|s| s.as_ref().map(ParamPair::zeros)).collect();
        Ok(Self { config, shapes, layers })
    }

    /// Glorot-uniform weights, zero biases. Values are drawn in `f64` so that
    /// networks of either precision built from one seed agree.
    pub fn glorot(config: NetworkConfig, seed: u64) -> Result<Self, NeuralError> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let Some(p) = layer else { continue };
            let (fan_in, fan_out) = match p.weights.shape()[..] {
                [f, c, kh, kw] => (c * kh * kw, f * kh * kw),
                [m, n] => (n, m),
                _ => unreachable!("layer {i} weights have rank 2 or 4"),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in p.weights.data_mut() {
                *w = T::from_f64(rng.random_range(-limit..limit));
            }
        }
        Ok(net)
    }

    pub fn from_parameters(config: NetworkConfig, flat: &[T]) -> Result<Self, NeuralError> {
        let mut net = Self::zeros(config)?;
        let expected = net.parameter_count();
        if flat.len() != expected {
            return Err(NeuralError::shape("from_parameters", format!("{} values for {expected} parameters", flat.len())));
        }
        let mut offset = 0;
        for p in net.layers.iter_mut().flatten() {
            for v in p.weights.data_mut().iter_mut().chain(p.bias.data_mut()) {
                *v = flat[offset];
                offset += 1;
            }
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Option<ParamPair<T>>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Option<ParamPair<T>>] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().flatten().map(ParamPair::len).sum()
    }

    /// All parameters in layer order, weights before bias.
    pub fn flatten_parameters(&self) -> Vec<T> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|p| p.weights.data().iter().chain(p.bias.data()).copied())
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            shapes: self.shapes.clone(),
            layers: self.layers.iter().map(|l| l.as_ref().map(ParamPair::cast)).collect(),
        }
    }

    fn check_input(&self, input: &[T], batch: usize) -> Result<(), NeuralError> {
        let expected = batch * self.config.input_len();
        if batch == 0 || input.len() != expected {
            return Err(NeuralError::shape(
                "network_forward",
                format!("batch {batch} needs {expected} input values, got {}", input.len()),
            ));
        }
        Ok(())
    }

    /// Forward pass over `batch` stacked `[C, p, p]` inputs, keeping activations.
    pub fn forward(&self, input: &[T], batch: usize) -> Result<ForwardPass<T>, NeuralError> {
        self.check_input(input, batch)?;
        self.forward_from(0, input.to_vec(), batch)
    }

    /// Logits `[batch, classes]` without keeping intermediate activations.
    pub fn logits(&self, input: &[T], batch: usize) -> Result<Vec<T>, NeuralError> {
        self.check_input(input, batch)?;
        let mut act = input.to_vec();
        for layer in 0..self.config.layers.len() {
            act = self.apply_layer(layer, &act, batch, None)?;
        }
        Ok(act)
    }

    pub(crate) fn forward_from(&self, start: usize, input: Vec<T>, batch: usize) -> Result<ForwardPass<T>, NeuralError> {
        let n = self.config.layers.len();
        let mut activations = Vec::with_capacity(n + 1 - start);
        let mut pool_argmax = vec![None; n];
        activations.push(input);
        for layer in start..n {
            let mut argmax = None;
            let out = self.apply_layer(layer, activations.last().unwrap(), batch, Some(&mut argmax))?;
            pool_argmax[layer] = argmax;
            activations.push(out);
        }
        // Pad so that `activations[i]` is always the input of layer `i`.
        let mut padded = vec![Vec::new(); start];
        padded.extend(activations);
        Ok(ForwardPass { batch, activations: padded, pool_argmax })
    }

    pub(crate) fn apply_layer(
        &self,
        layer: usize,
        input: &[T],
        batch: usize,
        argmax_out: Option<&mut Option<Vec<usize>>>,
    ) -> Result<Vec<T>, NeuralError> {
        let in_shape = &self.shapes[layer];
        let out_shape = &self.shapes[layer + 1];
        let in_len: usize = in_shape.iter().product();
        let out_len: usize = out_shape.iter().product();
        let spec = self.config.layers[layer];
        let out = match spec {
            LayerSpec::Conv { .. } => {
                let p = self.layers[layer].as_ref().unwrap();
                let g = self.conv_geometry(layer);
                let mut out = vec![T::zero(); batch * out_len];
                for (x, y) in input.chunks_exact(in_len).zip(out.chunks_exact_mut(out_len)) {
                    conv::forward_into(&g, x, p.weights.data(), p.bias.data(), y);
                }
                out
            }
            LayerSpec::Maxpool { factor } => {
                let dims = (in_shape[0], in_shape[1], in_shape[2]);
                let mut out = vec![T::zero(); batch * out_len];
                let mut argmax = vec![0usize; batch * out_len];
                for ((x, y), a) in input
                    .chunks_exact(in_len)
                    .zip(out.chunks_exact_mut(out_len))
                    .zip(argmax.chunks_exact_mut(out_len))
                {
                    pool::forward_into(dims, factor, x, y, a);
                }
                if let Some(slot) = argmax_out {
                    *slot = Some(argmax);
                }
                out
            }
            LayerSpec::Relu => {
                let mut out = input.to_vec();
                activation::relu_in_place(&mut out);
                out
            }
            LayerSpec::Dense { .. } | LayerSpec::SoftmaxOutput { .. } => {
                let p = self.layers[layer].as_ref().unwrap();
                dense::forward_batch(batch, in_len, input, p.weights.data(), p.bias.data())
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(NeuralError::NonFinite { op: spec.name() });
        }
        Ok(out)
    }

    fn conv_geometry(&self, layer: usize) -> ConvGeometry {
        let s = &self.shapes[layer];
        let LayerSpec::Conv { filters, size } = self.config.layers[layer] else {
            unreachable!("layer {layer} is not a convolution")
        };
        ConvGeometry { channels: s[0], height: s[1], width: s[2], filters, kernel_h: size, kernel_w: size }
    }

    /// Backpropagates `grad_logits` (`[batch, classes]`) through a cached pass.
    pub fn backward(&self, pass: &ForwardPass<T>, grad_logits: &[T]) -> Result<Gradients<T>, NeuralError> {
        let batch = pass.batch;
        if grad_logits.len() != pass.logits().len() {
            return Err(NeuralError::shape(
                "network_backward",
                format!("{} logit gradients for {} logits", grad_logits.len(), pass.logits().len()),
            ));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut upstream = grad_logits.to_vec();
        for layer in (0..self.config.layers.len()).rev() {
            let in_len: usize = self.shapes[layer].iter().product();
            let out_len: usize = self.shapes[layer + 1].iter().product();
            let input = &pass.activations[layer];
            let need_input = layer > 0;
            upstream = match self.config.layers[layer] {
                LayerSpec::Conv { .. } => {
                    let g = self.conv_geometry(layer);
                    let p = self.layers[layer].as_ref().unwrap();
                    let gp = grads.layers[layer].as_mut().unwrap();
                    let mut gin = if need_input { vec![T::zero(); batch * in_len] } else { Vec::new() };
                    for s in 0..batch {
                        let x = &input[s * in_len..(s + 1) * in_len];
                        let up = &upstream[s * out_len..(s + 1) * out_len];
                        let gi = need_input.then(|| &mut gin[s * in_len..(s + 1) * in_len]);
                        conv::backward_into(&g, x, p.weights.data(), up, gi, gp.weights.data_mut(), gp.bias.data_mut());
                    }
                    gin
                }
                LayerSpec::Maxpool { .. } => {
                    let argmax = pass.pool_argmax[layer].as_ref().expect("pool indices cached");
                    let mut gin = vec![T::zero(); batch * in_len];
                    for s in 0..batch {
                        pool::backward_into(
                            &argmax[s * out_len..(s + 1) * out_len],
                            &upstream[s * out_len..(s + 1) * out_len],
                            &mut gin[s * in_len..(s + 1) * in_len],
                        );
                    }
                    gin
                }
                LayerSpec::Relu => {
                    activation::relu_backward_in_place(input, &mut upstream);
                    upstream
                }
                LayerSpec::Dense { .. } | LayerSpec::SoftmaxOutput { .. } => {
                    let p = self.layers[layer].as_ref().unwrap();
                    let gp = grads.layers[layer].as_mut().unwrap();
                    dense::backward_batch(
                        batch,
                        in_len,
                        input,
                        p.weights.data(),
                        &upstream,
                        gp.weights.data_mut(),
                        gp.bias.data_mut(),
                        need_input,
                    )
                    .unwrap_or_default()
                }
            };
        }
        for p in grads.layers.iter().flatten() {
            if p.weights.data().iter().chain(p.bias.data()).any(|v| !v.is_finite()) {
                return Err(NeuralError::NonFinite { op: "network_backward" });
            }
        }
        Ok(grads)
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn loss(&self, input: &[T], labels: &[usize]) -> Result<T, NeuralError> {
        let logits = self.logits(input, labels.len())?;
        Ok(self.mean_cross_entropy(&logits, labels)?.0)
    }

    /// Mean loss and its gradient with respect to every parameter.
    pub fn loss_and_gradients(&self, input: &[T], labels: &[usize]) -> Result<(T, Gradients<T>), NeuralError> {
        let pass = self.forward(input, labels.len())?;
        let (loss, grad_logits) = self.mean_cross_entropy(pass.logits(), labels)?;
        // grad_logits already carries the 1/batch factor
        let grads = self.backward(&pass, &grad_logits)?;
        Ok((loss, grads))
    }

    pub(crate) fn mean_cross_entropy(&self, logits: &[T], labels: &[usize]) -> Result<(T, Vec<T>), NeuralError> {
        let k = self.config.classes();
        if logits.len() != labels.len() * k {
            return Err(NeuralError::shape("cross_entropy", format!("{} logits for {} labels", logits.len(), labels.len())));
        }
        let scale = T::one() / T::from_f64(labels.len() as f64);
        let mut total = T::zero();
        let mut grad = Vec::with_capacity(logits.len());
        for (row, &label) in logits.chunks_exact(k).zip(labels) {
            if label >= k {
                return Err(NeuralError::IndexOutOfRange { index: label, len: k });
            }
            let (loss, g) = cross_entropy_row(row, label);
            total = total + loss;
            grad.extend(g.into_iter().map(|v| v * scale));
        }
        let mean = total * scale;
        if !mean.is_finite() {
            return Err(NeuralError::NonFinite { op: "cross_entropy" });
        }
        Ok((mean, grad))
    }

    pub(crate) fn activation_len(&self, layer: usize) -> usize {
        self.shapes[layer].iter().product()
    }
}
