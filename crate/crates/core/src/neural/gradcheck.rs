//! Central finite-difference verification of the analytic backward pass.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{ForwardPass, Gradients, LayerSpec, Network};
use super::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Relative error a comparison must reach before it is accepted.
    pub tolerance: f64,
    /// When both derivatives are below [`ROUNDOFF_REGIME`] and the error is
    /// above `tolerance`, the step grows tenfold up to this size. Tiny
    /// derivatives otherwise drown in loss roundoff divided by `2ε`.
    pub max_epsilon: f64,
    /// Check at most this many randomly chosen entries of each weight or bias
    /// tensor; `None` checks every parameter.
    pub max_params_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { epsilon: 1e-5, tolerance: 1e-4, max_epsilon: 1e-2, max_params_per_tensor: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Index into the flattened parameter vector (layer order, weights before bias).
    pub worst_parameter_index: usize,
    /// Analytic and numeric derivative at the worst parameter.
    pub worst_pair: (f64, f64),
    /// Largest relative error per parametric layer, in layer order.
    pub per_layer_errors: Vec<f64>,
    pub checked: usize,
    /// Parameters whose ±ε probes flipped a ReLU or changed a pooling argmax;
    /// the loss is not differentiable across those, so they are not compared.
    pub skipped_kinks: usize,
    /// Comparisons settled with a step larger than `epsilon`.
    pub refined: usize,
}

/// Derivative magnitude below which f64 loss roundoff can dominate a
/// central difference at the default step.
pub const ROUNDOFF_REGIME: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn gradient_check(
    net: &Network<f64>,
    inputs: &[f64],
    labels: &[usize],
    options: GradCheckOptions,
) -> Result<GradCheckReport, NeuralError> {
    gradient_check_with(net, inputs, labels, options, |n, x, y| n.loss_and_gradients(x, y).map(|(_, g)| g))
}

/// Like [`gradient_check`], but compares against gradients produced by `analytic`.
pub fn gradient_check_with<F>(
    net: &Network<f64>,
    inputs: &[f64],
    labels: &[usize],
    options: GradCheckOptions,
    analytic: F,
) -> Result<GradCheckReport, NeuralError>
where
    F: Fn(&Network<f64>, &[f64], &[usize]) -> Result<Gradients<f64>, NeuralError>,
{
    if labels.is_empty() {
        return Err(NeuralError::shape("gradient_check", "empty batch".into()));
    }
    let batch = labels.len();
    let grads = analytic(net, inputs, labels)?;
    let base = net.forward(inputs, batch)?;
    let mut work = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let eps = options.epsilon;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter_index: 0,
        worst_pair: (0.0, 0.0),
        per_layer_errors: Vec::new(),
        checked: 0,
        skipped_kinks: 0,
        refined: 0,
    };
    let mut offset = 0;
    for layer in 0..net.layers().len() {
        let Some(pair) = &net.layers()[layer] else { continue };
        let Some(grad_pair) = grads.layers.get(layer).and_then(Option::as_ref) else {
            return Err(NeuralError::shape("gradient_check", format!("no gradient for layer {layer}")));
        };
        let mut layer_max: f64 = 0.0;
        for (tensor_idx, len) in [pair.weights.len(), pair.bias.len()].into_iter().enumerate() {
            let chosen: Vec<usize> = match options.max_params_per_tensor {
                Some(max) if max < len => {
                    let mut v = index::sample(&mut rng, len, max).into_vec();
                    v.sort_unstable();
                    v
                }
                _ => (0..len).collect(),
            };
            for chunk in chosen.chunks(PROBE_CHUNK) {
                let probes: Vec<Probe> = chunk
                    .iter()
                    .flat_map(|&i| {
                        let v = get_param(net, layer, tensor_idx, i);
                        [Probe { tensor: tensor_idx, index: i, value: v + eps }, Probe { tensor: tensor_idx, index: i, value: v - eps }]
                    })
                    .collect();
                let losses = probe_losses(net, &mut work, &base, labels, layer, &probes)?;
                for (k, &i) in chunk.iter().enumerate() {
                    let a = if tensor_idx == 0 { grad_pair.weights.data()[i] } else { grad_pair.bias.data()[i] };
                    let (plus, minus) = (losses[2 * k], losses[2 * k + 1]);
                    let mut step = eps;
                    let mut settled = (!(plus.kink || minus.kink)).then(|| {
                        let numeric = (plus.loss - minus.loss) / (2.0 * step);
                        (numeric, relative_error(a, numeric))
                    });
                    // Escalate the step while the comparison is lost in roundoff.
                    while let Some((numeric, err)) = settled {
                        let roundoff_bound = a.abs().max(numeric.abs()) < ROUNDOFF_REGIME;
                        if err <= options.tolerance || !roundoff_bound || step * 10.0 > options.max_epsilon {
                            break;
                        }
                        let wider = step * 10.0;
                        let v = get_param(net, layer, tensor_idx, i);
                        let pair = [
                            Probe { tensor: tensor_idx, index: i, value: v + wider },
                            Probe { tensor: tensor_idx, index: i, value: v - wider },
                        ];
                        let l = probe_losses(net, &mut work, &base, labels, layer, &pair)?;
                        if l[0].kink || l[1].kink {
                            break;
                        }
                        step = wider;
                        let numeric = (l[0].loss - l[1].loss) / (2.0 * step);
                        settled = Some((numeric, relative_error(a, numeric)));
                    }
                    let Some((numeric, err)) = settled else {
                        report.skipped_kinks += 1;
                        continue;
                    };
                    if step > eps {
                        report.refined += 1;
                    }
                    report.checked += 1;
                    layer_max = layer_max.max(err);
                    if err > report.max_relative_error {
                        report.max_relative_error = err;
                        report.worst_pair = (a, numeric);
                        report.worst_parameter_index = offset + if tensor_idx == 0 { i } else { pair.weights.len() + i };
                    }
                }
            }
        }
        report.per_layer_errors.push(layer_max);
        offset += pair.len();
    }
    Ok(report)
}

/// Parameters perturbed together in one batched evaluation.
const PROBE_CHUNK: usize = 48;

/// One parameter of the probed layer set to `value`, all others unchanged.
#[derive(Debug, Clone, Copy)]
struct Probe {
    tensor: usize,
    index: usize,
    value: f64,
}

#[derive(Debug, Clone, Copy)]
struct ProbeLoss {
    /// Loss minus the unperturbed loss.
    loss: f64,
    /// A ReLU sign or pooling argmax downstream of the layer differs from the base pass.
    kink: bool,
}

/// Change of the mean loss with each probe applied in turn to `layer`.
fn probe_losses(
    net: &Network<f64>,
    work: &mut Network<f64>,
    base: &ForwardPass<f64>,
    labels: &[usize],
    layer: usize,
    probes: &[Probe],
) -> Result<Vec<ProbeLoss>, NeuralError> {
    let layers = &net.config().layers;
    let dense = |l: &LayerSpec| matches!(l, LayerSpec::Dense { .. } | LayerSpec::SoftmaxOutput { .. });
    if dense(&layers[layer]) && layers[layer + 1..].iter().all(|l| dense(l) || *l == LayerSpec::Relu) {
        probes.iter().map(|p| sparse_probe(net, base, labels, layer, *p)).collect()
    } else {
        batched_probes(net, work, base, labels, layer, probes)
    }
}

/// Exact loss for a perturbation of a dense layer followed only by ReLU and
/// dense layers. Dense outputs are affine in each parameter, so the change
/// propagates from the one affected unit without recomputing the rest.
fn sparse_probe(
    net: &Network<f64>,
    base: &ForwardPass<f64>,
    labels: &[usize],
    layer: usize,
    probe: Probe,
) -> Result<ProbeLoss, NeuralError> {
    let batch = labels.len();
    let in_len = net.activation_len(layer);
    let delta = probe.value - get_param(net, layer, probe.tensor, probe.index);
    let (unit, column) = if probe.tensor == 0 { (probe.index / in_len, Some(probe.index % in_len)) } else { (probe.index, None) };
    let n_layers = net.config().layers.len();
    let classes = net.config().classes();
    let mut logit_deltas = Vec::with_capacity(base.logits().len());
    let mut kink = false;
    for b in 0..batch {
        let input = &base.activation(layer)[b * in_len..(b + 1) * in_len];
        // Nonzero changes of the activation entering layer `l`, as (index, delta).
        let mut changed = vec![(unit, column.map_or(delta, |c| delta * input[c]))];
        for l in layer + 1..n_layers {
            let len = net.activation_len(l);
            let old = &base.activation(l)[b * len..(b + 1) * len];
            changed = match net.config().layers[l] {
                LayerSpec::Relu => changed
                    .into_iter()
                    .map(|(i, d)| {
                        kink |= (old[i] + d > 0.0) != (old[i] > 0.0);
                        (i, if old[i] > 0.0 { d } else { 0.0 })
                    })
                    .collect(),
                _ => {
                    let w = net.layers()[l].as_ref().expect("dense layer has parameters").weights.data();
                    (0..net.activation_len(l + 1))
                        .map(|u| (u, changed.iter().map(|&(i, d)| w[u * len + i] * d).sum::<f64>()))
                        .collect()
                }
            };
        }
        let mut row = vec![0.0; classes];
        for (i, d) in changed {
            row[i] = d;
        }
        logit_deltas.extend(row);
    }
    Ok(ProbeLoss { loss: loss_change(base.logits(), &logit_deltas, labels, classes), kink })
}

/// `mean CE(z + Δ) − mean CE(z)`, evaluated as `log1p(Σ p_k·expm1(Δ_k)) − Δ_y`
/// per row so small changes are not lost to cancellation.
fn loss_change(logits: &[f64], deltas: &[f64], labels: &[usize], classes: usize) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(b, &y)| {
            let z = &logits[b * classes..(b + 1) * classes];
            let d = &deltas[b * classes..(b + 1) * classes];
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let norm: f64 = z.iter().map(|v| (v - m).exp()).sum();
            let s: f64 = z.iter().zip(d).map(|(v, dv)| (v - m).exp() / norm * dv.exp_m1()).sum();
            s.ln_1p() - d[y]
        })
        .sum();
    total / labels.len() as f64
}

/// Recomputes the probed layer for each probe, then runs every probe's
/// output through the rest of the network as one stacked batch.
fn batched_probes(
    net: &Network<f64>,
    work: &mut Network<f64>,
    base: &ForwardPass<f64>,
    labels: &[usize],
    layer: usize,
    probes: &[Probe],
) -> Result<Vec<ProbeLoss>, NeuralError> {
    let batch = labels.len();
    let input = base.activation(layer);
    let mut stacked = Vec::with_capacity(probes.len() * base.activation(layer + 1).len());
    for p in probes {
        let original = get_param(work, layer, p.tensor, p.index);
        set_param(work, layer, p.tensor, p.index, p.value);
        let out = work.apply_layer(layer, input, batch, None);
        set_param(work, layer, p.tensor, p.index, original);
        stacked.extend(out?);
    }
    let pass = work.forward_from(layer + 1, stacked, probes.len() * batch)?;
    let classes = net.config().classes();
    (0..probes.len())
        .map(|k| {
            let logits = &pass.logits()[k * batch * classes..(k + 1) * batch * classes];
            let deltas: Vec<f64> = logits.iter().zip(base.logits()).map(|(a, b)| a - b).collect();
            let loss = loss_change(base.logits(), &deltas, labels, classes);
            Ok(ProbeLoss { loss, kink: !same_pattern(net, base, &pass, layer, k) })
        })
        .collect()
}

fn get_param(net: &Network<f64>, layer: usize, tensor: usize, i: usize) -> f64 {
    let p = net.layers()[layer].as_ref().unwrap();
    if tensor == 0 { p.weights.data()[i] } else { p.bias.data()[i] }
}

fn set_param(net: &mut Network<f64>, layer: usize, tensor: usize, i: usize, value: f64) {
    let p = net.layers_mut()[layer].as_mut().unwrap();
    if tensor == 0 {
        p.weights.data_mut()[i] = value;
    } else {
        p.bias.data_mut()[i] = value;
    }
}

/// True when every ReLU sign and pooling argmax downstream of `from` in probe
/// slot `k` of the stacked `probe` pass matches the base pass.
fn same_pattern(net: &Network<f64>, base: &ForwardPass<f64>, probe: &ForwardPass<f64>, from: usize, k: usize) -> bool {
    let batch = base.batch();
    net.config().layers.iter().enumerate().skip(from + 1).all(|(l, spec)| match spec {
        LayerSpec::Relu => {
            let n = batch * net.activation_len(l);
            let a = base.activation(l);
            let b = &probe.activation(l)[k * n..(k + 1) * n];
            a.iter().zip(b).all(|(x, y)| (*x > 0.0) == (*y > 0.0))
        }
        LayerSpec::Maxpool { .. } => {
            let n = batch * net.activation_len(l + 1);
            match (base.pool_argmax(l), probe.pool_argmax(l)) {
                (Some(a), Some(b)) => a == &b[k * n..(k + 1) * n],
                _ => false,
            }
        }
        _ => true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::standard_config;
    use rand::Rng;

    /// Both fast probe paths must reproduce the loss change of a plainly perturbed network.
    #[test]
    fn probe_losses_equal_full_forward() {
        let net = Network::<f64>::glorot(standard_config(12), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels = [0usize, 1, 1];
        let inputs: Vec<f64> = (0..labels.len() * net.config().input_len()).map(|_| rng.random()).collect();
        let base = net.forward(&inputs, labels.len()).unwrap();
        let base_loss = net.loss(&inputs, &labels).unwrap();
        let mut work = net.clone();
        for layer in [0usize, 3, 5, 7] {
            let pair = net.layers()[layer].as_ref().unwrap();
            let probes: Vec<Probe> = (0..20)
                .map(|_| {
                    let tensor = rng.random_range(0..2);
                    let len = if tensor == 0 { pair.weights.len() } else { pair.bias.len() };
                    let index = rng.random_range(0..len);
                    let value = get_param(&net, layer, tensor, index) + rng.random_range(-0.05..0.05);
                    Probe { tensor, index, value }
                })
                .collect();
            let fast = probe_losses(&net, &mut work, &base, &labels, layer, &probes).unwrap();
            assert_eq!(work, net);
            for (p, f) in probes.iter().zip(fast) {
                let mut perturbed = net.clone();
                set_param(&mut perturbed, layer, p.tensor, p.index, p.value);
                let full = perturbed.loss(&inputs, &labels).unwrap() - base_loss;
                assert!((full - f.loss).abs() < 1e-12, "layer {layer}: {full} vs {}", f.loss);
            }
        }
    }
}
