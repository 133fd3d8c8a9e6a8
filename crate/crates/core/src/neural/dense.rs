use super::real::{axpy, dot};
use super::{NeuralError, Real, Tensor};

fn check_dense<T: Real>(
    op: &'static str,
    input_width: usize,
    weights: &Tensor<T>,
) -> Result<(usize, usize), NeuralError> {
    let [m, n] = weights.shape()[..] else {
        return Err(NeuralError::shape(op, format!("weights must be rank 2, got {:?}", weights.shape())));
    };
    if n != input_width {
        return Err(NeuralError::shape(op, format!("input width {input_width} != weight columns {n}")));
    }
    Ok((m, n))
}

/// `out = weights · input + bias` for a single vector.
pub fn dense_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, NeuralError> {
    let (m, n) = check_dense("dense_forward", input.len(), weights)?;
    if bias.len() != m {
        return Err(NeuralError::shape("dense_forward", format!("bias has {} values, expected {m}", bias.len())));
    }
    let w = weights.data();
    let out = (0..m)
        .map(|i| dot(&w[i * n..(i + 1) * n], input.data()) + bias.data()[i])
        .collect();
    Tensor::from_parts(vec![m], out).ensure_finite("dense_forward")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<T = f32> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<DenseGrads<T>, NeuralError> {
    let (m, n) = check_dense("dense_backward", input.len(), weights)?;
    if upstream.len() != m {
        return Err(NeuralError::shape(
            "dense_backward",
            format!("upstream has {} values, expected {m}", upstream.len()),
        ));
    }
    let w = weights.data();
    let mut gin = vec![T::zero(); n];
    let mut gw = vec![T::zero(); m * n];
    for (i, &g) in upstream.data().iter().enumerate() {
        axpy(g, input.data(), &mut gw[i * n..(i + 1) * n]);
        axpy(g, &w[i * n..(i + 1) * n], &mut gin);
    }
    Ok(DenseGrads {
        input: Tensor::from_parts(input.shape().to_vec(), gin).ensure_finite("dense_backward")?,
        weights: Tensor::from_parts(vec![m, n], gw).ensure_finite("dense_backward")?,
        bias: upstream.clone(),
    })
}

/// Batched forward: `input` is `[batch, n]`, returns `[batch, m]`.
pub(crate) fn forward_batch<T: Real>(batch: usize, n: usize, input: &[T], weights: &[T], bias: &[T]) -> Vec<T> {
    let m = bias.len();
    let mut out = Vec::with_capacity(batch * m);
    for _ in 0..batch {
        out.extend_from_slice(bias);
    }
    // out[b, i] += Σ_j input[b, j] · weights[i, j]
    T::gemm(batch, n, m, input, (n as isize, 1), weights, (1, n as isize), T::one(), &mut out, m as isize);
    out
}

/// Batched backward. Accumulates into `grad_weights` / `grad_bias`; returns the
/// input gradient (`[batch, n]`) when requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_batch<T: Real>(
    batch: usize,
    n: usize,
    input: &[T],
    weights: &[T],
    upstream: &[T],
    grad_weights: &mut [T],
    grad_bias: &mut [T],
    want_input: bool,
) -> Option<Vec<T>> {
    let m = grad_bias.len();
    for row in upstream.chunks_exact(m) {
        for (gb, &g) in grad_bias.iter_mut().zip(row) {
            *gb = *gb + g;
        }
    }
    // grad_weights[i, j] += Σ_b upstream[b, i] · input[b, j]
    T::gemm(m, batch, n, upstream, (1, m as isize), input, (n as isize, 1), T::one(), grad_weights, n as isize);
    want_input.then(|| {
        let mut gin = vec![T::zero(); batch * n];
        T::gemm(batch, m, n, upstream, (m as isize, 1), weights, (n as isize, 1), T::zero(), &mut gin, n as isize);
        gin
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_bias_only() {
        let x = Tensor::<f64>::new(vec![3], vec![1.5, -2.0, 0.25]).unwrap();
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let zero_bias = Tensor::zeros(&[3]);
        assert_eq!(dense_forward(&x, &eye, &zero_bias).unwrap(), x);

        let zero_w = Tensor::zeros(&[2, 3]);
        let b = Tensor::new(vec![2], vec![0.5, -4.0]).unwrap();
        assert_eq!(dense_forward(&x, &zero_w, &b).unwrap(), b);
    }

    #[test]
    fn batched_matches_single() {
        let (batch, n, m) = (5, 11, 7);
        let input: Vec<f64> = (0..batch * n).map(|i| ((i * 37 % 17) as f64 - 8.0) / 5.0).collect();
        let w = Tensor::from_fn(&[m, n], |i| ((i * 13 % 23) as f64 - 11.0) / 9.0);
        let b = Tensor::from_fn(&[m], |i| i as f64 * 0.1);
        let up: Vec<f64> = (0..batch * m).map(|i| ((i * 7 % 5) as f64 - 2.0) / 3.0).collect();

        let out = forward_batch(batch, n, &input, w.data(), b.data());
        let mut gw = vec![0.0; m * n];
        let mut gb = vec![0.0; m];
        let gin = backward_batch(batch, n, &input, w.data(), &up, &mut gw, &mut gb, true).unwrap();

        let mut gw_ref = vec![0.0; m * n];
        let mut gb_ref = vec![0.0; m];
        for s in 0..batch {
            let x = Tensor::new(vec![n], input[s * n..(s + 1) * n].to_vec()).unwrap();
            let y = dense_forward(&x, &w, &b).unwrap();
            for (a, e) in out[s * m..(s + 1) * m].iter().zip(y.data()) {
                assert!((a - e).abs() < 1e-12);
            }
            let g = Tensor::new(vec![m], up[s * m..(s + 1) * m].to_vec()).unwrap();
            let grads = dense_backward(&x, &w, &g).unwrap();
            for (a, e) in gin[s * n..(s + 1) * n].iter().zip(grads.input.data()) {
                assert!((a - e).abs() < 1e-12);
            }
            gw_ref.iter_mut().zip(grads.weights.data()).for_each(|(a, e)| *a += e);
            gb_ref.iter_mut().zip(grads.bias.data()).for_each(|(a, e)| *a += e);
        }
        for (a, e) in gw.iter().zip(&gw_ref).chain(gb.iter().zip(&gb_ref)) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch() {
        let x = Tensor::<f32>::zeros(&[4]);
        let w = Tensor::zeros(&[3, 5]);
        let b = Tensor::zeros(&[3]);
        assert!(matches!(dense_forward(&x, &w, &b), Err(NeuralError::ShapeMismatch { .. })));
    }
}
