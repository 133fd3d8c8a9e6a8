use super::{NeuralError, Real, Tensor};

/// Flat input index of the maximum for every pooled output cell, recorded by
/// [`maxpool_forward`] and consumed by [`maxpool_backward`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

pub(crate) fn forward_into<T: Real>(
    (channels, height, width): (usize, usize, usize),
    factor: usize,
    input: &[T],
    out: &mut [T],
    argmax: &mut [usize],
) {
    let (oh, ow) = (height / factor, width / factor);
    let mut o = 0;
    for c in 0..channels {
        let base = c * height * width;
        for i in 0..oh {
            for j in 0..ow {
                // Row-major scan with strict `>`: the first maximum wins ties.
                let mut best_idx = base + (i * factor) * width + j * factor;
                let mut best = input[best_idx];
                for a in 0..factor {
                    let row = base + (i * factor + a) * width + j * factor;
                    for (b, &v) in input[row..row + factor].iter().enumerate() {
                        if v > best {
                            best = v;
                            best_idx = row + b;
                        }
                    }
                }
                out[o] = best;
                argmax[o] = best_idx;
                o += 1;
            }
        }
    }
}

/// Max pooling over disjoint `factor × factor` blocks; a trailing partial row or
/// column is dropped.
pub fn maxpool_forward<T: Real>(
    input: &Tensor<T>,
    factor: usize,
) -> Result<(Tensor<T>, PoolIndices), NeuralError> {
    let (c, h, w) = input.dims3("maxpool_forward")?;
    if factor < 2 {
        return Err(NeuralError::InvalidLayer(format!("pool factor {factor} < 2")));
    }
    if h < factor || w < factor {
        return Err(NeuralError::shape("maxpool_forward", format!("input {h}x{w} smaller than pool {factor}")));
    }
    let len = c * (h / factor) * (w / factor);
    let mut out = vec![T::zero(); len];
    let mut argmax = vec![0; len];
    forward_into((c, h, w), factor, input.data(), &mut out, &mut argmax);
    Ok((
        Tensor::from_parts(vec![c, h / factor, w / factor], out),
        PoolIndices { input_shape: input.shape().to_vec(), argmax },
    ))
}

pub(crate) fn backward_into<T: Real>(argmax: &[usize], upstream: &[T], grad_input: &mut [T]) {
    grad_input.fill(T::zero());
    for (&idx, &g) in argmax.iter().zip(upstream) {
        grad_input[idx] = grad_input[idx] + g;
    }
}

/// Routes each upstream gradient to the input position that won the max.
pub fn maxpool_backward<T: Real>(indices: &PoolIndices, upstream: &Tensor<T>) -> Result<Tensor<T>, NeuralError> {
    if upstream.len() != indices.argmax.len() {
        return Err(NeuralError::shape(
            "maxpool_backward",
            format!("upstream has {} values, forward recorded {}", upstream.len(), indices.argmax.len()),
        ));
    }
    let len: usize = indices.input_shape.iter().product();
    if let Some(&bad) = indices.argmax.iter().find(|&&i| i >= len) {
        return Err(NeuralError::IndexOutOfRange { index: bad, len });
    }
    let mut grad = vec![T::zero(); len];
    backward_into(&indices.argmax, upstream.data(), &mut grad);
    Ok(Tensor::from_parts(indices.input_shape.clone(), grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_block() {
        let input = Tensor::<f32>::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, idx) = maxpool_forward(&input, 2).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(idx.argmax, vec![3]);
        let grad = maxpool_backward(&idx, &Tensor::filled(&[1, 1, 1], 1.0)).unwrap();
        assert_eq!(grad.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn ties_pick_first_in_block() {
        let input = Tensor::<f64>::filled(&[2, 4, 4], 0.5);
        let (out, idx) = maxpool_forward(&input, 2).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
        // top-left corner of each 2x2 block
        assert_eq!(idx.argmax, vec![0, 2, 8, 10, 16, 18, 24, 26]);
    }

    #[test]
    fn odd_trailing_row_and_column_dropped() {
        let input = Tensor::<f32>::from_fn(&[1, 5, 5], |i| i as f32);
        let (out, _) = maxpool_forward(&input, 2).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data(), &[6.0, 8.0, 16.0, 18.0]);
    }

    #[test]
    fn errors() {
        let small = Tensor::<f32>::zeros(&[1, 1, 4]);
        assert!(matches!(maxpool_forward(&small, 2), Err(NeuralError::ShapeMismatch { .. })));
        let idx = PoolIndices { input_shape: vec![1, 2, 2], argmax: vec![7] };
        let up = Tensor::<f32>::filled(&[1, 1, 1], 1.0);
        assert!(matches!(maxpool_backward(&idx, &up), Err(NeuralError::IndexOutOfRange { index: 7, len: 4 })));
    }
}
