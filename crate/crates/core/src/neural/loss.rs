use super::{NeuralError, Real, Tensor};

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of the softmax of `logits` against `true_class`, with the
/// gradient `softmax − one_hot` with respect to the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, true_class: usize) -> Result<(T, Tensor<T>), NeuralError> {
    if true_class >= logits.len() {
        return Err(NeuralError::IndexOutOfRange { index: true_class, len: logits.len() });
    }
    if logits.data().iter().any(|v| !v.is_finite()) {
        return Err(NeuralError::NonFinite { op: "softmax_cross_entropy" });
    }
    let (loss, grad) = cross_entropy_row(logits.data(), true_class);
    Ok((loss, Tensor::from_parts(logits.shape().to_vec(), grad)))
}

pub(crate) fn cross_entropy_row<T: Real>(logits: &[T], true_class: usize) -> (T, Vec<T>) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let log_total = logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
    let loss = log_total - (logits[true_class] - max);
    let mut grad = softmax(logits);
    grad[true_class] = grad[true_class] - T::one();
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = Tensor::<f64>::zeros(&[2]);
        let (loss, grad) = softmax_cross_entropy(&logits, 0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(grad.data(), &[-0.5, 0.5]);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let logits = Tensor::<f32>::new(vec![2], vec![1000.0, 0.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, 0).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-6);
        assert!(grad.data().iter().all(|v| v.is_finite()));
        let (loss, _) = softmax_cross_entropy(&logits, 1).unwrap();
        assert!((loss - 1000.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_non_finite() {
        let logits = Tensor::<f64>::from_parts(vec![2], vec![f64::NAN, 0.0]);
        assert!(matches!(softmax_cross_entropy(&logits, 0), Err(NeuralError::NonFinite { .. })));
    }
}
