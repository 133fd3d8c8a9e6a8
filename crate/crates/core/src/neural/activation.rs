use super::{NeuralError, Real, Tensor};

pub fn relu_forward<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
    Tensor::from_parts(input.shape().to_vec(), data)
}

/// Gradient of ReLU; the subgradient at exactly zero is taken as zero.
pub fn relu_backward<T: Real>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>, NeuralError> {
    if input.shape() != upstream.shape() {
        return Err(NeuralError::shape(
            "relu_backward",
            format!("input {:?} vs upstream {:?}", input.shape(), upstream.shape()),
        ));
    }
    let mut grad = upstream.clone();
    relu_backward_in_place(input.data(), grad.data_mut());
    Ok(grad)
}

pub(crate) fn relu_in_place<T: Real>(values: &mut [T]) {
    for v in values {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

pub(crate) fn relu_backward_in_place<T: Real>(input: &[T], grad: &mut [T]) {
    for (g, &x) in grad.iter_mut().zip(input) {
        if !(x > T::zero()) {
            *g = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_to_zero_and_nonnegative_identity() {
        let neg = Tensor::<f32>::from_fn(&[2, 3], |i| -(i as f32) - 0.5);
        assert!(relu_forward(&neg).data().iter().all(|&v| v == 0.0));
        let pos = Tensor::<f32>::from_fn(&[2, 3], |i| i as f32);
        assert_eq!(relu_forward(&pos), pos);
    }

    #[test]
    fn zero_subgradient() {
        let x = Tensor::<f64>::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        let up = Tensor::filled(&[3], 1.0);
        assert_eq!(relu_backward(&x, &up).unwrap().data(), &[0.0, 0.0, 1.0]);
    }
}
