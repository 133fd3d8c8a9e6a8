use super::{NeuralError, Real, Tensor};

/// One SGD-with-momentum update: `v ← momentum·v − lr·g`, `p ← p + v`.
pub fn sgd_step<T: Real>(
    params: &mut Tensor<T>,
    grads: &Tensor<T>,
    learning_rate: T,
    momentum: T,
    velocity: &mut Tensor<T>,
) -> Result<(), NeuralError> {
    if params.shape() != grads.shape() || params.shape() != velocity.shape() {
        return Err(NeuralError::shape(
            "sgd_step",
            format!(
                "params {:?}, grads {:?}, velocity {:?}",
                params.shape(),
                grads.shape(),
                velocity.shape()
            ),
        ));
    }
    for ((p, &g), v) in params.data_mut().iter_mut().zip(grads.data()).zip(velocity.data_mut()) {
        *v = momentum * *v - learning_rate * g;
        *p = *p + *v;
    }
    Ok(())
}
