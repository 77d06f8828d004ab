//! Stochastic gradient descent with classic momentum and weight decay.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum must be in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("weight decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-parameter velocity buffers, zero-initialized on first use.
#[derive(Clone, Debug, Default)]
pub struct SgdState<T: Scalar> {
    velocities: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new() -> Self {
        SgdState { velocities: Vec::new() }
    }

    pub fn velocity(&self, index: usize) -> Option<&Tensor<T>> {
        self.velocities.get(index).and_then(|v| v.as_ref())
    }
}

///// One update per parameter: g' = g + wd * theta; v <- m * v + g';
/// theta <- theta - lr * v.
///
/// `params` pairs a name (used in error reports) with the tensor to update,
/// positionally aligned with `grads` and the state's velocity buffers.
pub fn sgd_step<T: Scalar>(
    params: &mut [(&str, &mut Tensor<T>)],
    grads: &[Tensor<T>],
    state: &mut SgdState<T>,
    config: &SgdConfig,
) -> Result<()> {
    config.validate()?;
    if params.len() != grads.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if state.velocities.len() < params.len() {
        state.velocities.resize(params.len(), None);
    }
    let lr = T::from_f64(config.lr);
    let momentum = T::from_f64(config.momentum);
    let wd = T::from_f64(config.weight_decay);
    for (i, ((name, theta), grad)) in params.iter_mut().zip(grads).enumerate() {
        if theta.shape() != grad.shape() {
            return Err(Error::ShapeMismatch {
                context: format!("sgd gradient for '{name}'"),
                expected: theta.shape(),
                actual: grad.shape(),
            });
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite((*name).to_string()));
        }
        let velocity = state.velocities[i]
            .get_or_insert_with(|| Tensor::zeros(theta.shape()));
        if velocity.shape() != theta.shape() {
            return Err(Error::ShapeMismatch {
                context: format!("sgd velocity for '{name}'"),
                expected: theta.shape(),
                actual: velocity.shape(),
            });
        }
        for ((t, v), &g) in theta
            .data_mut()
            .iter_mut()
            .zip(velocity.data_mut())
            .zip(grad.data())
        {
            let g = g + wd * *t;
            *v = momentum * *v + g;
            *t = *t - lr * *v;
        }
    }
    Ok(())
}
