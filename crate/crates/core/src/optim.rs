//! SGD with momentum and L2 decay, and the cosine learning-rate schedule.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

/// One in-place step:
/// `v <- momentum * v + (grad + lambda * param)`, `param <- param - lr * v`.
pub fn sgd_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    velocity: &mut Tensor<T>,
    lr: T,
    lambda: T,
    momentum: T,
) -> Result<(), TensorError> {
    for (op, other) in [("sgd grad", grad.shape()), ("sgd velocity", velocity.shape())] {
        if param.shape() != other {
            return Err(TensorError::ShapeMismatch { op, left: param.shape().to_vec(), right: other.to_vec() });
        }
    }
    for ((p, &g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
        *v = momentum * *v + (g + lambda * *p);
        *p -= lr * *v;
    }
    Ok(())
}

/// Linear warm-up to `base_lr` over `warmup_steps`, then half-cosine decay to
/// zero at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, warmup_steps: usize, base_lr: f64) -> Result<f64> {
    if step >= total_steps {
        return Err(Error::Config(format!("step {step} outside schedule of {total_steps} steps")));
    }
    if warmup_steps >= total_steps {
        return Err(Error::Config(format!("warm-up of {warmup_steps} steps leaves no room in {total_steps}")));
    }
    if step < warmup_steps {
        return Ok(base_lr * step as f64 / warmup_steps as f64);
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    Ok(0.5 * base_lr * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Velocity buffers for a fixed list of parameters.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub momentum: T,
    velocities: Vec<Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>, momentum: T) -> Self {
        Self { momentum, velocities: params.into_iter().map(|p| Tensor::zeros(p.shape())).collect() }
    }

    /// Updates every parameter whose `lambdas` entry is `Some`; `None` leaves
    /// the parameter and its velocity untouched.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>], lr: T, lambdas: &[Option<T>]) -> Result<()> {
        if params.len() != self.velocities.len() || grads.len() != params.len() || lambdas.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, got {} params, {} grads, {} decays",
                self.velocities.len(),
                params.len(),
                grads.len(),
                lambdas.len()
            )));
        }
        for (((p, g), v), lambda) in params.into_iter().zip(grads).zip(&mut self.velocities).zip(lambdas) {
            if let Some(lambda) = *lambda {
                sgd_step(p, g, v, lr, lambda, self.momentum)?;
            }
        }
        Ok(())
    }
}
