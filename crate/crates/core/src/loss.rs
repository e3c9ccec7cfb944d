//! Losses returning the value and the gradient w.r.t. the prediction.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct LossOutput<T> {
    pub loss: T,
    pub grad: Tensor<T>,
    pub correct: usize,
}

/// Mean softmax cross-entropy over a `[N, C]` batch of logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<LossOutput<T>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::Shape(format!("logits {shape:?} do not match {} labels", labels.len())));
    }
    let (n, c) = (shape[0], shape[1]);
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut grad = vec![T::zero(); n * c];
    let mut loss = T::zero();
    let mut correct = 0;
    for (i, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::Shape(format!("label {label} out of range for {c} classes")));
        }
        let row = &logits.data()[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let denom: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_denom = denom.ln();
        loss += log_denom - (row[label] - max);
        let argmax = row.iter().enumerate().fold(0, |best, (j, &v)| if v > row[best] { j } else { best });
        if argmax == label {
            correct += 1;
        }
        for j in 0..c {
            let p = (row[j] - max - log_denom).exp();
            let target = if j == label { T::one() } else { T::zero() };
            grad[i * c + j] = (p - target) * inv_n;
        }
    }
    Ok(LossOutput { loss: loss * inv_n, grad: Tensor::new(shape.to_vec(), grad)?, correct })
}

/// `1/(2N) * sum (pred - target)^2` over a `[N, 1]` or `[N]` prediction.
pub fn half_mse<T: Scalar>(pred: &Tensor<T>, targets: &[T]) -> Result<LossOutput<T>> {
    if pred.len() != targets.len() {
        return Err(Error::Shape(format!("prediction of {} values for {} targets", pred.len(), targets.len())));
    }
    let inv_n = T::one() / T::from_usize(targets.len()).unwrap();
    let mut loss = T::zero();
    let grad = pred
        .data()
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            let r = p - y;
            loss += r * r;
            r * inv_n
        })
        .collect();
    Ok(LossOutput { loss: loss * inv_n * T::lit(0.5), grad: Tensor::new(pred.shape().to_vec(), grad)?, correct: 0 })
}
