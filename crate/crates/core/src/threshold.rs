//! Soft-threshold reparameterization kernel.
//!
//! A dense weight `w` is never used directly. The forward pass consumes
//! `sign(w) * max(|w| - alpha, 0)` where `alpha = g(s)` and `s` is trainable.
//! The sub-gradient w.r.t. `w` is the upstream gradient masked by the support
//! of the thresholded tensor; the gradient w.r.t. `s` is
//! `-g'(s) * <G, sign(W) * 1{|W| > g(s)}>` summed over the scope of `s`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::{sigmoid, sign, Tensor, TensorError};

/// Below this `s` the sigmoid threshold is reported as exactly zero.
pub const SIGMOID_FLUSH_BELOW: f64 = -745.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThresholdError {
    #[error("{granularity:?} threshold expects s of shape {expected:?}, got {actual:?}")]
    Granularity { granularity: Granularity, expected: Vec<usize>, actual: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdKind {
    Sigmoid,
    Exponential,
}

/// The map `g` from a trainable `s` to a pruning threshold `alpha > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct ThresholdFn<T> {
    pub kind: ThresholdKind,
    pub k: T,
}

impl<T: Scalar> ThresholdFn<T> {
    pub fn sigmoid(k: T) -> Self {
        Self { kind: ThresholdKind::Sigmoid, k }
    }

    pub fn exponential(k: T) -> Self {
        Self { kind: ThresholdKind::Exponential, k }
    }

    /// `alpha = g(s)`.
    pub fn eval(&self, s: T) -> T {
        match self.kind {
            ThresholdKind::Sigmoid => {
                if s < T::lit(SIGMOID_FLUSH_BELOW) {
                    T::zero()
                } else {
                    self.k * sigmoid(s)
                }
            }
            ThresholdKind::Exponential => self.k * s.exp(),
        }
    }

    /// Analytic `g'(s)`.
    pub fn derivative(&self, s: T) -> T {
        match self.kind {
            ThresholdKind::Sigmoid => {
                if s < T::lit(SIGMOID_FLUSH_BELOW) {
                    T::zero()
                } else {
                    // k * sigma(s) * (1 - sigma(s)) without cancellation
                    self.k * sigmoid(s) * sigmoid(-s)
                }
            }
            ThresholdKind::Exponential => self.k * s.exp(),
        }
    }

    /// The `s` giving threshold `alpha`, for `0 < alpha` (and `alpha < k` for sigmoid).
    pub fn inverse(&self, alpha: T) -> T {
        match self.kind {
            ThresholdKind::Sigmoid => (alpha / (self.k - alpha)).ln(),
            ThresholdKind::Exponential => (alpha / self.k).ln(),
        }
    }
}

/// Scope shared by one threshold entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    Global,
    PerLayer,
    PerChannel,
    PerWeight,
}

impl std::str::FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "global" => Ok(Self::Global),
            "per-layer" | "layer" => Ok(Self::PerLayer),
            "per-channel" | "channel" => Ok(Self::PerChannel),
            "per-weight" | "weight" => Ok(Self::PerWeight),
            other => Err(format!("unknown granularity `{other}` (expected global, per-layer, per-channel or per-weight)")),
        }
    }
}

/// Trainable threshold parameter(s) for one weight tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct StrParam<T> {
    pub granularity: Granularity,
    pub s: Tensor<T>,
    pub func: ThresholdFn<T>,
}

impl<T: Scalar> StrParam<T> {
    /// A threshold of the given granularity for weights of `weight_shape`,
    /// every entry initialised to `s_init`.
    pub fn new(granularity: Granularity, weight_shape: &[usize], s_init: T, func: ThresholdFn<T>) -> Self {
        let shape = Self::s_shape(granularity, weight_shape);
        Self { granularity, s: Tensor::full(&shape, s_init), func }
    }

    /// Shape of `s` required by `granularity` for weights of `weight_shape`.
    pub fn s_shape(granularity: Granularity, weight_shape: &[usize]) -> Vec<usize> {
        match granularity {
            Granularity::Global | Granularity::PerLayer => vec![1],
            Granularity::PerChannel => vec![weight_shape[0]],
            Granularity::PerWeight => weight_shape.to_vec(),
        }
    }

    pub fn validate(&self, weight_shape: &[usize]) -> Result<(), ThresholdError> {
        let expected = Self::s_shape(self.granularity, weight_shape);
        if self.s.shape() != expected.as_slice() {
            return Err(ThresholdError::Granularity { granularity: self.granularity, expected, actual: self.s.shape().to_vec() });
        }
        Ok(())
    }

    /// Index into `s` governing flat weight index `i`, where each output
    /// channel owns `per_channel` consecutive weights.
    #[inline]
    fn slot(&self, i: usize, per_channel: usize) -> usize {
        match self.granularity {
            Granularity::Global | Granularity::PerLayer => 0,
            Granularity::PerChannel => i / per_channel,
            Granularity::PerWeight => i,
        }
    }

    /// `g(s)` for every entry of `s`.
    pub fn alphas(&self) -> Tensor<T> {
        self.s.map(|s| self.func.eval(s))
    }

    /// Mean threshold, the value logged per layer.
    pub fn mean_alpha(&self) -> T {
        let a = self.alphas();
        a.sum() / T::from_usize(a.len()).unwrap()
    }
}

/// `sign(w) * max(|w| - alpha, 0)`.
#[inline]
pub fn soft_threshold<T: Scalar>(w: T, alpha: T) -> T {
    let m = w.abs() - alpha;
    if m > T::zero() {
        sign(w) * m
    } else {
        T::zero()
    }
}

/// Zeroes `|w| <= alpha` and leaves survivors untouched.
#[inline]
pub fn hard_threshold<T: Scalar>(w: T, alpha: T) -> T {
    if w.abs() > alpha {
        w
    } else {
        T::zero()
    }
}

/// Thresholded weights `W~`, same shape as `weight`.
pub fn str_forward<T: Scalar>(weight: &Tensor<T>, p: &StrParam<T>) -> Result<Tensor<T>, ThresholdError> {
    p.validate(weight.shape())?;
    let alphas = p.alphas();
    let per_channel = weight.len() / weight.shape()[0];
    let data = weight.data().iter().enumerate().map(|(i, &w)| soft_threshold(w, alphas.data()[p.slot(i, per_channel)])).collect();
    Ok(Tensor::new(weight.shape().to_vec(), data)?)
}

/// Sub-gradient w.r.t. the dense weights: `G * 1{W~ != 0}`.
pub fn grad_w<T: Scalar>(grad: &Tensor<T>, thresholded: &Tensor<T>) -> Result<Tensor<T>, ThresholdError> {
    Ok(grad.zip_map(thresholded, "grad_w", |g, wt| if wt != T::zero() { g } else { T::zero() })?)
}

/// Gradient w.r.t. `s`, shaped like `p.s`.
///
/// `grad` is the upstream gradient w.r.t. the thresholded weights.
pub fn grad_s<T: Scalar>(grad: &Tensor<T>, weight: &Tensor<T>, p: &StrParam<T>) -> Result<Tensor<T>, ThresholdError> {
    if grad.shape() != weight.shape() {
        return Err(TensorError::ShapeMismatch { op: "grad_s", left: grad.shape().to_vec(), right: weight.shape().to_vec() }.into());
    }
    p.validate(weight.shape())?;
    let alphas = p.alphas();
    let per_channel = weight.len() / weight.shape()[0];
    let mut acc = vec![T::zero(); p.s.len()];
    for (i, (&g, &w)) in grad.data().iter().zip(weight.data()).enumerate() {
        let slot = p.slot(i, per_channel);
        if w.abs() > alphas.data()[slot] {
            acc[slot] += g * sign(w);
        }
    }
    let data = acc.iter().zip(p.s.data()).map(|(&inner, &s)| -p.func.derivative(s) * inner).collect();
    Ok(Tensor::new(p.s.shape().to_vec(), data)?)
}

/// Number of non-zero entries.
pub fn nnz<T: Scalar>(t: &Tensor<T>) -> usize {
    t.data().iter().filter(|&&v| v != T::zero()).count()
}

/// Fraction of exactly-zero entries.
pub fn sparsity<T: Scalar>(t: &Tensor<T>) -> f64 {
    1.0 - nnz(t) as f64 / t.len() as f64
}
