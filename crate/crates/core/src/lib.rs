//! Learnable sparsity through soft-threshold reparameterization.
//!
//! Every thresholded weight tensor `W` is used as
//! `sign(W) * max(|W| - g(s), 0)` with a trainable `s`, so gradient descent
//! with weight decay learns both the weights and a per-layer (or global,
//! per-channel, per-weight) pruning threshold.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the element type.

pub mod budget;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiments;
pub mod fastgrnn;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod threshold;
pub mod train;

pub use error::{Error, Result};
pub use network::{Network, Sequential, StrSetup};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use threshold::{Granularity, StrParam, ThresholdFn, ThresholdKind};
pub use train::{TrainConfig, TrainReport};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type StrParam64 = StrParam<f64>;
pub type StrParam32 = StrParam<f32>;
pub type ThresholdFn64 = ThresholdFn<f64>;
pub type ThresholdFn32 = ThresholdFn<f32>;
pub type Sequential64 = Sequential<f64>;
pub type Sequential32 = Sequential<f32>;
pub type FastGrnn64 = fastgrnn::LowRankFastGrnn<f64>;
pub type FastGrnn32 = fastgrnn::LowRankFastGrnn<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
