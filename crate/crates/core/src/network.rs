//! Trainable networks: the interface used by the training loop and a
//! sequential model built from STR layers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::budget::{Architecture, LayerSpec, PoolAccounting};
use crate::checkpoint::{Checkpoint, LayerEntry};
use crate::data::Targets;
use crate::error::{Error, Result};
use crate::layers::{ChannelPrunedConv, LayerGrads, StrConv, StrLinear};
use crate::loss::{half_mse, softmax_cross_entropy, LossOutput};
use crate::scalar::Scalar;
use crate::tensor::{Conv2dGeometry, Tensor};
use crate::threshold::{nnz, Granularity, StrParam, ThresholdFn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamRole {
    /// Passes through a soft threshold before use.
    Thresholded,
    /// A threshold parameter `s`.
    Threshold,
    /// Used as is.
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub role: ParamRole,
    /// Whether weight decay applies.
    pub decay: bool,
}

impl ParamSlot {
    pub fn new(name: impl Into<String>, role: ParamRole, decay: bool) -> Self {
        Self { name: name.into(), role, decay }
    }
}

/// Loss, correct-prediction count and one gradient per parameter, in the
/// order of [`Network::params`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub loss: T,
    pub correct: usize,
    pub grads: Vec<Tensor<T>>,
}

/// Sparsity snapshot of one thresholded layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerState {
    pub name: String,
    /// Mean `g(s)` over the layer's threshold entries.
    pub alpha: f64,
    pub nonzeros: usize,
    pub total: usize,
}

impl LayerState {
    pub fn sparsity(&self) -> f64 {
        1.0 - self.nonzeros as f64 / self.total as f64
    }
}

/// Fraction of zero weights over all thresholded layers.
pub fn overall_sparsity(states: &[LayerState]) -> f64 {
    let nz: usize = states.iter().map(|s| s.nonzeros).sum();
    let total: usize = states.iter().map(|s| s.total).sum();
    if total == 0 {
        0.0
    } else {
        1.0 - nz as f64 / total as f64
    }
}

pub trait Network<T: Scalar> {
    fn param_slots(&self) -> Vec<ParamSlot>;
    fn params(&self) -> Vec<&Tensor<T>>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;
    fn predict(&self, inputs: &Tensor<T>) -> Result<Tensor<T>>;
    fn gradients(&self, inputs: &Tensor<T>, targets: &Targets<T>) -> Result<Gradients<T>>;
    fn layer_states(&self) -> Result<Vec<LayerState>>;
    /// Static description for FLOP accounting.
    fn architecture(&self) -> Result<Architecture>;
    fn checkpoint(&self) -> Result<Checkpoint<T>>;
    fn restore(&mut self, ckpt: &Checkpoint<T>) -> Result<()>;
}

/// Applies the loss matching `targets` to the network output.
pub fn apply_loss<T: Scalar>(output: &Tensor<T>, targets: &Targets<T>) -> Result<LossOutput<T>> {
    match targets {
        Targets::Classes(c) => softmax_cross_entropy(output, c),
        Targets::Values(v) => half_mse(output, v),
    }
}

/// How the thresholds of a new model are set up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrSetup<T> {
    pub granularity: Granularity,
    pub func: ThresholdFn<T>,
    pub s_init: T,
}

impl<T: Scalar> StrSetup<T> {
    pub fn new(granularity: Granularity, func: ThresholdFn<T>, s_init: T) -> Self {
        Self { granularity, func, s_init }
    }

    /// Sigmoid thresholds flushed to zero: the dense limit.
    pub fn dense() -> Self {
        Self::new(Granularity::PerLayer, ThresholdFn::sigmoid(T::one()), T::lit(-3200.0))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"), tag = "type", rename_all = "kebab-case")]
pub enum Layer<T> {
    Linear(StrLinear<T>),
    Conv(StrConv<T>),
    ChannelConv(ChannelPrunedConv<T>),
    Relu,
    Flatten,
    GlobalAvgPool,
}

enum Cache<T> {
    Str { input: Tensor<T>, thresholded: Tensor<T> },
    Channel { input: Tensor<T> },
    Relu { input: Tensor<T> },
    Reshape { shape: Vec<usize> },
    Pool { shape: Vec<usize> },
}

/// Feed-forward stack of layers sharing a bank of threshold parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
    pub thresholds: Vec<StrParam<T>>,
    /// Shape of one sample.
    pub input_shape: Vec<usize>,
}

fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!("pooling expects [N,C,H,W], got {s:?}")));
    }
    let area = s[2] * s[3];
    let inv = T::one() / T::from_usize(area).unwrap();
    let data = x.data().chunks(area).map(|c| c.iter().copied().sum::<T>() * inv).collect();
    Ok(Tensor::new(vec![s[0], s[1]], data)?)
}

impl<T: Scalar> Sequential<T> {
    pub fn builder(input_shape: &[usize], setup: StrSetup<T>) -> SequentialBuilder<T> {
        SequentialBuilder {
            model: Sequential { layers: Vec::new(), thresholds: Vec::new(), input_shape: input_shape.to_vec() },
            shape: input_shape.to_vec(),
            setup,
        }
    }

    /// Fully connected ReLU network without biases.
    pub fn mlp(input_dim: usize, hidden: &[usize], classes: usize, setup: StrSetup<T>, rng: &mut impl Rng) -> Result<Self> {
        let mut b = Self::builder(&[input_dim], setup);
        for (i, &h) in hidden.iter().enumerate() {
            b = b.linear(&format!("fc{}", i + 1), h, rng)?.relu();
        }
        b.linear(&format!("fc{}", hidden.len() + 1), classes, rng).map(SequentialBuilder::build)
    }

    /// Small convolutional network for `[1, size, size]` images with a
    /// depthwise-separable block. With `channel_prune` the convolutions carry
    /// thresholded filter importances instead of thresholded weights.
    pub fn cnn(size: usize, classes: usize, setup: StrSetup<T>, channel_prune: bool, rng: &mut impl Rng) -> Result<Self> {
        let b = Self::builder(&[1, size, size], setup);
        let convs: [(&str, usize, usize, Conv2dGeometry); 4] = [
            ("conv1", 8, 3, Conv2dGeometry::new(1, 1, 1)),
            ("conv2", 16, 3, Conv2dGeometry::new(2, 1, 1)),
            ("conv3_dw", 16, 3, Conv2dGeometry::new(1, 1, 16)),
            ("conv4", 32, 1, Conv2dGeometry::new(1, 0, 1)),
        ];
        let mut b = b;
        for (name, out, k, geom) in convs {
            b = if channel_prune { b.channel_conv(name, out, k, geom, rng)? } else { b.conv(name, out, k, geom, rng)? }.relu();
        }
        b.global_avg_pool()?.linear("fc", classes, rng).map(SequentialBuilder::build)
    }

    /// Single thresholded linear map `[N, d] -> [N, 1]` for regression.
    pub fn linear_regressor(d: usize, setup: StrSetup<T>, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self::builder(&[d], setup).linear("w", 1, rng)?.build())
    }

    fn str_layer_names(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Linear(x) => Some(x.name.as_str()),
                Layer::Conv(x) => Some(x.name.as_str()),
                Layer::ChannelConv(x) => Some(x.name.as_str()),
                _ => None,
            })
            .collect()
    }

    fn threshold_names(&self) -> Vec<String> {
        if self.thresholds.len() == 1 && self.str_layer_names().len() > 1 && self.is_global() {
            return vec!["global.s".to_string()];
        }
        let mut names = vec![String::new(); self.thresholds.len()];
        for l in &self.layers {
            let (name, slot) = match l {
                Layer::Linear(x) => (&x.name, x.threshold),
                Layer::Conv(x) => (&x.name, x.threshold),
                Layer::ChannelConv(x) => (&x.name, x.threshold),
                _ => continue,
            };
            if names[slot].is_empty() {
                names[slot] = format!("{name}.s");
            }
        }
        names
    }

    fn is_global(&self) -> bool {
        self.thresholds.first().is_some_and(|p| p.granularity == Granularity::Global)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.rank() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::Shape(format!("input {:?} does not match per-sample shape {:?}", x.shape(), self.input_shape)));
        }
        Ok(())
    }

    fn forward(&self, x: &Tensor<T>, mut caches: Option<&mut Vec<Cache<T>>>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            let (out, cache) = match layer {
                Layer::Linear(l) => {
                    let (y, wt) = l.forward(&h, &self.thresholds[l.threshold])?;
                    (y, Cache::Str { input: h, thresholded: wt })
                }
                Layer::Conv(l) => {
                    let (y, wt) = l.forward(&h, &self.thresholds[l.threshold])?;
                    (y, Cache::Str { input: h, thresholded: wt })
                }
                Layer::ChannelConv(l) => {
                    let (y, _) = l.forward(&h, &self.thresholds[l.threshold])?;
                    (y, Cache::Channel { input: h })
                }
                Layer::Relu => (h.relu(), Cache::Relu { input: h }),
                Layer::Flatten => {
                    let n = h.shape()[0];
                    let shape = h.shape().to_vec();
                    let rest = h.len() / n;
                    (h.reshape(&[n, rest])?, Cache::Reshape { shape })
                }
                Layer::GlobalAvgPool => {
                    let y = global_avg_pool(&h)?;
                    (y, Cache::Pool { shape: h.shape().to_vec() })
                }
            };
            if let Some(c) = caches.as_deref_mut() {
                c.push(cache);
            }
            h = out;
        }
        Ok(h)
    }

    fn weight_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Linear(_) | Layer::Conv(_) => 1,
                Layer::ChannelConv(_) => 2,
                _ => 0,
            })
            .sum()
    }
}

impl<T: Scalar> Network<T> for Sequential<T> {
    fn param_slots(&self) -> Vec<ParamSlot> {
        let mut slots = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Linear(x) => slots.push(ParamSlot::new(format!("{}.weight", x.name), ParamRole::Thresholded, true)),
                Layer::Conv(x) => slots.push(ParamSlot::new(format!("{}.weight", x.name), ParamRole::Thresholded, true)),
                Layer::ChannelConv(x) => {
                    slots.push(ParamSlot::new(format!("{}.weight", x.name), ParamRole::Dense, true));
                    slots.push(ParamSlot::new(format!("{}.importance", x.name), ParamRole::Thresholded, true));
                }
                _ => {}
            }
        }
        for name in self.threshold_names() {
            slots.push(ParamSlot::new(name, ParamRole::Threshold, true));
        }
        slots
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Linear(x) => out.push(&x.weight),
                Layer::Conv(x) => out.push(&x.weight),
                Layer::ChannelConv(x) => {
                    out.push(&x.weight);
                    out.push(&x.importance);
                }
                _ => {}
            }
        }
        out.extend(self.thresholds.iter().map(|p| &p.s));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Linear(x) => out.push(&mut x.weight),
                Layer::Conv(x) => out.push(&mut x.weight),
                Layer::ChannelConv(x) => {
                    out.push(&mut x.weight);
                    out.push(&mut x.importance);
                }
                _ => {}
            }
        }
        out.extend(self.thresholds.iter_mut().map(|p| &mut p.s));
        out
    }

    fn predict(&self, inputs: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(inputs, None)
    }

    fn gradients(&self, inputs: &Tensor<T>, targets: &Targets<T>) -> Result<Gradients<T>> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let out = self.forward(inputs, Some(&mut caches))?;
        let loss = apply_loss(&out, targets)?;
        let mut grad = loss.grad;

        let n_weights = self.weight_count();
        let mut weight_grads: Vec<Option<Tensor<T>>> = vec![None; n_weights];
        let mut s_grads: Vec<Tensor<T>> = self.thresholds.iter().map(|p| Tensor::zeros(p.s.shape())).collect();
        let mut widx = n_weights;

        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            let mut take = |g: LayerGrads<T>, slot: usize, s_grads: &mut Vec<Tensor<T>>| -> Result<Tensor<T>> {
                s_grads[slot].add_assign(&g.s)?;
                if let Some(imp) = g.importance {
                    widx -= 2;
                    weight_grads[widx] = Some(g.weight);
                    weight_grads[widx + 1] = Some(imp);
                } else {
                    widx -= 1;
                    weight_grads[widx] = Some(g.weight);
                }
                Ok(g.input)
            };
            grad = match (layer, cache) {
                (Layer::Linear(l), Cache::Str { input, thresholded }) => {
                    let g = l.backward(&input, &thresholded, &grad, &self.thresholds[l.threshold])?;
                    take(g, l.threshold, &mut s_grads)?
                }
                (Layer::Conv(l), Cache::Str { input, thresholded }) => {
                    let g = l.backward(&input, &thresholded, &grad, &self.thresholds[l.threshold])?;
                    take(g, l.threshold, &mut s_grads)?
                }
                (Layer::ChannelConv(l), Cache::Channel { input }) => {
                    let g = l.backward(&input, &grad, &self.thresholds[l.threshold])?;
                    take(g, l.threshold, &mut s_grads)?
                }
                (Layer::Relu, Cache::Relu { input }) => {
                    grad.zip_map(&input, "relu backward", |g, x| if x > T::zero() { g } else { T::zero() })?
                }
                (Layer::Flatten, Cache::Reshape { shape }) => grad.reshape(&shape)?,
                (Layer::GlobalAvgPool, Cache::Pool { shape }) => {
                    let area = shape[2] * shape[3];
                    let inv = T::one() / T::from_usize(area).unwrap();
                    Tensor::from_fn(&shape, |i| grad.data()[i / area] * inv)
                }
                _ => unreachable!("cache variant follows layer variant"),
            };
        }
        let mut grads: Vec<Tensor<T>> = weight_grads.into_iter().map(|g| g.expect("every weight visited")).collect();
        grads.extend(s_grads);
        Ok(Gradients { loss: loss.loss, correct: loss.correct, grads })
    }

    fn layer_states(&self) -> Result<Vec<LayerState>> {
        let mut states = Vec::new();
        for l in &self.layers {
            let (name, slot, nz, total) = match l {
                Layer::Linear(x) => {
                    let p = &self.thresholds[x.threshold];
                    (&x.name, x.threshold, nnz(&crate::threshold::str_forward(&x.weight, p)?), x.weight.len())
                }
                Layer::Conv(x) => {
                    let p = &self.thresholds[x.threshold];
                    (&x.name, x.threshold, nnz(&crate::threshold::str_forward(&x.weight, p)?), x.weight.len())
                }
                Layer::ChannelConv(x) => {
                    let (_, kernel) = x.effective(&self.thresholds[x.threshold])?;
                    (&x.name, x.threshold, nnz(&kernel), x.weight.len())
                }
                _ => continue,
            };
            states.push(LayerState { name: name.clone(), alpha: self.thresholds[slot].mean_alpha().as_f64(), nonzeros: nz, total });
        }
        Ok(states)
    }

    fn architecture(&self) -> Result<Architecture> {
        let mut shape = self.input_shape.clone();
        let mut specs = Vec::new();
        let mut pools = 0;
        for l in &self.layers {
            match l {
                Layer::Linear(x) => {
                    specs.push(LayerSpec::fc(&x.name, x.in_features() as u64, x.out_features() as u64));
                    shape = vec![x.out_features()];
                }
                Layer::Conv(StrConv { name, weight, geom, .. }) | Layer::ChannelConv(ChannelPrunedConv { name, weight, geom, .. }) => {
                    let ws = weight.shape();
                    let (oh, ow) = geom.output_size(shape[1], shape[2], ws[2], ws[3])?;
                    let mut spec = LayerSpec::conv(
                        name,
                        shape[0] as u64,
                        ws[0] as u64,
                        ws[2] as u64,
                        geom.stride as u64,
                        geom.padding as u64,
                        geom.groups as u64,
                        oh as u64,
                    );
                    spec.kernel_w = ws[3] as u64;
                    spec.output_w = ow as u64;
                    specs.push(spec);
                    shape = vec![ws[0], oh, ow];
                }
                Layer::GlobalAvgPool => {
                    pools += 1;
                    let mut spec = LayerSpec::avg_pool(&format!("avgpool{pools}"), shape[0] as u64, shape[1] as u64);
                    spec.kernel_w = shape[2] as u64;
                    specs.push(spec);
                    shape = vec![shape[0]];
                }
                Layer::Flatten => shape = vec![shape.iter().product()],
                Layer::Relu => {}
            }
        }
        Ok(Architecture { name: "sequential".into(), pool_accounting: PoolAccounting::default(), layers: specs })
    }

    fn checkpoint(&self) -> Result<Checkpoint<T>> {
        let mut ckpt = Checkpoint::new("sequential");
        for l in &self.layers {
            let (name, weight, importance, slot) = match l {
                Layer::Linear(x) => (&x.name, &x.weight, None, x.threshold),
                Layer::Conv(x) => (&x.name, &x.weight, None, x.threshold),
                Layer::ChannelConv(x) => (&x.name, &x.weight, Some(x.importance.clone()), x.threshold),
                _ => continue,
            };
            let p = &self.thresholds[slot];
            ckpt.layers.insert(name.clone(), LayerEntry::thresholded(weight.clone(), importance, p));
        }
        Ok(ckpt)
    }

    fn restore(&mut self, ckpt: &Checkpoint<T>) -> Result<()> {
        ckpt.expect_model("sequential")?;
        let mut restored = Vec::new();
        for l in &mut self.layers {
            let (name, weight, importance, slot) = match l {
                Layer::Linear(x) => (&x.name, &mut x.weight, None, x.threshold),
                Layer::Conv(x) => (&x.name, &mut x.weight, None, x.threshold),
                Layer::ChannelConv(x) => (&x.name, &mut x.weight, Some(&mut x.importance), x.threshold),
                _ => continue,
            };
            let entry = ckpt.layer(name)?;
            entry.load_into(name, weight, importance)?;
            restored.push((slot, entry.threshold(name)?));
        }
        for (slot, p) in restored {
            if p.s.shape() != self.thresholds[slot].s.shape() {
                return Err(Error::Shape(format!(
                    "checkpoint threshold of shape {:?} for slot of shape {:?}",
                    p.s.shape(),
                    self.thresholds[slot].s.shape()
                )));
            }
            self.thresholds[slot] = p;
        }
        Ok(())
    }
}

/// Incremental [`Sequential`] construction that tracks the running shape.
pub struct SequentialBuilder<T> {
    model: Sequential<T>,
    shape: Vec<usize>,
    setup: StrSetup<T>,
}

impl<T: Scalar> SequentialBuilder<T> {
    fn threshold_slot(&mut self, shape: &[usize]) -> usize {
        let setup = self.setup;
        if setup.granularity == Granularity::Global && !self.model.thresholds.is_empty() {
            return 0;
        }
        self.model.thresholds.push(StrParam::new(setup.granularity, shape, setup.s_init, setup.func));
        self.model.thresholds.len() - 1
    }

    pub fn linear(mut self, name: &str, out: usize, rng: &mut impl Rng) -> Result<Self> {
        if self.shape.len() != 1 {
            return Err(Error::Shape(format!("linear layer `{name}` after non-flat shape {:?}", self.shape)));
        }
        let slot = self.threshold_slot(&[out, self.shape[0]]);
        self.model.layers.push(Layer::Linear(StrLinear::new(name, self.shape[0], out, slot, rng)));
        self.shape = vec![out];
        Ok(self)
    }

    fn conv_layer(&mut self, name: &str, out: usize, k: usize, geom: Conv2dGeometry, rng: &mut impl Rng) -> Result<StrConv<T>> {
        if self.shape.len() != 3 || !self.shape[0].is_multiple_of(geom.groups) || !out.is_multiple_of(geom.groups) {
            return Err(Error::Shape(format!("conv layer `{name}` ({} groups) cannot follow shape {:?}", geom.groups, self.shape)));
        }
        let (oh, ow) = geom.output_size(self.shape[1], self.shape[2], k, k)?;
        let conv = StrConv::new(name, self.shape[0], out, k, geom, 0, rng);
        self.shape = vec![out, oh, ow];
        Ok(conv)
    }

    pub fn conv(mut self, name: &str, out: usize, k: usize, geom: Conv2dGeometry, rng: &mut impl Rng) -> Result<Self> {
        let mut conv = self.conv_layer(name, out, k, geom, rng)?;
        conv.threshold = self.threshold_slot(conv.weight.shape());
        self.model.layers.push(Layer::Conv(conv));
        Ok(self)
    }

    /// Convolution with a unit importance per output channel under STR.
    pub fn channel_conv(mut self, name: &str, out: usize, k: usize, geom: Conv2dGeometry, rng: &mut impl Rng) -> Result<Self> {
        let mut conv = self.conv_layer(name, out, k, geom, rng)?;
        conv.threshold = self.threshold_slot(&[out]);
        let wrapped = ChannelPrunedConv::wrap(conv, Tensor::full(&[out], T::one()))?;
        self.model.layers.push(Layer::ChannelConv(wrapped));
        Ok(self)
    }

    pub fn relu(mut self) -> Self {
        self.model.layers.push(Layer::Relu);
        self
    }

    pub fn flatten(mut self) -> Self {
        self.shape = vec![self.shape.iter().product()];
        self.model.layers.push(Layer::Flatten);
        self
    }

    pub fn global_avg_pool(mut self) -> Result<Self> {
        if self.shape.len() != 3 {
            return Err(Error::Shape(format!("pooling after shape {:?}", self.shape)));
        }
        self.shape = vec![self.shape[0]];
        self.model.layers.push(Layer::GlobalAvgPool);
        Ok(self)
    }

    pub fn build(self) -> Sequential<T> {
        self.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(g: Granularity) -> StrSetup<f64> {
        StrSetup::new(g, ThresholdFn::sigmoid(1.0), -5.0)
    }

    #[test]
    fn global_shares_one_slot() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Sequential::mlp(6, &[5, 4], 3, setup(Granularity::Global), &mut rng).unwrap();
        assert_eq!(m.thresholds.len(), 1);
        let slots = m.param_slots();
        assert_eq!(slots.last().unwrap().name, "global.s");
        assert_eq!(slots.len(), m.params().len());
    }

    #[test]
    fn per_layer_slots_named_after_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Sequential::cnn(8, 4, setup(Granularity::PerChannel), true, &mut rng).unwrap();
        let names: Vec<String> = m.param_slots().into_iter().map(|s| s.name).collect();
        assert!(names.contains(&"conv3_dw.importance".to_string()));
        assert!(names.contains(&"fc.s".to_string()));
        assert_eq!(m.thresholds.len(), 5);
    }

    #[test]
    fn gradient_shapes_follow_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Sequential::cnn(8, 4, setup(Granularity::PerLayer), false, &mut rng).unwrap();
        let x = Tensor::from_fn(&[3, 1, 8, 8], |i| ((i * 7919) % 13) as f64 / 13.0 - 0.5);
        let g = m.gradients(&x, &Targets::Classes(vec![0, 1, 3])).unwrap();
        for (p, gr) in m.params().iter().zip(&g.grads) {
            assert_eq!(p.shape(), gr.shape());
        }
    }

    #[test]
    fn architecture_tracks_spatial_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Sequential::<f64>::cnn(16, 4, StrSetup::dense(), false, &mut rng).unwrap();
        let a = m.architecture().unwrap();
        let sizes: Vec<u64> = a.layers.iter().map(|l| l.output_h).collect();
        assert_eq!(sizes, vec![16, 8, 8, 8, 1, 1]);
        assert_eq!(a.layers[2].params(), 16 * 9);
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Sequential::<f64>::mlp(4, &[3], 2, StrSetup::dense(), &mut rng).unwrap();
        assert!(m.predict(&Tensor::zeros(&[2, 5])).is_err());
    }
}
