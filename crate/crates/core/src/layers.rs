//! Layers whose weights pass through the soft threshold before use.
//!
//! Every layer keeps its dense weights and recomputes the thresholded copy on
//! each forward pass. None of them carries a bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{conv2d_grad_input_raw, conv2d_grad_kernel_raw, conv2d_raw, Conv2dGeometry, ConvDims, Tensor};
use crate::threshold::{grad_s, grad_w, str_forward, StrParam};

/// Gradients produced by one layer's backward pass.
#[derive(Debug, Clone)]
pub struct LayerGrads<T> {
    pub input: Tensor<T>,
    /// Gradient w.r.t. the dense weights (already masked).
    pub weight: Tensor<T>,
    /// Gradient w.r.t. the layer's threshold parameter.
    pub s: Tensor<T>,
    /// Gradient w.r.t. the channel importance vector, when the layer has one.
    pub importance: Option<Tensor<T>>,
}

/// Kaiming-uniform initialisation over fan-in.
pub fn kaiming_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..bound)))
}

/// Fully connected layer, weight `[out, in]`, input `[N, in]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct StrLinear<T> {
    pub name: String,
    pub weight: Tensor<T>,
    /// Index of the threshold parameter in the owning network.
    pub threshold: usize,
}

impl<T: Scalar> StrLinear<T> {
    pub fn new(name: impl Into<String>, in_features: usize, out_features: usize, threshold: usize, rng: &mut impl Rng) -> Self {
        Self { name: name.into(), weight: kaiming_uniform(&[out_features, in_features], in_features, rng), threshold }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Returns the output and the thresholded weights used to compute it.
    pub fn forward(&self, x: &Tensor<T>, p: &StrParam<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let wt = str_forward(&self.weight, p)?;
        let y = x.matmul(&wt.transpose()?)?;
        Ok((y, wt))
    }

    pub fn backward(&self, x: &Tensor<T>, thresholded: &Tensor<T>, grad_out: &Tensor<T>, p: &StrParam<T>) -> Result<LayerGrads<T>> {
        let input = grad_out.matmul(thresholded)?;
        let g = grad_out.transpose()?.matmul(x)?;
        Ok(LayerGrads { input, weight: grad_w(&g, thresholded)?, s: grad_s(&g, &self.weight, p)?, importance: None })
    }
}

fn batched_conv<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, geom: Conv2dGeometry) -> Result<(Tensor<T>, ConvDims)> {
    if x.rank() != 4 {
        return Err(Error::Shape(format!("conv input must be [N,C,H,W], got {:?}", x.shape())));
    }
    let n = x.shape()[0];
    let d = ConvDims::resolve(&x.shape()[1..], kernel.shape(), geom)?;
    let mut out = vec![T::zero(); n * d.output_len()];
    conv2d_raw(&d, n, x.data(), kernel.data(), &mut out);
    Ok((Tensor::new(vec![n, d.c_out, d.oh, d.ow], out)?, d))
}

/// Returns (grad w.r.t. input, grad w.r.t. kernel) summed over the batch.
fn batched_conv_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: Conv2dGeometry,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let n = x.shape()[0];
    let d = ConvDims::resolve(&x.shape()[1..], kernel.shape(), geom)?;
    if grad_out.shape() != [n, d.c_out, d.oh, d.ow] {
        return Err(Error::Shape(format!("conv grad {:?} does not match output [{n}, {}, {}, {}]", grad_out.shape(), d.c_out, d.oh, d.ow)));
    }
    let mut gi = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); kernel.len()];
    conv2d_grad_kernel_raw(&d, n, x.data(), grad_out.data(), &mut gk);
    conv2d_grad_input_raw(&d, n, grad_out.data(), kernel.data(), &mut gi);
    Ok((Tensor::new(x.shape().to_vec(), gi)?, Tensor::new(kernel.shape().to_vec(), gk)?))
}

/// 2-D convolution, weight `[C_out, C_in/groups, kh, kw]`, input `[N, C_in, H, W]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct StrConv<T> {
    pub name: String,
    pub weight: Tensor<T>,
    pub geom: Conv2dGeometry,
    pub threshold: usize,
}

impl<T: Scalar> StrConv<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geom: Conv2dGeometry,
        threshold: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let cpg = in_channels / geom.groups;
        Self {
            name: name.into(),
            weight: kaiming_uniform(&[out_channels, cpg, kernel, kernel], cpg * kernel * kernel, rng),
            geom,
            threshold,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, p: &StrParam<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let wt = str_forward(&self.weight, p)?;
        let (y, _) = batched_conv(x, &wt, self.geom)?;
        Ok((y, wt))
    }

    pub fn backward(&self, x: &Tensor<T>, thresholded: &Tensor<T>, grad_out: &Tensor<T>, p: &StrParam<T>) -> Result<LayerGrads<T>> {
        let (input, g) = batched_conv_backward(x, thresholded, grad_out, self.geom)?;
        Ok(LayerGrads { input, weight: grad_w(&g, thresholded)?, s: grad_s(&g, &self.weight, p)?, importance: None })
    }
}

/// Convolution whose filters are scaled by a thresholded importance vector.
///
/// Filter `i` is used as `m~_i * f_i`; a zero `m~_i` removes the filter. The
/// threshold acts on the importance vector, the filters stay dense.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct ChannelPrunedConv<T> {
    pub name: String,
    pub weight: Tensor<T>,
    pub importance: Tensor<T>,
    pub geom: Conv2dGeometry,
    pub threshold: usize,
}

impl<T: Scalar> ChannelPrunedConv<T> {
    /// Wraps an existing convolution with a unit importance vector.
    pub fn wrap(conv: StrConv<T>, importance: Tensor<T>) -> Result<Self> {
        if importance.shape() != [conv.weight.shape()[0]] {
            return Err(Error::Shape(format!(
                "importance of shape {:?} for {} output channels",
                importance.shape(),
                conv.weight.shape()[0]
            )));
        }
        Ok(Self { name: conv.name, weight: conv.weight, importance, geom: conv.geom, threshold: conv.threshold })
    }

    /// Thresholded importance and the effective kernel.
    pub fn effective(&self, p: &StrParam<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let m = str_forward(&self.importance, p)?;
        let per = self.weight.len() / self.weight.shape()[0];
        let data = self.weight.data().iter().enumerate().map(|(i, &w)| w * m.data()[i / per]).collect();
        Ok((m, Tensor::new(self.weight.shape().to_vec(), data)?))
    }

    /// Returns the output and the thresholded importance vector.
    pub fn forward(&self, x: &Tensor<T>, p: &StrParam<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (m, kernel) = self.effective(p)?;
        let (y, _) = batched_conv(x, &kernel, self.geom)?;
        Ok((y, m))
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>, p: &StrParam<T>) -> Result<LayerGrads<T>> {
        let (m, kernel) = self.effective(p)?;
        let (input, g_eff) = batched_conv_backward(x, &kernel, grad_out, self.geom)?;
        let per = self.weight.len() / self.weight.shape()[0];
        let weight =
            Tensor::new(self.weight.shape().to_vec(), g_eff.data().iter().enumerate().map(|(i, &g)| g * m.data()[i / per]).collect())?;
        let g_m = Tensor::vector(
            (0..m.len())
                .map(|c| {
                    g_eff.data()[c * per..(c + 1) * per].iter().zip(&self.weight.data()[c * per..(c + 1) * per]).map(|(&g, &w)| g * w).sum()
                })
                .collect(),
        );
        Ok(LayerGrads { input, weight, s: grad_s(&g_m, &self.importance, p)?, importance: Some(grad_w(&g_m, &m)?) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::conv2d;
    use crate::threshold::{Granularity, ThresholdFn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense_param(shape: &[usize]) -> StrParam<f64> {
        StrParam::new(Granularity::PerLayer, shape, -1e4, ThresholdFn::sigmoid(1.0))
    }

    #[test]
    fn dense_linear_is_plain_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = StrLinear::<f64>::new("fc", 4, 3, 0, &mut rng);
        let x = Tensor::from_fn(&[2, 4], |i| i as f64 * 0.1 - 0.3);
        let p = dense_param(layer.weight.shape());
        let (y, wt) = layer.forward(&x, &p).unwrap();
        assert_eq!(wt, layer.weight);
        assert_eq!(y, x.matmul(&layer.weight.transpose().unwrap()).unwrap());
        let go = Tensor::full(&[2, 3], 1.0);
        let g = layer.backward(&x, &wt, &go, &p).unwrap();
        assert_eq!(g.weight, go.transpose().unwrap().matmul(&x).unwrap());
    }

    #[test]
    fn pruned_linear_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = StrLinear::<f64>::new("fc", 3, 2, 0, &mut rng);
        let p = StrParam::new(Granularity::PerLayer, &[1], 1e4, ThresholdFn::exponential(1.0));
        let x = Tensor::from_fn(&[1, 3], |i| i as f64 + 1.0);
        let (y, wt) = layer.forward(&x, &p).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let g = layer.backward(&x, &wt, &Tensor::full(&[1, 2], 1.0), &p).unwrap();
        assert!(g.weight.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_by_one_conv_equals_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = StrConv::<f64>::new("c", 3, 2, 1, Conv2dGeometry::default(), 0, &mut rng);
        let p = StrParam::new(Granularity::PerLayer, conv.weight.shape(), -1.5, ThresholdFn::sigmoid(1.0));
        let x = Tensor::from_fn(&[1, 3, 2, 2], |i| (i as f64 * 0.37).sin());
        let (y, _) = conv.forward(&x, &p).unwrap();
        let lin = StrLinear { name: "l".into(), weight: conv.weight.clone().reshape(&[2, 3]).unwrap(), threshold: 0 };
        let positions = Tensor::from_fn(&[4, 3], |i| x.data()[(i % 3) * 4 + i / 3]);
        let (yl, _) = lin.forward(&positions, &p).unwrap();
        for pos in 0..4 {
            for c in 0..2 {
                approx::assert_relative_eq!(y.data()[c * 4 + pos], yl.data()[pos * 2 + c], max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn dense_conv_equals_plain_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conv = StrConv::<f64>::new("c", 2, 4, 3, Conv2dGeometry::new(2, 1, 2), 0, &mut rng);
        let x = Tensor::from_fn(&[1, 2, 5, 5], |i| (i as f64).cos());
        let (y, _) = conv.forward(&x, &dense_param(conv.weight.shape())).unwrap();
        let reference = conv2d(&x.clone().reshape(&[2, 5, 5]).unwrap(), &conv.weight, conv.geom).unwrap();
        assert_eq!(y.data(), reference.data());
    }

    #[test]
    fn channel_wrapper_identity_and_removal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let conv = StrConv::<f64>::new("c", 2, 3, 3, Conv2dGeometry::new(1, 1, 1), 0, &mut rng);
        let x = Tensor::from_fn(&[2, 2, 4, 4], |i| (i as f64 * 0.21).sin());
        let p = dense_param(&[3]);
        let (plain, _) = conv.forward(&x, &dense_param(conv.weight.shape())).unwrap();
        let wrapped = ChannelPrunedConv::wrap(conv.clone(), Tensor::full(&[3], 1.0)).unwrap();
        assert_eq!(wrapped.forward(&x, &p).unwrap().0, plain);

        let cut = ChannelPrunedConv::wrap(conv, Tensor::vector(vec![1.0, 0.0, 1.0])).unwrap();
        let (y, m) = cut.forward(&x, &p).unwrap();
        assert_eq!(m.data()[1], 0.0);
        for b in 0..2 {
            let sample = y.outer_slice(b);
            assert!(sample[16..32].iter().all(|&v| v == 0.0));
        }
        assert!(ChannelPrunedConv::wrap(
            StrConv::<f64>::new("d", 2, 3, 3, Conv2dGeometry::default(), 0, &mut rng),
            Tensor::full(&[2], 1.0)
        )
        .is_err());
    }
}
