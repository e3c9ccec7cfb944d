//! Low-rank FastGRNN cell with soft-thresholded rank masks.
//!
//! The input and recurrent matrices are `W = (W1 * 1 m~_W^T) W2` and
//! `U = (U1 * 1 m~_U^T) U2`, so the number of non-zero mask entries bounds
//! their rank. Per step:
//!
//! ```text
//! a   = x W + h U
//! z   = sigmoid(a + b_z)
//! h~  = tanh(a + b_h)
//! h'  = (zeta (1 - z) + nu) * h~ + z * h
//! ```
//!
//! with `zeta, nu` the sigmoids of trainable scalars. A dense linear
//! classifier reads the last hidden state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::budget::Architecture;
use crate::checkpoint::{copy_checked, Checkpoint, LayerEntry};
use crate::data::Targets;
use crate::error::{Error, Result};
use crate::network::{apply_loss, Gradients, LayerState, Network, ParamRole, ParamSlot};
use crate::scalar::Scalar;
use crate::tensor::{sigmoid, Tensor};
use crate::threshold::{grad_s, grad_w, nnz, str_forward, Granularity, StrParam, ThresholdFn};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct FastGrnnConfig<T> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
    /// Granularity of the mask thresholds: one scalar per mask by default.
    pub mask_granularity: Granularity,
    pub func: ThresholdFn<T>,
    pub s_init: T,
    /// Standard deviation of the Gaussian factor initialisation.
    pub init_std: f64,
}

impl<T: Scalar> FastGrnnConfig<T> {
    pub fn new(input_dim: usize, hidden_dim: usize, classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            classes,
            mask_granularity: Granularity::PerLayer,
            func: ThresholdFn::exponential(T::one()),
            s_init: T::lit(-10.0),
            init_std: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct LowRankFastGrnn<T> {
    pub w1: Tensor<T>,
    pub w2: Tensor<T>,
    pub u1: Tensor<T>,
    pub u2: Tensor<T>,
    pub m_w: Tensor<T>,
    pub m_u: Tensor<T>,
    pub p_w: StrParam<T>,
    pub p_u: StrParam<T>,
    pub b_z: Tensor<T>,
    pub b_h: Tensor<T>,
    /// Pre-sigmoid `zeta`, shape `[1]`.
    pub zeta: Tensor<T>,
    /// Pre-sigmoid `nu`, shape `[1]`.
    pub nu: Tensor<T>,
    /// Classifier `[hidden, classes]` and bias `[classes]`.
    pub v: Tensor<T>,
    pub c: Tensor<T>,
}

const TENSOR_NAMES: [&str; 12] = ["W1", "W2", "U1", "U2", "m_W", "m_U", "b_z", "b_h", "zeta", "nu", "V", "c"];

/// Multiplies column `j` of `[N, R]` by `m[j]`.
fn scale_cols<T: Scalar>(a: &Tensor<T>, m: &Tensor<T>) -> Tensor<T> {
    let r = m.len();
    Tensor::from_fn(a.shape(), |i| a.data()[i] * m.data()[i % r])
}

fn col_sums<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let r = a.shape()[1];
    let mut out = vec![T::zero(); r];
    for row in a.data().chunks(r) {
        out.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
    }
    Tensor::vector(out)
}

fn add_row<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let r = b.len();
    Tensor::from_fn(a.shape(), |i| a.data()[i] + b.data()[i % r])
}

struct StepCache<T> {
    x: Tensor<T>,
    h_prev: Tensor<T>,
    xa: Tensor<T>,
    xm: Tensor<T>,
    ha: Tensor<T>,
    hm: Tensor<T>,
    z: Tensor<T>,
    c: Tensor<T>,
}

impl<T: Scalar> LowRankFastGrnn<T> {
    pub fn new(cfg: &FastGrnnConfig<T>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(cfg, &mut rng)
    }

    pub fn with_rng(cfg: &FastGrnnConfig<T>, rng: &mut impl Rng) -> Self {
        let (d, h) = (cfg.input_dim, cfg.hidden_dim);
        let normal = Normal::new(0.0, cfg.init_std).expect("positive std");
        let mut gauss = |shape: &[usize]| Tensor::from_fn(shape, |_| T::lit(normal.sample(rng)));
        let (w1, w2, u1, u2) = (gauss(&[d, d]), gauss(&[d, h]), gauss(&[h, h]), gauss(&[h, h]));
        let v = gauss(&[h, cfg.classes]);
        Self {
            w1,
            w2,
            u1,
            u2,
            m_w: Tensor::full(&[d], T::one()),
            m_u: Tensor::full(&[h], T::one()),
            p_w: StrParam::new(cfg.mask_granularity, &[d], cfg.s_init, cfg.func),
            p_u: StrParam::new(cfg.mask_granularity, &[h], cfg.s_init, cfg.func),
            b_z: Tensor::zeros(&[h]),
            b_h: Tensor::zeros(&[h]),
            zeta: Tensor::vector(vec![T::one()]),
            nu: Tensor::vector(vec![T::lit(-4.0)]),
            v,
            c: Tensor::zeros(&[cfg.classes]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.u1.shape()[0]
    }

    /// Thresholded masks `(m~_W, m~_U)`.
    pub fn masks(&self) -> Result<(Tensor<T>, Tensor<T>)> {
        Ok((str_forward(&self.m_w, &self.p_w)?, str_forward(&self.m_u, &self.p_u)?))
    }

    /// `(r_W, r_U)`: non-zeros of the thresholded masks.
    pub fn effective_rank(&self) -> Result<(usize, usize)> {
        let (mw, mu) = self.masks()?;
        Ok((nnz(&mw), nnz(&mu)))
    }

    /// Effective `(W, U)` matrices.
    pub fn effective_matrices(&self) -> Result<(Tensor<T>, Tensor<T>)> {
        let (mw, mu) = self.masks()?;
        Ok((scale_cols(&self.w1, &mw).matmul(&self.w2)?, scale_cols(&self.u1, &mu).matmul(&self.u2)?))
    }

    /// One recurrence step for a batch: `x [N, D]`, `h [N, H]`.
    pub fn step(&self, x: &Tensor<T>, h: &Tensor<T>) -> Result<Tensor<T>> {
        let (mw, mu) = self.masks()?;
        Ok(self.step_cached(x, h, &mw, &mu)?.0)
    }

    fn step_cached(&self, x: &Tensor<T>, h_prev: &Tensor<T>, mw: &Tensor<T>, mu: &Tensor<T>) -> Result<(Tensor<T>, StepCache<T>)> {
        let xa = x.matmul(&self.w1)?;
        let xm = scale_cols(&xa, mw);
        let ha = h_prev.matmul(&self.u1)?;
        let hm = scale_cols(&ha, mu);
        let a = xm.matmul(&self.w2)?.add(&hm.matmul(&self.u2)?)?;
        let z = add_row(&a, &self.b_z).sigmoid();
        let c = add_row(&a, &self.b_h).tanh();
        let zeta = sigmoid(self.zeta.data()[0]);
        let nu = sigmoid(self.nu.data()[0]);
        let data = (0..z.len())
            .map(|i| {
                let zi = z.data()[i];
                (zeta * (T::one() - zi) + nu) * c.data()[i] + zi * h_prev.data()[i]
            })
            .collect();
        let h = Tensor::new(z.shape().to_vec(), data)?;
        Ok((h, StepCache { x: x.clone(), h_prev: h_prev.clone(), xa, xm, ha, hm, z, c }))
    }

    fn time_slice(inputs: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        let s = inputs.shape();
        let (n, steps, d) = (s[0], s[1], s[2]);
        let data = (0..n).flat_map(|b| inputs.data()[(b * steps + t) * d..(b * steps + t + 1) * d].iter().copied()).collect();
        Ok(Tensor::new(vec![n, d], data)?)
    }

    fn check_input(&self, inputs: &Tensor<T>) -> Result<()> {
        let s = inputs.shape();
        if s.len() != 3 || s[2] != self.input_dim() {
            return Err(Error::Shape(format!("sequence input must be [N, T, {}], got {s:?}", self.input_dim())));
        }
        Ok(())
    }

    /// Hidden state after the whole sequence, plus per-step caches.
    fn run(&self, inputs: &Tensor<T>, keep: bool) -> Result<(Tensor<T>, Vec<StepCache<T>>)> {
        self.check_input(inputs)?;
        let (mw, mu) = self.masks()?;
        let mut h = Tensor::zeros(&[inputs.shape()[0], self.hidden_dim()]);
        let mut caches = Vec::new();
        for t in 0..inputs.shape()[1] {
            let x = Self::time_slice(inputs, t)?;
            let (next, cache) = self.step_cached(&x, &h, &mw, &mu)?;
            if keep {
                caches.push(cache);
            }
            h = next;
        }
        Ok((h, caches))
    }

    fn tensors(&self) -> [&Tensor<T>; 12] {
        [&self.w1, &self.w2, &self.u1, &self.u2, &self.m_w, &self.m_u, &self.b_z, &self.b_h, &self.zeta, &self.nu, &self.v, &self.c]
    }
}

impl<T: Scalar> Network<T> for LowRankFastGrnn<T> {
    fn param_slots(&self) -> Vec<ParamSlot> {
        let mut slots: Vec<ParamSlot> = TENSOR_NAMES
            .iter()
            .map(|&n| {
                let masked = n.starts_with("m_");
                let role = if masked { ParamRole::Thresholded } else { ParamRole::Dense };
                ParamSlot::new(n, role, masked)
            })
            .collect();
        slots.push(ParamSlot::new("m_W.s", ParamRole::Threshold, true));
        slots.push(ParamSlot::new("m_U.s", ParamRole::Threshold, true));
        slots
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = self.tensors().to_vec();
        out.push(&self.p_w.s);
        out.push(&self.p_u.s);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![
            &mut self.w1,
            &mut self.w2,
            &mut self.u1,
            &mut self.u2,
            &mut self.m_w,
            &mut self.m_u,
            &mut self.b_z,
            &mut self.b_h,
            &mut self.zeta,
            &mut self.nu,
            &mut self.v,
            &mut self.c,
            &mut self.p_w.s,
            &mut self.p_u.s,
        ]
    }

    fn predict(&self, inputs: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, _) = self.run(inputs, false)?;
        Ok(add_row(&h.matmul(&self.v)?, &self.c))
    }

    fn gradients(&self, inputs: &Tensor<T>, targets: &Targets<T>) -> Result<Gradients<T>> {
        let (h_last, caches) = self.run(inputs, true)?;
        let logits = add_row(&h_last.matmul(&self.v)?, &self.c);
        let loss = apply_loss(&logits, targets)?;
        let (mw, mu) = self.masks()?;
        let zeta = sigmoid(self.zeta.data()[0]);
        let nu = sigmoid(self.nu.data()[0]);

        let d_v = h_last.transpose()?.matmul(&loss.grad)?;
        let d_c = col_sums(&loss.grad);
        let mut dh = loss.grad.matmul(&self.v.transpose()?)?;

        let mut d_w1 = Tensor::zeros(self.w1.shape());
        let mut d_w2 = Tensor::zeros(self.w2.shape());
        let mut d_u1 = Tensor::zeros(self.u1.shape());
        let mut d_u2 = Tensor::zeros(self.u2.shape());
        let mut d_mw = Tensor::zeros(self.m_w.shape());
        let mut d_mu = Tensor::zeros(self.m_u.shape());
        let mut d_bz = Tensor::zeros(self.b_z.shape());
        let mut d_bh = Tensor::zeros(self.b_h.shape());
        let (mut d_zeta, mut d_nu) = (T::zero(), T::zero());
        let w2t = self.w2.transpose()?;
        let u2t = self.u2.transpose()?;
        let u1t = self.u1.transpose()?;

        for sc in caches.iter().rev() {
            let n = dh.len();
            let mut d_az = vec![T::zero(); n];
            let mut d_ah = vec![T::zero(); n];
            let mut d_hprev = vec![T::zero(); n];
            for i in 0..n {
                let (g, z, c, hp) = (dh.data()[i], sc.z.data()[i], sc.c.data()[i], sc.h_prev.data()[i]);
                let dc = g * (zeta * (T::one() - z) + nu);
                let dz = g * (hp - zeta * c);
                d_zeta += g * (T::one() - z) * c;
                d_nu += g * c;
                d_hprev[i] = g * z;
                d_az[i] = dz * z * (T::one() - z);
                d_ah[i] = dc * (T::one() - c * c);
            }
            let shape = dh.shape().to_vec();
            let d_az = Tensor::new(shape.clone(), d_az)?;
            let d_ah = Tensor::new(shape.clone(), d_ah)?;
            d_bz.add_assign(&col_sums(&d_az))?;
            d_bh.add_assign(&col_sums(&d_ah))?;
            let da = d_az.add(&d_ah)?;

            let d_hm = da.matmul(&u2t)?;
            d_u2.add_assign(&sc.hm.transpose()?.matmul(&da)?)?;
            d_mu.add_assign(&col_sums(&d_hm.hadamard(&sc.ha)?))?;
            let d_ha = scale_cols(&d_hm, &mu);
            d_u1.add_assign(&sc.h_prev.transpose()?.matmul(&d_ha)?)?;

            let d_xm = da.matmul(&w2t)?;
            d_w2.add_assign(&sc.xm.transpose()?.matmul(&da)?)?;
            d_mw.add_assign(&col_sums(&d_xm.hadamard(&sc.xa)?))?;
            let d_xa = scale_cols(&d_xm, &mw);
            d_w1.add_assign(&sc.x.transpose()?.matmul(&d_xa)?)?;

            let mut next = Tensor::new(shape, d_hprev)?;
            next.add_assign(&d_ha.matmul(&u1t)?)?;
            dh = next;
        }

        let sz = zeta * (T::one() - zeta);
        let sn = nu * (T::one() - nu);
        let grads = vec![
            d_w1,
            d_w2,
            d_u1,
            d_u2,
            grad_w(&d_mw, &mw)?,
            grad_w(&d_mu, &mu)?,
            d_bz,
            d_bh,
            Tensor::vector(vec![d_zeta * sz]),
            Tensor::vector(vec![d_nu * sn]),
            d_v,
            d_c,
            grad_s(&d_mw, &self.m_w, &self.p_w)?,
            grad_s(&d_mu, &self.m_u, &self.p_u)?,
        ];
        Ok(Gradients { loss: loss.loss, correct: loss.correct, grads })
    }

    fn layer_states(&self) -> Result<Vec<LayerState>> {
        let (mw, mu) = self.masks()?;
        Ok(vec![
            LayerState { name: "m_W".into(), alpha: self.p_w.mean_alpha().as_f64(), nonzeros: nnz(&mw), total: mw.len() },
            LayerState { name: "m_U".into(), alpha: self.p_u.mean_alpha().as_f64(), nonzeros: nnz(&mu), total: mu.len() },
        ])
    }

    fn architecture(&self) -> Result<Architecture> {
        Err(Error::UnmappedLayer("m_W".into()))
    }

    fn checkpoint(&self) -> Result<Checkpoint<T>> {
        let mut ckpt = Checkpoint::new("fastgrnn");
        for (name, t) in TENSOR_NAMES.iter().zip(self.tensors()) {
            let entry = match *name {
                "m_W" => LayerEntry::thresholded(t.clone(), None, &self.p_w),
                "m_U" => LayerEntry::thresholded(t.clone(), None, &self.p_u),
                _ => LayerEntry::dense(t.clone()),
            };
            ckpt.layers.insert(name.to_string(), entry);
        }
        Ok(ckpt)
    }

    fn restore(&mut self, ckpt: &Checkpoint<T>) -> Result<()> {
        ckpt.expect_model("fastgrnn")?;
        let p_w = ckpt.layer("m_W")?.threshold("m_W")?;
        let p_u = ckpt.layer("m_U")?.threshold("m_U")?;
        p_w.validate(self.m_w.shape())?;
        p_u.validate(self.m_u.shape())?;
        let targets = self.params_mut();
        for (name, dst) in TENSOR_NAMES.iter().zip(targets) {
            copy_checked(name, &ckpt.layer(name)?.weight, dst)?;
        }
        self.p_w = p_w;
        self.p_u = p_u;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_cell_has_full_rank() {
        let cell = LowRankFastGrnn::<f64>::new(&FastGrnnConfig::new(4, 5, 3), 0);
        assert_eq!(cell.effective_rank().unwrap(), (4, 5));
    }

    #[test]
    fn pruned_masks_zero_rank_and_input_path() {
        let mut cell = LowRankFastGrnn::<f64>::new(&FastGrnnConfig::new(4, 5, 3), 0);
        cell.m_w = Tensor::zeros(&[4]);
        cell.m_u = Tensor::zeros(&[5]);
        assert_eq!(cell.effective_rank().unwrap(), (0, 0));
        let h = Tensor::from_fn(&[2, 5], |i| i as f64 * 0.1 - 0.3);
        let a = cell.step(&Tensor::from_fn(&[2, 4], |i| i as f64), &h).unwrap();
        let b = cell.step(&Tensor::zeros(&[2, 4]), &h).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn partial_mask_count() {
        let mut cell = LowRankFastGrnn::<f64>::new(&FastGrnnConfig::new(4, 5, 3), 0);
        cell.m_w = Tensor::vector(vec![0.2, 0.0, 0.1, 0.0]);
        assert_eq!(cell.effective_rank().unwrap().0, 2);
    }

    #[test]
    fn rejects_bad_sequence_shape() {
        let cell = LowRankFastGrnn::<f64>::new(&FastGrnnConfig::new(4, 5, 3), 0);
        assert!(cell.predict(&Tensor::zeros(&[2, 3, 5])).is_err());
    }
}
