//! Mini-batch training loop with sparsity and threshold logging.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{overall_sparsity, Network, ParamRole};
use crate::optim::{cosine_lr, Sgd};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight decay on thresholded weights and thresholds.
    pub lambda: f64,
    pub s_init: f64,
    pub base_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub seed: u64,
    /// Keep every `s` at its initial value.
    pub freeze_thresholds: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 3.0517578125e-05,
            s_init: -3200.0,
            base_lr: 0.1,
            momentum: 0.9,
            batch_size: 64,
            epochs: 30,
            warmup_epochs: 5,
            seed: 0,
            freeze_thresholds: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be a finite value >= 0, got {}", self.lambda));
        }
        if self.epochs < 1 {
            return fail("epochs must be at least 1".into());
        }
        if self.warmup_epochs >= self.epochs {
            return fail(format!("warmup_epochs ({}) must be smaller than epochs ({})", self.warmup_epochs, self.epochs));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return fail(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !self.s_init.is_finite() {
            return fail("s_init must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// Training accuracy over the epoch (0 for regression).
    pub acc: f64,
    /// Overall sparsity of the thresholded layers at epoch end.
    pub sparsity: f64,
    /// Mean threshold per layer at epoch end.
    pub alphas: Vec<f64>,
    /// Per-layer non-zero count at epoch end.
    pub nonzeros: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub layers: Vec<String>,
    /// Weight count per layer.
    pub layer_sizes: Vec<usize>,
    pub epochs: Vec<EpochLog>,
    pub steps: usize,
}

impl TrainReport {
    pub fn last(&self) -> &EpochLog {
        self.epochs.last().expect("at least one epoch")
    }

    /// Per-layer sparsity in percent after `epoch`.
    pub fn layer_sparsity_pct(&self, epoch: usize) -> Vec<f64> {
        self.epochs[epoch].nonzeros.iter().zip(&self.layer_sizes).map(|(&nz, &n)| 100.0 * (1.0 - nz as f64 / n as f64)).collect()
    }

    /// `epoch,loss,acc,sparsity,alpha_<layer>...`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,acc,sparsity");
        for l in &self.layers {
            out.push_str(&format!(",alpha_{l}"));
        }
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{}", e.epoch, e.loss, e.acc, e.sparsity));
            for a in &e.alphas {
                out.push_str(&format!(",{a}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Mean loss and accuracy over `data`, evaluated in batches.
pub fn evaluate<T: Scalar, N: Network<T>>(model: &N, data: &Dataset<T>, batch_size: usize) -> Result<(f64, f64)> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = data.batch(chunk);
        let out = model.predict(&x)?;
        let l = crate::network::apply_loss(&out, &y)?;
        loss += l.loss.as_f64() * chunk.len() as f64;
        correct += l.correct;
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

pub fn train<T: Scalar, N: Network<T>>(model: &mut N, data: &Dataset<T>, cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(model, data, cfg, |_, _| Ok(()))
}

/// Trains and calls `after_step(model, step)` after every optimizer step.
pub fn train_with<T, N, F>(model: &mut N, data: &Dataset<T>, cfg: &TrainConfig, mut after_step: F) -> Result<TrainReport>
where
    T: Scalar,
    N: Network<T>,
    F: FnMut(&mut N, usize) -> Result<()>,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let slots = model.param_slots();
    let lambda = T::lit(cfg.lambda);
    let decays: Vec<Option<T>> = slots
        .iter()
        .map(|s| match s.role {
            ParamRole::Threshold if cfg.freeze_thresholds => None,
            _ if s.decay => Some(lambda),
            _ => Some(T::zero()),
        })
        .collect();
    let mut opt = Sgd::new(model.params(), T::lit(cfg.momentum));

    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let warmup = steps_per_epoch * cfg.warmup_epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let initial = model.layer_states()?;
    let mut report = TrainReport {
        layers: initial.iter().map(|s| s.name.clone()).collect(),
        layer_sizes: initial.iter().map(|s| s.total).collect(),
        epochs: Vec::with_capacity(cfg.epochs),
        steps: 0,
    };

    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = data.batch(chunk);
            let g = model.gradients(&x, &y)?;
            if let Some(i) = g.grads.iter().position(|t| t.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite { step, param: slots[i].name.clone() });
            }
            if !g.loss.is_finite() {
                return Err(Error::NonFinite { step, param: "loss".into() });
            }
            loss_sum += g.loss.as_f64() * chunk.len() as f64;
            correct += g.correct;
            let lr = T::lit(cosine_lr(step, total, warmup, cfg.base_lr)?);
            opt.step(model.params_mut(), &g.grads, lr, &decays)?;
            if let Some(i) = model.params().iter().position(|t| t.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite { step, param: slots[i].name.clone() });
            }
            after_step(model, step)?;
            step += 1;
        }
        let states = model.layer_states()?;
        report.epochs.push(EpochLog {
            epoch,
            loss: loss_sum / data.len() as f64,
            acc: correct as f64 / data.len() as f64,
            sparsity: overall_sparsity(&states),
            alphas: states.iter().map(|s| s.alpha).collect(),
            nonzeros: states.iter().map(|s| s.nonzeros).collect(),
        });
    }
    report.steps = step;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gaussian_blobs;
    use crate::network::{Sequential, StrSetup};
    use crate::threshold::{Granularity, ThresholdFn};

    fn cfg() -> TrainConfig {
        TrainConfig { lambda: 0.0, epochs: 3, warmup_epochs: 1, batch_size: 16, ..TrainConfig::default() }
    }

    #[test]
    fn validate_rejects_bad_values() {
        for bad in [
            TrainConfig { lambda: -1.0, ..cfg() },
            TrainConfig { epochs: 0, ..cfg() },
            TrainConfig { warmup_epochs: 3, ..cfg() },
            TrainConfig { batch_size: 0, ..cfg() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert!(cfg().validate().is_ok());
    }

    #[test]
    fn report_csv_layout() {
        let data = gaussian_blobs::<f64>(64, 5, 3, 2.0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let setup = StrSetup::new(Granularity::PerLayer, ThresholdFn::sigmoid(1.0), -5.0);
        let mut m = Sequential::mlp(5, &[8], 3, setup, &mut rng).unwrap();
        let rep = train(&mut m, &data, &cfg()).unwrap();
        let csv = rep.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "epoch,loss,acc,sparsity,alpha_fc1,alpha_fc2");
        assert_eq!(lines.count(), 3);
        assert_eq!(rep.steps, 12);
    }

    #[test]
    fn nan_names_parameter() {
        let data = gaussian_blobs::<f64>(32, 4, 2, 2.0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = Sequential::mlp(4, &[4], 2, StrSetup::dense(), &mut rng).unwrap();
        let c = TrainConfig { base_lr: 1e300, ..cfg() };
        match train(&mut m, &data, &c) {
            Err(Error::NonFinite { param, .. }) => assert!(param.starts_with("fc")),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }
}
