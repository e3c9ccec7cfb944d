//! Fixed per-layer budgets enforced by magnitude pruning.

use std::path::Path;

use crate::budget::import_budget;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{Network, ParamRole};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{train_with, TrainConfig, TrainReport};

/// Number of entries kept at `sparsity_pct`: `round(n * (100 - s) / 100)`.
pub fn kept_count(n: usize, sparsity_pct: f64) -> usize {
    ((n as f64 * (100.0 - sparsity_pct) / 100.0).round() as usize).min(n)
}

/// Keep mask of the `k` largest magnitudes; ties keep the lower index.
pub fn magnitude_mask<T: Scalar>(w: &Tensor<T>, sparsity_pct: f64) -> Result<Vec<bool>> {
    if !(0.0..=100.0).contains(&sparsity_pct) {
        return Err(Error::Config(format!("sparsity {sparsity_pct} outside [0, 100]")));
    }
    let k = kept_count(w.len(), sparsity_pct);
    let mut order: Vec<usize> = (0..w.len()).collect();
    let d = w.data();
    order.sort_by(|&a, &b| d[b].abs().partial_cmp(&d[a].abs()).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut mask = vec![false; w.len()];
    for &i in &order[..k] {
        mask[i] = true;
    }
    Ok(mask)
}

/// `W` with all but the `k` largest-magnitude entries zeroed.
pub fn magnitude_prune_to_budget<T: Scalar>(w: &Tensor<T>, sparsity_pct: f64) -> Result<Tensor<T>> {
    let mask = magnitude_mask(w, sparsity_pct)?;
    Ok(Tensor::from_fn(w.shape(), |i| if mask[i] { w.data()[i] } else { T::zero() }))
}

/// Prunes every thresholded parameter of `model` to its budget, in
/// [`Network::layer_states`] order.
pub fn apply_budget<T: Scalar, N: Network<T>>(model: &mut N, budget: &[f64]) -> Result<()> {
    let slots = model.param_slots();
    let mut params = model.params_mut();
    let targets: Vec<usize> = slots.iter().enumerate().filter(|(_, s)| s.role == ParamRole::Thresholded).map(|(i, _)| i).collect();
    if targets.len() != budget.len() {
        return Err(Error::Config(format!("budget has {} layers, model has {} thresholded layers", budget.len(), targets.len())));
    }
    for (&i, &pct) in targets.iter().zip(budget) {
        let pruned = magnitude_prune_to_budget(params[i], pct)?;
        *params[i] = pruned;
    }
    Ok(())
}

/// Prunes to `budget` and scales each layer's survivors by `sqrt(n / k)`,
/// keeping the variance of a fresh initialisation after pruning.
pub fn apply_budget_rescaled<T: Scalar, N: Network<T>>(model: &mut N, budget: &[f64]) -> Result<()> {
    apply_budget(model, budget)?;
    let slots = model.param_slots();
    let targets = slots.iter().enumerate().filter(|(_, s)| s.role == ParamRole::Thresholded).map(|(i, _)| i);
    let mut params = model.params_mut();
    for (i, &pct) in targets.zip(budget) {
        let n = params[i].len();
        let k = kept_count(n, pct);
        if k > 0 {
            let c = T::lit((n as f64 / k as f64).sqrt());
            params[i].data_mut().iter_mut().for_each(|w| *w *= c);
        }
    }
    Ok(())
}

/// Uniform budget with the same overall sparsity as `budget` over layers of
/// the given sizes.
pub fn uniform_budget(budget: &[f64], sizes: &[usize]) -> Vec<f64> {
    let total: usize = sizes.iter().sum();
    let kept: f64 = budget.iter().zip(sizes).map(|(&s, &n)| n as f64 * (100.0 - s) / 100.0).sum();
    let overall = 100.0 * (1.0 - kept / total as f64);
    vec![overall; budget.len()]
}

/// Trains with magnitude pruning to `budget` re-applied after every step,
/// starting from [`apply_budget_rescaled`]. Thresholds stay frozen, so the
/// caller should build the model with zero thresholds; pruned weights then
/// receive zero gradient.
pub fn train_with_budget<T: Scalar, N: Network<T>>(
    model: &mut N,
    budget: &[f64],
    data: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let cfg = TrainConfig { freeze_thresholds: true, ..cfg.clone() };
    apply_budget_rescaled(model, budget)?;
    train_with(model, data, &cfg, |m, _| apply_budget(m, budget))
}

/// [`train_with_budget`] with the budget read from a CSV keyed by layer name.
pub fn budget_transfer_run<T: Scalar, N: Network<T>>(
    budget_csv: &Path,
    model: &mut N,
    data: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let names: Vec<String> = model.layer_states()?.into_iter().map(|s| s.name).collect();
    let budget = import_budget(budget_csv, &names)?;
    train_with_budget(model, &budget, data, cfg)
}
