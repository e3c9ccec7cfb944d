//! Search for the weight decay giving a target overall sparsity.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::classification::classification_run;
use crate::experiments::config::RunConfig;
use crate::scalar::Scalar;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trial {
    pub lambda: f64,
    pub sparsity_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOutcome {
    pub lambda: f64,
    pub sparsity_pct: f64,
    pub converged: bool,
    /// A bracket stayed non-monotone after widening.
    pub non_monotone: bool,
    pub trials: Vec<Trial>,
}

/// Sparsity at or above this counts as a fully pruned, degenerate run.
const DEGENERATE_PCT: f64 = 100.0 - 1e-9;

/// Finds `lambda` so that `run(lambda)` (final overall sparsity in percent)
/// lands within `tolerance_pct` of `target_pct`.
///
/// The bracket grows geometrically from `lambda0` until it straddles the
/// target, then interpolates on `log lambda`. A fully pruned run never
/// counts as converged. Without success the closest trial is returned with
/// `converged == false`.
pub fn lambda_sweep(
    target_pct: f64,
    tolerance_pct: f64,
    lambda0: f64,
    max_trials: usize,
    mut run: impl FnMut(f64) -> Result<f64>,
) -> Result<SweepOutcome> {
    if target_pct == 0.0 {
        return Ok(SweepOutcome { lambda: 0.0, sparsity_pct: 0.0, converged: true, non_monotone: false, trials: Vec::new() });
    }
    if !(0.0..=100.0).contains(&target_pct) || tolerance_pct < 0.0 {
        return Err(Error::Config(format!("target {target_pct} outside [0, 100]")));
    }
    if max_trials < 3 {
        return Err(Error::Config("lambda sweep needs at least 3 trials".into()));
    }
    if !(lambda0 > 0.0 && lambda0.is_finite()) {
        return Err(Error::Config(format!("initial lambda must be positive, got {lambda0}")));
    }

    let mut trials: Vec<Trial> = Vec::new();
    let mut eval = |lambda: f64, trials: &mut Vec<Trial>| -> Result<f64> {
        let s = run(lambda)?;
        trials.push(Trial { lambda, sparsity_pct: s });
        Ok(s)
    };
    let hit = |s: f64| (s - target_pct).abs() <= tolerance_pct && s < DEGENERATE_PCT;

    let mut lo: Option<(f64, f64)> = None;
    let mut hi: Option<(f64, f64)> = None;
    let mut lambda = lambda0;
    let mut widened = false;
    let mut non_monotone = false;
    const GROW: f64 = 4.0;

    while trials.len() < max_trials {
        let s = eval(lambda, &mut trials)?;
        if hit(s) {
            return Ok(finish(trials, target_pct, non_monotone, true));
        }
        let below = s < target_pct;
        // sparsity should rise with lambda inside the bracket
        if let (Some((l_lo, s_lo)), Some((l_hi, s_hi))) = (lo, hi) {
            if lambda > l_lo && lambda < l_hi && (s < s_lo || s > s_hi) {
                if widened {
                    non_monotone = true;
                } else {
                    widened = true;
                    lo = None;
                    hi = None;
                    lambda = l_lo / GROW;
                    continue;
                }
            }
        }
        if below {
            lo = Some((lambda, s));
        } else {
            hi = Some((lambda, s));
        }
        lambda = match (lo, hi) {
            (Some((l, _)), None) => l * GROW,
            (None, Some((h, _))) => h / GROW,
            (Some((l, sl)), Some((h, sh))) => {
                let (ll, lh) = (l.ln(), h.ln());
                let t = if sh > sl { ((target_pct - sl) / (sh - sl)).clamp(0.15, 0.85) } else { 0.5 };
                (ll + t * (lh - ll)).exp()
            }
            (None, None) => unreachable!("one side was just set"),
        };
    }
    Ok(finish(trials, target_pct, non_monotone, false))
}

/// [`lambda_sweep`] over full classification runs of `cfg`, starting from
/// its `lambda` (or `1e-3` when that is zero).
pub fn sweep_classification<T: Scalar>(cfg: &RunConfig, target_pct: f64, tolerance_pct: f64, max_trials: usize) -> Result<SweepOutcome> {
    let lambda0 = if cfg.train.lambda > 0.0 { cfg.train.lambda } else { 1e-3 };
    lambda_sweep(target_pct, tolerance_pct, lambda0, max_trials, |lambda| {
        let trial = RunConfig { train: TrainConfig { lambda, ..cfg.train.clone() }, ..cfg.clone() };
        Ok(100.0 * classification_run::<T>(&trial)?.report.last().sparsity)
    })
}

fn finish(trials: Vec<Trial>, target_pct: f64, non_monotone: bool, converged: bool) -> SweepOutcome {
    let gap = |t: &Trial| {
        let penalty = if t.sparsity_pct >= DEGENERATE_PCT { 1e6 } else { 0.0 };
        (t.sparsity_pct - target_pct).abs() + penalty
    };
    let best =
        if converged { trials.last() } else { trials.iter().min_by(|a, b| gap(a).total_cmp(&gap(b))) }.cloned().expect("a trial ran");
    SweepOutcome { lambda: best.lambda, sparsity_pct: best.sparsity_pct, converged, non_monotone, trials }
}
