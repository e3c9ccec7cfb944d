//! Noiseless sparse linear regression `y = X w*` solved by training a
//! single thresholded weight vector.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::network::{Sequential, StrSetup};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::threshold::{str_forward, Granularity, ThresholdFn};
use crate::train::{train, TrainConfig};

/// Residual norm below which restricted least squares counts as reproducing `y`.
pub const IDENTIFIABILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SparseRegressionProblem {
    pub x: DMatrix<f64>,
    pub w_star: DVector<f64>,
    pub y: DVector<f64>,
    pub support: Vec<usize>,
    /// Seed actually used after skipping rank-deficient designs.
    pub seed: u64,
}

impl SparseRegressionProblem {
    /// Draws `X ~ N(0,1)^{n x d}` and `r` unit entries of `w*`. A design of
    /// rank below `min(n, d)` is redrawn with the next seed.
    pub fn generate(d: usize, n: usize, r: usize, seed: u64) -> Result<Self> {
        if r > d || n == 0 || d == 0 {
            return Err(Error::Config(format!("need 0 < n, 0 < d and r <= d (d={d}, n={n}, r={r})")));
        }
        for attempt in 0..16 {
            let seed = seed + attempt;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
            if x.rank(1e-9) < n.min(d) {
                continue;
            }
            let mut support = sample(&mut rng, d, r).into_vec();
            support.sort_unstable();
            let mut w_star = DVector::zeros(d);
            for &i in &support {
                w_star[i] = 1.0;
            }
            let y = &x * &w_star;
            return Ok(Self { x, w_star, y, support, seed });
        }
        Err(Error::Config(format!("no full-rank design found from seed {seed}")))
    }

    /// Residual of least squares restricted to the true support.
    pub fn oracle_residual(&self) -> f64 {
        if self.support.is_empty() {
            return self.y.norm();
        }
        let xs = self.x.select_columns(&self.support);
        let ws = xs.clone().svd(true, true).solve(&self.y, 1e-12).expect("svd solve");
        (xs * ws - &self.y).norm()
    }

    pub fn identifiable(&self) -> bool {
        self.oracle_residual() <= IDENTIFIABILITY_TOL
    }

    pub fn dataset<T: Scalar>(&self) -> Dataset<T> {
        let (n, d) = self.x.shape();
        let inputs = Tensor::from_fn(&[n, d], |i| T::lit(self.x[(i / d, i % d)]));
        let targets = Targets::Values(self.y.iter().map(|&v| T::lit(v)).collect());
        Dataset::new(inputs, targets, 0).expect("rows match targets")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of `recovered` against `truth`; two empty sets
/// score 1.
pub fn support_score(recovered: &[usize], truth: &[usize]) -> SupportScore {
    if recovered.is_empty() && truth.is_empty() {
        return SupportScore { precision: 1.0, recall: 1.0, f1: 1.0 };
    }
    let tp = recovered.iter().filter(|i| truth.contains(i)).count() as f64;
    let precision = if recovered.is_empty() { 0.0 } else { tp / recovered.len() as f64 };
    let recall = if truth.is_empty() { 0.0 } else { tp / truth.len() as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    SupportScore { precision, recall, f1 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRegressionOutcome {
    pub seed: u64,
    pub support: Vec<usize>,
    pub recovered: Vec<usize>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub nnz: usize,
    pub identifiable: bool,
    /// Final `||w~ - w*||_2`.
    pub error: f64,
    pub final_loss: f64,
}

/// Model options of a regression run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionOptions {
    pub granularity: Granularity,
    /// Scale `k` of the sigmoid threshold `k * sigmoid(s)`.
    pub threshold_scale: f64,
    /// Standard deviation of the Gaussian weight initialisation.
    pub init_std: f64,
}

impl Default for RegressionOptions {
    fn default() -> Self {
        Self { granularity: Granularity::PerWeight, threshold_scale: 3.0, init_std: 0.01 }
    }
}

/// Full-batch training schedule that recovers the support at
/// `d=300, n=100, r=5`.
pub fn regression_train_config(n: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        lambda: 1e-2,
        // far below the init magnitudes so no weight starts pruned
        s_init: -20.0,
        base_lr: 0.1,
        momentum: 0.9,
        batch_size: n.max(1),
        epochs: 2000,
        warmup_epochs: 0,
        seed,
        freeze_thresholds: false,
    }
}

/// Threshold setup used for the regression weight vector.
pub fn regression_setup(opts: &RegressionOptions, cfg: &TrainConfig) -> StrSetup<f64> {
    StrSetup::new(opts.granularity, ThresholdFn::sigmoid(opts.threshold_scale), cfg.s_init)
}

/// Trains `w` with the half squared loss and scores the recovered support.
///
/// The weights start from a small Gaussian: at exactly zero every weight
/// would sit on the threshold and receive no gradient.
pub fn sparse_regression_run(d: usize, n: usize, r: usize, opts: &RegressionOptions, cfg: &TrainConfig) -> Result<SparseRegressionOutcome> {
    let problem = SparseRegressionProblem::generate(d, n, r, cfg.seed)?;
    let data = problem.dataset::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut model = Sequential::linear_regressor(d, regression_setup(opts, cfg), &mut rng)?;
    if let crate::network::Layer::Linear(l) = &mut model.layers[0] {
        l.weight = Tensor::from_fn(&[1, d], |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            opts.init_std * z
        });
    }
    let report = train(&mut model, &data, cfg)?;
    let (w, p) = match &model.layers[0] {
        crate::network::Layer::Linear(l) => (&l.weight, &model.thresholds[l.threshold]),
        _ => unreachable!("regressor is a single linear layer"),
    };
    let wt = str_forward(w, p)?;
    let recovered: Vec<usize> = (0..d).filter(|&i| wt.data()[i] != 0.0).collect();
    let score = support_score(&recovered, &problem.support);
    let error = wt.data().iter().zip(problem.w_star.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(SparseRegressionOutcome {
        seed: problem.seed,
        support: problem.support.clone(),
        nnz: recovered.len(),
        recovered,
        precision: score.precision,
        recall: score.recall,
        f1: score.f1,
        identifiable: problem.identifiable(),
        error,
        final_loss: report.last().loss,
    })
}

/// F1 at or above which a seed counts as recovered.
pub const RECOVERY_F1: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionSummary {
    pub d: usize,
    pub n: usize,
    pub r: usize,
    pub lambda: f64,
    pub runs: Vec<SparseRegressionOutcome>,
    /// Seeds passing the identifiability check.
    pub identifiable: usize,
    /// Identifiable seeds with F1 >= [`RECOVERY_F1`].
    pub recovered: usize,
    /// Mean F1 over identifiable seeds.
    pub mean_f1: f64,
}

/// Runs `seeds` and aggregates over the identifiable ones. Results are
/// ordered by seed.
pub fn sparse_regression_seeds(
    d: usize,
    n: usize,
    r: usize,
    seeds: &[u64],
    opts: &RegressionOptions,
    cfg: &TrainConfig,
) -> Result<RegressionSummary> {
    let mut seeds = seeds.to_vec();
    seeds.sort_unstable();
    let runs =
        seeds.iter().map(|&seed| sparse_regression_run(d, n, r, opts, &TrainConfig { seed, ..cfg.clone() })).collect::<Result<Vec<_>>>()?;
    let ok: Vec<&SparseRegressionOutcome> = runs.iter().filter(|o| o.identifiable).collect();
    let mean_f1 = if ok.is_empty() { 0.0 } else { ok.iter().map(|o| o.f1).sum::<f64>() / ok.len() as f64 };
    Ok(RegressionSummary {
        d,
        n,
        r,
        lambda: cfg.lambda,
        identifiable: ok.len(),
        recovered: ok.iter().filter(|o| o.f1 >= RECOVERY_F1).count(),
        mean_f1,
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaSearch {
    pub converged: bool,
    /// `(lambda, mean F1)` per trial.
    pub trials: Vec<(f64, f64)>,
    /// Best summary seen.
    pub best: RegressionSummary,
}

/// Tries `lambda0` and then geometric steps of 4 alternating above and
/// below it until the mean F1 reaches `target_f1`. F1 is not monotone in
/// `lambda` (too little decay keeps everything, too much prunes the
/// support), hence the outward search instead of a bisection.
#[allow(clippy::too_many_arguments)]
pub fn regression_lambda_search(
    d: usize,
    n: usize,
    r: usize,
    seeds: &[u64],
    opts: &RegressionOptions,
    cfg: &TrainConfig,
    target_f1: f64,
    max_trials: usize,
) -> Result<LambdaSearch> {
    if !(cfg.lambda > 0.0) {
        return Err(Error::Config("the lambda search needs a positive starting lambda".into()));
    }
    if max_trials == 0 {
        return Err(Error::Config("max_trials must be positive".into()));
    }
    let mut trials = Vec::new();
    let mut best: Option<RegressionSummary> = None;
    for t in 0..max_trials {
        let step = t.div_ceil(2) as i32;
        let sign = if t % 2 == 1 { 1 } else { -1 };
        let lambda = cfg.lambda * 4f64.powi(sign * step);
        let summary = sparse_regression_seeds(d, n, r, seeds, opts, &TrainConfig { lambda, ..cfg.clone() })?;
        trials.push((lambda, summary.mean_f1));
        let done = summary.mean_f1 >= target_f1;
        if best.as_ref().is_none_or(|b| summary.mean_f1 > b.mean_f1) {
            best = Some(summary);
        }
        if done {
            return Ok(LambdaSearch { converged: true, trials, best: best.expect("set above") });
        }
    }
    Ok(LambdaSearch { converged: false, trials, best: best.expect("at least one trial") })
}
