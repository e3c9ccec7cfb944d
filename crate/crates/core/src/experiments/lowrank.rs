//! Low-rank FastGRNN with thresholded rank masks on a synthetic sequence task.

use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::data::{subspace_sequences, Dataset};
use crate::error::Result;
use crate::experiments::config::RunConfig;
use crate::fastgrnn::{FastGrnnConfig, LowRankFastGrnn};
use crate::network::Network;
use crate::scalar::Scalar;
use crate::train::{evaluate, train, TrainConfig, TrainReport};

#[derive(Debug, Clone, Serialize)]
pub struct LowRankOutcome<T> {
    pub seed: u64,
    pub accuracy: f64,
    /// Test accuracy of the same model trained with `lambda = 0`.
    pub baseline_accuracy: f64,
    pub rank_w: usize,
    pub rank_u: usize,
    pub full_rank_w: usize,
    pub full_rank_u: usize,
    /// `(r_W, r_U)` after every epoch.
    pub rank_trajectory: Vec<(usize, usize)>,
    #[serde(skip)]
    pub report: TrainReport,
    #[serde(skip)]
    pub model: LowRankFastGrnn<T>,
}

impl<T> LowRankOutcome<T> {
    /// Ranks at most half of the full ones.
    pub fn halved(&self) -> bool {
        2 * self.rank_w <= self.full_rank_w && 2 * self.rank_u <= self.full_rank_u
    }

    /// Neither rank grows after the first epoch.
    pub fn ranks_nonincreasing(&self) -> bool {
        self.rank_trajectory.windows(2).all(|w| w[1].0 <= w[0].0 && w[1].1 <= w[0].1)
    }
}

pub fn rnn_task<T: Scalar>(cfg: &RunConfig) -> (Dataset<T>, Dataset<T>) {
    let r = &cfg.rnn;
    subspace_sequences::<T>(r.n_train + r.n_test, r.steps, r.input_dim, r.signal_dims, r.classes, r.strength, cfg.data.seed)
        .split(r.n_train)
}

pub fn rnn_model<T: Scalar>(cfg: &RunConfig) -> LowRankFastGrnn<T> {
    let r = &cfg.rnn;
    let mut mc = FastGrnnConfig::new(r.input_dim, r.hidden_dim, r.classes);
    mc.s_init = T::lit(cfg.train.s_init);
    mc.init_std = r.init_std;
    LowRankFastGrnn::new(&mc, cfg.train.seed)
}

fn fit<T: Scalar>(cfg: &RunConfig, tc: &TrainConfig, data: &(Dataset<T>, Dataset<T>)) -> Result<(LowRankFastGrnn<T>, TrainReport, f64)> {
    let mut model = rnn_model::<T>(cfg);
    let report = train(&mut model, &data.0, tc)?;
    let (_, acc) = evaluate(&model, &data.1, tc.batch_size)?;
    Ok((model, report, acc))
}

/// Trains with the configured `lambda` and against a `lambda = 0` baseline.
pub fn lowrank_rnn_run<T: Scalar>(cfg: &RunConfig) -> Result<LowRankOutcome<T>> {
    cfg.validate()?;
    let data = rnn_task::<T>(cfg);
    let (model, report, accuracy) = fit(cfg, &cfg.train, &data)?;
    let baseline_cfg = TrainConfig { lambda: 0.0, ..cfg.train.clone() };
    let (_, _, baseline_accuracy) = fit(cfg, &baseline_cfg, &data)?;
    let (rank_w, rank_u) = model.effective_rank()?;
    let rank_trajectory = report.epochs.iter().map(|e| (e.nonzeros[0], e.nonzeros[1])).collect();
    Ok(LowRankOutcome {
        seed: cfg.train.seed,
        accuracy,
        baseline_accuracy,
        rank_w,
        rank_u,
        full_rank_w: cfg.rnn.input_dim,
        full_rank_u: cfg.rnn.hidden_dim,
        rank_trajectory,
        report,
        model,
    })
}

/// The model of a finished run of `cfg`, loaded from its checkpoint.
pub fn restore_rnn<T: Scalar>(cfg: &RunConfig, ckpt: &Checkpoint<T>) -> Result<LowRankFastGrnn<T>> {
    cfg.validate()?;
    let mut model = rnn_model::<T>(cfg);
    model.restore(ckpt)?;
    Ok(model)
}
