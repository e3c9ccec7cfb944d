//! End-to-end classification runs on synthetic or IDX data.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::budget::{report_from_counts, BudgetReport};
use crate::checkpoint::Checkpoint;
use crate::data::{gaussian_blobs, load_idx_dataset, pattern_images, Dataset, PATTERN_CLASSES};
use crate::error::{Error, Result};
use crate::experiments::config::{ModelKind, RunConfig, Task};
use crate::experiments::transfer::{budget_transfer_run, train_with_budget, uniform_budget};
use crate::network::{Network, Sequential, StrSetup};
use crate::scalar::Scalar;
use crate::train::{evaluate, train, TrainConfig, TrainReport};

#[derive(Debug, Clone)]
pub struct ClassificationOutcome<T> {
    pub report: TrainReport,
    pub budget: BudgetReport,
    pub test_loss: f64,
    pub test_acc: f64,
    pub model: Sequential<T>,
}

/// Train and test splits for the configured task.
pub fn load_task<T: Scalar>(cfg: &RunConfig) -> Result<(Dataset<T>, Dataset<T>)> {
    let d = &cfg.data;
    let n = d.n_train + d.n_test;
    let synthetic_patterns = || pattern_images::<T>(n, d.image_size, d.noise, d.seed).split(d.n_train);
    match d.task {
        Task::Blobs => Ok(gaussian_blobs::<T>(n, d.dim, d.classes, d.separation, d.seed).split(d.n_train)),
        Task::Patterns => Ok(synthetic_patterns()),
        Task::Idx => {
            let paths = [&d.train_images, &d.train_labels, &d.test_images, &d.test_labels];
            let missing: Vec<String> = paths.iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
            if !missing.is_empty() {
                if d.synthetic_fallback {
                    return Ok(synthetic_patterns());
                }
                return Err(Error::Dataset(format!(
                    "IDX files not found: {}. Expected data.train_images, data.train_labels, data.test_images and data.test_labels; set data.synthetic_fallback = true to use the synthetic pattern task instead",
                    missing.join(", ")
                )));
            }
            let train = load_idx_dataset(&d.train_images, &d.train_labels)?;
            let test = load_idx_dataset(&d.test_images, &d.test_labels)?;
            Ok((train, test))
        }
    }
}

/// Builds the configured model for samples of `sample_shape`.
pub fn build_model<T: Scalar>(cfg: &RunConfig, sample_shape: &[usize], classes: usize, setup: StrSetup<T>) -> Result<Sequential<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    match cfg.model.kind {
        ModelKind::Mlp => Sequential::mlp(sample_shape.iter().product(), &cfg.model.hidden, classes, setup, &mut rng),
        ModelKind::Cnn => {
            let &[1, h, w] = sample_shape else {
                return Err(Error::Shape(format!("cnn expects [1, H, W] samples, got {sample_shape:?}")));
            };
            if h != w {
                return Err(Error::Shape(format!("cnn expects square images, got {h}x{w}")));
            }
            Sequential::cnn(h, classes, setup, cfg.model.channel_prune, &mut rng)
        }
    }
}

fn flatten<T: Scalar>(data: Dataset<T>) -> Result<Dataset<T>> {
    let n = data.len();
    let per: usize = data.sample_shape().iter().product();
    let inputs = data.inputs.reshape(&[n, per])?;
    Dataset::new(inputs, data.targets, data.num_classes)
}

struct Prepared<T> {
    train: Dataset<T>,
    test: Dataset<T>,
    classes: usize,
    sample_shape: Vec<usize>,
}

fn prepare<T: Scalar>(cfg: &RunConfig) -> Result<Prepared<T>> {
    let (mut train, mut test) = load_task::<T>(cfg)?;
    if cfg.model.kind == ModelKind::Mlp && train.sample_shape().len() > 1 {
        train = flatten(train)?;
        test = flatten(test)?;
    }
    let classes = match cfg.data.task {
        Task::Blobs => cfg.data.classes,
        Task::Patterns => PATTERN_CLASSES,
        Task::Idx => train.num_classes.max(test.num_classes),
    };
    let sample_shape = train.sample_shape().to_vec();
    Ok(Prepared { train, test, classes, sample_shape })
}

/// Thresholds for a run of `cfg`; a budget transfer trains dense weights.
fn run_setup<T: Scalar>(cfg: &RunConfig) -> StrSetup<T> {
    match cfg.transfer.budget_csv {
        Some(_) => StrSetup::dense(),
        None => StrSetup::new(cfg.model.granularity, cfg.model.threshold(), T::lit(cfg.train.s_init)),
    }
}

/// Trains the configured model and reports trajectory, learnt budget and
/// test accuracy. With `transfer.budget_csv` set, the thresholds stay at
/// zero and the imported budget is enforced by magnitude pruning instead.
pub fn classification_run<T: Scalar>(cfg: &RunConfig) -> Result<ClassificationOutcome<T>> {
    cfg.validate()?;
    let p = prepare::<T>(cfg)?;
    let mut model = build_model(cfg, &p.sample_shape, p.classes, run_setup(cfg))?;
    let report = match &cfg.transfer.budget_csv {
        Some(csv) => {
            let tc = TrainConfig { lambda: cfg.transfer.weight_decay, ..cfg.train.clone() };
            budget_transfer_run(csv, &mut model, &p.train, &tc)?
        }
        None => train(&mut model, &p.train, &cfg.train)?,
    };
    let (test_loss, test_acc) = if p.test.is_empty() { (f64::NAN, f64::NAN) } else { evaluate(&model, &p.test, cfg.train.batch_size)? };
    let budget = learnt_budget(&mut model)?;
    Ok(ClassificationOutcome { report, budget, test_loss, test_acc, model })
}

/// The model of a finished run of `cfg`, loaded from its checkpoint.
pub fn restore_classifier<T: Scalar>(cfg: &RunConfig, ckpt: &Checkpoint<T>) -> Result<Sequential<T>> {
    cfg.validate()?;
    let p = prepare::<T>(cfg)?;
    let mut model = build_model(cfg, &p.sample_shape, p.classes, run_setup(cfg))?;
    model.restore(ckpt)?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BudgetComparison {
    /// Test accuracy of the thresholded run that learnt the budget.
    pub str_acc: f64,
    /// Learnt per-layer sparsity in percent.
    pub learnt: Vec<f64>,
    /// Uniform per-layer sparsity at the same overall sparsity.
    pub uniform_pct: f64,
    pub learnt_acc: f64,
    pub uniform_acc: f64,
}

/// Learns a per-layer budget with `cfg`, then retrains from scratch under
/// that budget and under the uniform budget of equal overall sparsity.
pub fn compare_budgets<T: Scalar>(cfg: &RunConfig) -> Result<BudgetComparison> {
    let learnt_run = classification_run::<T>(cfg)?;
    let report = &learnt_run.report;
    let learnt = report.layer_sparsity_pct(report.epochs.len() - 1);
    let uniform = uniform_budget(&learnt, &report.layer_sizes);
    let p = prepare::<T>(cfg)?;
    let tc = TrainConfig { lambda: cfg.transfer.weight_decay, ..cfg.train.clone() };
    let mut accs = [0.0; 2];
    for (acc, budget) in accs.iter_mut().zip([&learnt, &uniform]) {
        let mut model = build_model(cfg, &p.sample_shape, p.classes, StrSetup::dense())?;
        train_with_budget(&mut model, budget, &p.train, &tc)?;
        *acc = evaluate(&model, &p.test, cfg.train.batch_size)?.1;
    }
    Ok(BudgetComparison { str_acc: learnt_run.test_acc, uniform_pct: uniform[0], learnt, learnt_acc: accs[0], uniform_acc: accs[1] })
}

/// Budget report from the model's current non-zero counts.
pub fn learnt_budget<T: Scalar, N: Network<T>>(model: &mut N) -> Result<BudgetReport> {
    let counts: HashMap<String, usize> = model.layer_states()?.into_iter().map(|s| (s.name, s.nonzeros)).collect();
    report_from_counts(&model.architecture()?, &counts)
}
