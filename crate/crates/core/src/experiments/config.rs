//! Run configuration documents (TOML) with `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::threshold::{Granularity, ThresholdFn, ThresholdKind};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Classification,
    LowrankRnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Mlp,
    Cnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Gaussian clusters, for the MLP.
    Blobs,
    /// Procedural stripe images, for the CNN.
    Patterns,
    /// IDX image/label files on disk.
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub granularity: Granularity,
    pub threshold_fn: ThresholdKind,
    /// `k` in `k * sigmoid(s)` or `k * exp(s)`.
    pub threshold_scale: f64,
    pub hidden: Vec<usize>,
    /// Threshold filter importances instead of individual weights (CNN only).
    pub channel_prune: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mlp,
            granularity: Granularity::PerLayer,
            threshold_fn: ThresholdKind::Sigmoid,
            threshold_scale: 1.0,
            hidden: vec![64, 64],
            channel_prune: false,
        }
    }
}

impl ModelSection {
    pub fn threshold<T: Scalar>(&self) -> ThresholdFn<T> {
        let k = T::lit(self.threshold_scale);
        match self.threshold_fn {
            ThresholdKind::Sigmoid => ThresholdFn::sigmoid(k),
            ThresholdKind::Exponential => ThresholdFn::exponential(k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub task: Task,
    pub n_train: usize,
    pub n_test: usize,
    /// Data seed; the training seed lives in `[train]`.
    pub seed: u64,
    pub dim: usize,
    pub classes: usize,
    pub separation: f64,
    pub image_size: usize,
    pub noise: f64,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Use the synthetic pattern task when the IDX files are missing.
    pub synthetic_fallback: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            task: Task::Blobs,
            n_train: 1024,
            n_test: 512,
            seed: 0,
            dim: 32,
            classes: 8,
            separation: 0.5,
            image_size: 12,
            noise: 1.0,
            train_images: PathBuf::from("data/train-images-idx3-ubyte"),
            train_labels: PathBuf::from("data/train-labels-idx1-ubyte"),
            test_images: PathBuf::from("data/t10k-images-idx3-ubyte"),
            test_labels: PathBuf::from("data/t10k-labels-idx1-ubyte"),
            synthetic_fallback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RnnSection {
    pub hidden_dim: usize,
    pub steps: usize,
    pub input_dim: usize,
    /// Dimension of the input subspace carrying the class signal.
    pub signal_dims: usize,
    pub classes: usize,
    pub strength: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub init_std: f64,
}

impl Default for RnnSection {
    fn default() -> Self {
        Self {
            hidden_dim: 16,
            steps: 8,
            input_dim: 16,
            signal_dims: 2,
            classes: 4,
            strength: 0.6,
            n_train: 512,
            n_test: 512,
            init_std: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSection {
    /// Per-layer budget CSV; when set, training uses fixed-budget magnitude
    /// pruning instead of learnt thresholds.
    pub budget_csv: Option<PathBuf>,
    /// Plain weight decay of budget-transfer runs, which replaces
    /// `train.lambda` there.
    pub weight_decay: f64,
}

impl Default for TransferSection {
    fn default() -> Self {
        Self { budget_csv: None, weight_decay: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub precision: Precision,
    /// Root for run directories; the CLI falls back to its environment
    /// default when unset.
    pub output_dir: Option<PathBuf>,
    pub train: TrainConfig,
    pub model: ModelSection,
    pub data: DataSection,
    pub rnn: RnnSection,
    pub transfer: TransferSection,
}

/// Desk-scale training defaults: thresholds start near zero (`s_init = -8`)
/// and a larger decay than the ImageNet-scale [`TrainConfig`] defaults makes
/// them grow within a few hundred steps.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig { lambda: 1e-2, s_init: -8.0, epochs: 20, warmup_epochs: 2, ..TrainConfig::default() }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Classification,
            precision: Precision::F64,
            output_dir: None,
            train: desk_train_config(),
            model: ModelSection::default(),
            data: DataSection::default(),
            rnn: RnnSection::default(),
            transfer: TransferSection::default(),
        }
    }
}

const SECTIONS: [&str; 5] = ["train", "model", "data", "rnn", "transfer"];
const TOP_LEVEL: [&str; 3] = ["experiment", "precision", "output_dir"];

impl RunConfig {
    /// Parses a config document and applies `key=value` overrides on top.
    pub fn parse(text: &str, source: &str, overrides: &[String]) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("{source}: {}", e.message())))?;
        let mut doc = defaults_table();
        merge(&mut doc, user);
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = doc.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{source}: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::parse(&text, &path.display().to_string(), overrides)
    }

    /// Defaults with overrides applied.
    pub fn with_overrides(overrides: &[String]) -> Result<Self> {
        Self::parse("", "<defaults>", overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.data.n_train == 0 {
            return fail("data.n_train must be positive");
        }
        if !(self.model.threshold_scale > 0.0 && self.model.threshold_scale.is_finite()) {
            return fail("model.threshold_scale must be positive");
        }
        if self.model.channel_prune && self.model.kind != ModelKind::Cnn {
            return fail("model.channel_prune needs model.kind = \"cnn\"");
        }
        if self.model.kind == ModelKind::Mlp && self.data.task == Task::Patterns {
            return fail("the patterns task needs model.kind = \"cnn\"");
        }
        if self.model.kind == ModelKind::Cnn && self.data.task == Task::Blobs {
            return fail("the blobs task needs model.kind = \"mlp\"");
        }
        if !(self.transfer.weight_decay >= 0.0 && self.transfer.weight_decay.is_finite()) {
            return fail("transfer.weight_decay must be a finite value >= 0");
        }
        if self.rnn.hidden_dim == 0 || self.rnn.steps == 0 || self.rnn.input_dim == 0 {
            return fail("rnn dimensions must be positive");
        }
        if self.rnn.signal_dims > self.rnn.input_dim {
            return fail("rnn.signal_dims exceeds rnn.input_dim");
        }
        Ok(())
    }
}

/// Applies `key=value` to a config document. A bare key resolves to the one
/// section that defines it; the value is read as a TOML literal, falling
/// back to a plain string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let value = parse_value(raw.trim());
    let path: Vec<String> = match key.split_once('.') {
        Some((section, field)) => vec![section.to_string(), field.to_string()],
        None if TOP_LEVEL.contains(&key) => vec![key.to_string()],
        None => vec![resolve_section(key)?, key.to_string()],
    };
    if let [section, field] = &path[..] {
        if !SECTIONS.contains(&section.as_str()) {
            return Err(Error::Config(format!("unknown section {section:?} in override {key:?}")));
        }
        let entry = doc.entry(section.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let table = entry.as_table_mut().ok_or_else(|| Error::Config(format!("{section} is not a table")))?;
        table.insert(field.clone(), value);
    } else {
        doc.insert(path[0].clone(), value);
    }
    Ok(())
}

fn defaults_table() -> toml::Table {
    toml::Table::try_from(RunConfig::default()).expect("defaults serialize")
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn resolve_section(key: &str) -> Result<String> {
    let defaults = defaults_table();
    let mut owners: Vec<&str> =
        SECTIONS.iter().copied().filter(|s| defaults.get(*s).and_then(|t| t.as_table()).is_some_and(|t| t.contains_key(key))).collect();
    // optional fields are absent from the serialized defaults
    if owners.is_empty() && key == "budget_csv" {
        owners.push("transfer");
    }
    match owners[..] {
        [one] => Ok(one.to_string()),
        [] => Err(Error::Config(format!("unknown config key {key:?}"))),
        _ => Err(Error::Config(format!("key {key:?} is ambiguous between sections {}; use section.{key}", owners.join(", ")))),
    }
}
