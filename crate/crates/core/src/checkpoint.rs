//! Checkpoints: a JSON map from layer name to weights and threshold state.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::threshold::{nnz, str_forward, Granularity, StrParam, ThresholdFn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"), deny_unknown_fields)]
pub struct LayerEntry<T> {
    #[serde(rename = "W")]
    pub weight: Tensor<T>,
    /// Filter importances of a channel-pruned convolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance: Option<Tensor<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Tensor<T>>,
    #[serde(rename = "fn", default, skip_serializing_if = "Option::is_none")]
    pub func: Option<ThresholdFn<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granularity: Option<Granularity>,
}

impl<T: Scalar> LayerEntry<T> {
    pub fn dense(weight: Tensor<T>) -> Self {
        Self { weight, importance: None, s: None, func: None, granularity: None }
    }

    pub fn thresholded(weight: Tensor<T>, importance: Option<Tensor<T>>, p: &StrParam<T>) -> Self {
        Self { weight, importance, s: Some(p.s.clone()), func: Some(p.func), granularity: Some(p.granularity) }
    }

    /// The threshold parameter stored with this entry.
    pub fn threshold(&self, name: &str) -> Result<StrParam<T>> {
        match (&self.s, self.func, self.granularity) {
            (Some(s), Some(func), Some(granularity)) => Ok(StrParam { granularity, s: s.clone(), func }),
            _ => Err(Error::Config(format!("checkpoint layer `{name}` has no threshold"))),
        }
    }

    /// Tensor the threshold acts on.
    pub fn thresholded_tensor(&self) -> &Tensor<T> {
        self.importance.as_ref().unwrap_or(&self.weight)
    }

    pub(crate) fn load_into(&self, name: &str, weight: &mut Tensor<T>, importance: Option<&mut Tensor<T>>) -> Result<()> {
        copy_checked(name, &self.weight, weight)?;
        match (importance, &self.importance) {
            (Some(dst), Some(src)) => copy_checked(name, src, dst),
            (None, None) => Ok(()),
            _ => Err(Error::Config(format!("checkpoint layer `{name}` importance mismatch"))),
        }
    }
}

pub(crate) fn copy_checked<T: Scalar>(name: &str, src: &Tensor<T>, dst: &mut Tensor<T>) -> Result<()> {
    if src.shape() != dst.shape() {
        return Err(Error::Shape(format!("checkpoint layer `{name}` has shape {:?}, model expects {:?}", src.shape(), dst.shape())));
    }
    *dst = src.clone();
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"), deny_unknown_fields)]
pub struct Checkpoint<T> {
    pub model: String,
    pub layers: BTreeMap<String, LayerEntry<T>>,
}

/// Per-layer summary printed by `inspect-checkpoint`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSummary {
    pub name: String,
    pub shape: Vec<usize>,
    pub granularity: Option<Granularity>,
    pub mean_alpha: Option<f64>,
    pub nonzeros: usize,
    pub total: usize,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(model: &str) -> Self {
        Self { model: model.to_string(), layers: BTreeMap::new() }
    }

    pub fn layer(&self, name: &str) -> Result<&LayerEntry<T>> {
        self.layers.get(name).ok_or_else(|| Error::Config(format!("checkpoint has no layer `{name}`")))
    }

    pub(crate) fn expect_model(&self, model: &str) -> Result<()> {
        if self.model != model {
            return Err(Error::Config(format!("checkpoint holds a `{}` model, expected `{model}`", self.model)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    /// Non-zero counts after thresholding, layer by layer.
    pub fn summary(&self) -> Result<Vec<LayerSummary>> {
        let mut out = Vec::new();
        for (name, entry) in &self.layers {
            let (mean_alpha, nonzeros) = match entry.threshold(name) {
                Ok(p) => {
                    let t = str_forward(entry.thresholded_tensor(), &p)?;
                    let nz = match &entry.importance {
                        Some(_) => {
                            let per = entry.weight.len() / entry.weight.shape()[0];
                            entry
                                .weight
                                .data()
                                .iter()
                                .enumerate()
                                .filter(|&(i, &w)| w != T::zero() && t.data()[i / per] != T::zero())
                                .count()
                        }
                        None => nnz(&t),
                    };
                    (Some(p.mean_alpha().as_f64()), nz)
                }
                Err(_) => (None, nnz(&entry.weight)),
            };
            out.push(LayerSummary {
                name: name.clone(),
                shape: entry.weight.shape().to_vec(),
                granularity: entry.granularity,
                mean_alpha,
                nonzeros,
                total: entry.weight.len(),
            });
        }
        Ok(out)
    }
}
