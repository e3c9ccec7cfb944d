//! Parameter, non-zero and FLOP accounting.
//!
//! One multiply-add counts as one FLOP and normalisation layers are ignored.
//! A layer at sparsity `s` percent costs `(100 - s) / 100 * FLOPs` of its
//! dense count.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv,
    DepthwiseConv,
    Fc,
    AvgPool,
}

/// Static description of one accounted layer.
///
/// For `avg-pool` the kernel is the pooling window and the channel count is
/// `in_channels`; every input element costs one FLOP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: u64,
    pub out_channels: u64,
    #[serde(default = "one")]
    pub kernel_h: u64,
    #[serde(default = "one")]
    pub kernel_w: u64,
    #[serde(default = "one")]
    pub stride: u64,
    #[serde(default)]
    pub padding: u64,
    #[serde(default = "one")]
    pub groups: u64,
    #[serde(default = "one")]
    pub output_h: u64,
    #[serde(default = "one")]
    pub output_w: u64,
}

fn one() -> u64 {
    1
}

impl LayerSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn conv(name: &str, cin: u64, cout: u64, k: u64, stride: u64, padding: u64, groups: u64, out: u64) -> Self {
        Self {
            name: name.to_string(),
            kind: if groups > 1 && groups == cin { LayerKind::DepthwiseConv } else { LayerKind::Conv },
            in_channels: cin,
            out_channels: cout,
            kernel_h: k,
            kernel_w: k,
            stride,
            padding,
            groups,
            output_h: out,
            output_w: out,
        }
    }

    pub fn fc(name: &str, cin: u64, cout: u64) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Fc,
            in_channels: cin,
            out_channels: cout,
            kernel_h: 1,
            kernel_w: 1,
            stride: 1,
            padding: 0,
            groups: 1,
            output_h: 1,
            output_w: 1,
        }
    }

    /// Global average pool over a `window x window` map of `channels`.
    pub fn avg_pool(name: &str, channels: u64, window: u64) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::AvgPool,
            in_channels: channels,
            out_channels: channels,
            kernel_h: window,
            kernel_w: window,
            stride: window,
            padding: 0,
            groups: 1,
            output_h: 1,
            output_w: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("layer `{}`: {m}", self.name)));
        if self.groups == 0 || !self.in_channels.is_multiple_of(self.groups) {
            return bad("in_channels must be divisible by groups");
        }
        if self.kind == LayerKind::DepthwiseConv && self.groups != self.in_channels {
            return bad("depthwise convolution needs groups == in_channels");
        }
        if self.output_h == 0 || self.output_w == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return bad("sizes must be positive");
        }
        Ok(())
    }

    pub fn params(&self) -> u64 {
        match self.kind {
            LayerKind::Conv | LayerKind::DepthwiseConv => {
                self.kernel_h * self.kernel_w * (self.in_channels / self.groups) * self.out_channels
            }
            LayerKind::Fc => self.in_channels * self.out_channels,
            LayerKind::AvgPool => 0,
        }
    }

    pub fn dense_flops(&self) -> u64 {
        match self.kind {
            LayerKind::AvgPool => self.kernel_h * self.kernel_w * self.in_channels * self.output_h * self.output_w,
            _ => self.output_h * self.output_w * self.params(),
        }
    }
}

/// How the pooling rows enter an aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolTerm {
    Added,
    Omitted,
}

impl PoolTerm {
    fn apply(self, acc: f64, pool_flops: f64) -> f64 {
        match self {
            PoolTerm::Added => acc + pool_flops,
            PoolTerm::Omitted => acc,
        }
    }
}

/// Aggregation convention for pooling FLOPs in the overall and backbone
/// totals. The reference ResNet50 overall total counts the final pool while
/// the MobileNetV1 one does not, so each architecture carries its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolAccounting {
    pub overall: PoolTerm,
    pub backbone: PoolTerm,
}

impl Default for PoolAccounting {
    fn default() -> Self {
        Self { overall: PoolTerm::Added, backbone: PoolTerm::Added }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub name: String,
    #[serde(default)]
    pub pool_accounting: PoolAccounting,
    #[serde(rename = "layer")]
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Parses the TOML layout used for user-defined networks.
    pub fn from_toml(text: &str, source: &str) -> Result<Self> {
        let arch: Architecture = toml::from_str(text).map_err(|e| Error::Parse {
            path: source.to_string(),
            line: e.span().map(|s| text[..s.start.min(text.len())].lines().count().max(1)).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        arch.validate()?;
        Ok(arch)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("architecture serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config(format!("architecture `{}` has no layers", self.name)));
        }
        let mut seen = HashMap::new();
        for l in &self.layers {
            l.validate()?;
            if seen.insert(l.name.as_str(), ()).is_some() {
                return Err(Error::Config(format!("duplicate layer name `{}`", l.name)));
            }
        }
        Ok(())
    }

    /// Index of the classifier excluded from the backbone: the last fc layer.
    pub fn classifier_index(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| l.kind == LayerKind::Fc)
    }

    pub fn names(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.name.clone()).collect()
    }
}

fn bottleneck_stage(layers: &mut Vec<LayerSpec>, stage: usize, blocks: usize, inplanes: &mut u64, width: u64, in_size: u64, stride: u64) {
    let out_size = in_size / stride;
    for b in 0..blocks {
        let s = if b == 0 { stride } else { 1 };
        let pre = format!("layer{stage}.{b}");
        let size_in = if b == 0 { in_size } else { out_size };
        layers.push(LayerSpec::conv(&format!("{pre}.conv1"), *inplanes, width, 1, 1, 0, 1, size_in));
        layers.push(LayerSpec::conv(&format!("{pre}.conv2"), width, width, 3, s, 1, 1, out_size));
        layers.push(LayerSpec::conv(&format!("{pre}.conv3"), width, width * 4, 1, 1, 0, 1, out_size));
        if b == 0 {
            layers.push(LayerSpec::conv(&format!("{pre}.downsample.0"), *inplanes, width * 4, 1, s, 0, 1, out_size));
        }
        *inplanes = width * 4;
    }
}

/// ResNet50 at 224x224 input with the stride on the 3x3 convolution of
/// each bottleneck.
pub fn arch_resnet50() -> Architecture {
    let mut layers = vec![LayerSpec::conv("conv1", 3, 64, 7, 2, 3, 1, 112)];
    let mut inplanes = 64;
    bottleneck_stage(&mut layers, 1, 3, &mut inplanes, 64, 56, 1);
    bottleneck_stage(&mut layers, 2, 4, &mut inplanes, 128, 56, 2);
    bottleneck_stage(&mut layers, 3, 6, &mut inplanes, 256, 28, 2);
    bottleneck_stage(&mut layers, 4, 3, &mut inplanes, 512, 14, 2);
    layers.push(LayerSpec::fc("fc", 2048, 1000));
    layers.push(LayerSpec::avg_pool("avgpool", 2048, 7));
    Architecture {
        name: "resnet50".into(),
        pool_accounting: PoolAccounting { overall: PoolTerm::Added, backbone: PoolTerm::Omitted },
        layers,
    }
}

/// MobileNetV1 (width 1.0) at 224x224 input.
pub fn arch_mobilenetv1() -> Architecture {
    let mut layers = vec![LayerSpec::conv("layer1", 3, 32, 3, 2, 1, 1, 112)];
    let blocks: [(u64, u64, u64); 13] = [
        (32, 64, 1),
        (64, 128, 2),
        (128, 128, 1),
        (128, 256, 2),
        (256, 256, 1),
        (256, 512, 2),
        (512, 512, 1),
        (512, 512, 1),
        (512, 512, 1),
        (512, 512, 1),
        (512, 512, 1),
        (512, 1024, 2),
        (1024, 1024, 1),
    ];
    let mut size = 112;
    let mut idx = 2;
    for (cin, cout, stride) in blocks {
        size /= stride;
        layers.push(LayerSpec::conv(&format!("layer{idx}.dw"), cin, cin, 3, stride, 1, cin, size));
        layers.push(LayerSpec::conv(&format!("layer{}", idx + 1), cin, cout, 1, 1, 0, 1, size));
        idx += 2;
    }
    layers.push(LayerSpec::fc("layer28.fc", 1024, 1000));
    layers.push(LayerSpec::avg_pool("avgpool", 1024, 7));
    Architecture {
        name: "mobilenetv1".into(),
        pool_accounting: PoolAccounting { overall: PoolTerm::Omitted, backbone: PoolTerm::Omitted },
        layers,
    }
}

pub fn builtin(name: &str) -> Option<Architecture> {
    match name {
        "resnet50" => Some(arch_resnet50()),
        "mobilenetv1" => Some(arch_mobilenetv1()),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub layer: String,
    pub dense_params: u64,
    pub nonzeros: f64,
    pub sparsity_pct: f64,
    pub dense_flops: u64,
    pub sparse_flops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetTotals {
    pub dense_params: u64,
    pub nonzeros: f64,
    pub sparsity_pct: f64,
    pub dense_flops: u64,
    pub sparse_flops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetReport {
    pub architecture: String,
    pub rows: Vec<BudgetRow>,
    pub overall: BudgetTotals,
    pub backbone: BudgetTotals,
}

fn check_pct(name: &str, pct: f64) -> Result<()> {
    if !(0.0..=100.0).contains(&pct) {
        return Err(Error::Config(format!("sparsity {pct} for layer `{name}` outside [0, 100]")));
    }
    Ok(())
}

fn totals(rows: &[&BudgetRow], pool_rows: &[&BudgetRow], term: PoolTerm) -> BudgetTotals {
    let dense_params: u64 = rows.iter().map(|r| r.dense_params).sum();
    let nonzeros: f64 = rows.iter().map(|r| r.nonzeros).sum();
    let pool_dense: u64 = pool_rows.iter().map(|r| r.dense_flops).sum();
    let pool_sparse: f64 = pool_rows.iter().map(|r| r.sparse_flops).sum();
    let dense: u64 = rows.iter().map(|r| r.dense_flops).sum();
    let dense_flops = term.apply(dense as f64, pool_dense as f64) as u64;
    let sparse_flops = term.apply(rows.iter().map(|r| r.sparse_flops).sum(), pool_sparse);
    BudgetTotals {
        dense_params,
        nonzeros,
        sparsity_pct: if dense_params == 0 { 0.0 } else { 100.0 * (1.0 - nonzeros / dense_params as f64) },
        dense_flops,
        sparse_flops,
    }
}

fn assemble(arch: &Architecture, rows: Vec<BudgetRow>) -> BudgetReport {
    let classifier = arch.classifier_index();
    let is_pool = |i: usize| arch.layers[i].kind == LayerKind::AvgPool;
    let param_rows: Vec<&BudgetRow> = rows.iter().enumerate().filter(|(i, _)| !is_pool(*i)).map(|(_, r)| r).collect();
    let pool_rows: Vec<&BudgetRow> = rows.iter().enumerate().filter(|(i, _)| is_pool(*i)).map(|(_, r)| r).collect();
    let backbone_rows: Vec<&BudgetRow> =
        rows.iter().enumerate().filter(|(i, _)| !is_pool(*i) && Some(*i) != classifier).map(|(_, r)| r).collect();
    let overall = totals(&param_rows, &pool_rows, arch.pool_accounting.overall);
    let backbone = totals(&backbone_rows, &pool_rows, arch.pool_accounting.backbone);
    BudgetReport { architecture: arch.name.clone(), rows, overall, backbone }
}

/// Budget report from per-layer sparsity percentages (one per layer,
/// pooling rows included and required to be 0).
pub fn report(arch: &Architecture, sparsity_pcts: &[f64]) -> Result<BudgetReport> {
    if sparsity_pcts.len() != arch.layers.len() {
        return Err(Error::Config(format!("{} sparsity values for {} layers", sparsity_pcts.len(), arch.layers.len())));
    }
    let mut rows = Vec::with_capacity(arch.layers.len());
    for (spec, &pct) in arch.layers.iter().zip(sparsity_pcts) {
        check_pct(&spec.name, pct)?;
        let keep = (100.0 - pct) / 100.0;
        let dense_flops = spec.dense_flops();
        let (nonzeros, sparse_flops) = if spec.kind == LayerKind::AvgPool {
            (0.0, dense_flops as f64)
        } else {
            (spec.params() as f64 * keep, dense_flops as f64 * keep)
        };
        rows.push(BudgetRow {
            layer: spec.name.clone(),
            dense_params: spec.params(),
            nonzeros,
            sparsity_pct: pct,
            dense_flops,
            sparse_flops,
        });
    }
    Ok(assemble(arch, rows))
}

/// Report from measured non-zero counts, keyed by layer name. Pooling rows
/// need no entry.
pub fn report_from_counts(arch: &Architecture, nonzeros: &HashMap<String, usize>) -> Result<BudgetReport> {
    let mut pcts = Vec::with_capacity(arch.layers.len());
    for spec in &arch.layers {
        if spec.params() == 0 {
            pcts.push(0.0);
            continue;
        }
        let nnz = *nonzeros.get(&spec.name).ok_or_else(|| Error::UnmappedLayer(spec.name.clone()))?;
        pcts.push(100.0 * (1.0 - nnz as f64 / spec.params() as f64));
    }
    let mut rep = report(arch, &pcts)?;
    // exact counts instead of the percentage round trip
    for (row, spec) in rep.rows.iter_mut().zip(&arch.layers) {
        if spec.params() > 0 {
            row.nonzeros = nonzeros[&spec.name] as f64;
        }
    }
    Ok(assemble(arch, rep.rows))
}

pub const BUDGET_CSV_HEADER: &str = "layer,dense_params,nonzeros,sparsity_pct,dense_flops,sparse_flops";

/// Writes the per-layer rows as CSV.
pub fn write_budget_csv(report: &BudgetReport, mut out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in &report.rows {
        w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    let io = |e| Error::io("writing budget csv", e);
    writeln!(out, "{BUDGET_CSV_HEADER}").map_err(io)?;
    out.write_all(&body).map_err(io)?;
    Ok(())
}

pub fn export_budget(report: &BudgetReport, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_budget_csv(report, std::io::BufWriter::new(file))
}

/// Reads `(layer, sparsity_pct)` pairs from a budget CSV.
pub fn read_budget_csv(text: &str, source: &str) -> Result<Vec<(String, f64)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == BUDGET_CSV_HEADER => {}
        other => {
            return Err(Error::Parse {
                path: source.to_string(),
                line: 1,
                message: format!("expected header `{BUDGET_CSV_HEADER}`, found `{}`", other.unwrap_or("")),
            })
        }
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.deserialize::<BudgetRow>() {
        let row = rec.map_err(|e| Error::Parse {
            path: source.to_string(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        check_pct(&row.layer, row.sparsity_pct)?;
        out.push((row.layer, row.sparsity_pct));
    }
    Ok(out)
}

/// Sparsity percentages for `names`, in that order.
pub fn import_budget(path: &Path, names: &[String]) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let map: HashMap<String, f64> = read_budget_csv(&text, &path.display().to_string())?.into_iter().collect();
    names.iter().map(|n| map.get(n).copied().ok_or_else(|| Error::MissingLayer(n.clone()))).collect()
}

/// Like [`import_budget`] for an architecture; pooling rows default to 0.
pub fn import_budget_for(path: &Path, arch: &Architecture) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let map: HashMap<String, f64> = read_budget_csv(&text, &path.display().to_string())?.into_iter().collect();
    arch.layers
        .iter()
        .map(|l| match map.get(&l.name) {
            Some(&v) => Ok(v),
            None if l.params() == 0 => Ok(0.0),
            None => Err(Error::MissingLayer(l.name.clone())),
        })
        .collect()
}

/// Fixed-width table for terminals.
pub fn format_report(report: &BudgetReport) -> String {
    let mut s =
        format!("{:<28} {:>12} {:>14} {:>9} {:>14} {:>16}\n", "layer", "params", "nonzeros", "sparsity", "dense_flops", "sparse_flops");
    let mut line = |name: &str, p: u64, nz: f64, sp: f64, df: u64, sf: f64| {
        s.push_str(&format!("{name:<28} {p:>12} {nz:>14.0} {sp:>9.2} {df:>14} {sf:>16.0}\n"));
    };
    let o = &report.overall;
    line("Overall", o.dense_params, o.nonzeros, o.sparsity_pct, o.dense_flops, o.sparse_flops);
    let b = &report.backbone;
    line("Backbone", b.dense_params, b.nonzeros, b.sparsity_pct, b.dense_flops, b.sparse_flops);
    for r in &report.rows {
        line(&r.layer, r.dense_params, r.nonzeros, r.sparsity_pct, r.dense_flops, r.sparse_flops);
    }
    s
}
