//! Central finite differences against the analytic layer gradients.
//!
//! Every instance draws weights, thresholds and inputs at random, then moves
//! weights away from the kinks so that `||w| - alpha| > MARGIN` holds for
//! every thresholded entry. Layers are probed through the scalar
//! `L = sum(c * y)` with a random `c`, so `grad_out = c`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use strsparse::data::Targets;
use strsparse::fastgrnn::{FastGrnnConfig, LowRankFastGrnn};
use strsparse::layers::{ChannelPrunedConv, StrConv, StrLinear};
use strsparse::tensor::Conv2dGeometry;
use strsparse::{Granularity, Network, StrParam, Tensor, ThresholdFn};

pub const MARGIN: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-5;
const H_LINEAR: f64 = 1e-4;
// 2h stays below MARGIN, also for s where |g'| < 1
const H_SMOOTH: f64 = 4e-4;
const REL_FLOOR: f64 = 1e-7;

pub const INSTANCES: usize = 100;

#[derive(Debug, Default, Clone, Copy)]
pub struct Stats {
    pub instances: usize,
    pub entries: usize,
    pub max_rel: f64,
}

impl Stats {
    fn record(&mut self, analytic: f64, numeric: f64) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        self.entries += 1;
        self.max_rel = self.max_rel.max(rel);
    }

    pub fn passed(&self) -> bool {
        self.instances >= INSTANCES && self.max_rel <= REL_TOL
    }
}

const GRANULARITIES: [Granularity; 4] = [Granularity::Global, Granularity::PerLayer, Granularity::PerChannel, Granularity::PerWeight];

fn random_fn(rng: &mut impl Rng, i: usize) -> ThresholdFn<f64> {
    // k stays above every drawn alpha so the sigmoid inverse exists
    let k = rng.random_range(1.0..2.0);
    if i.is_multiple_of(2) {
        ThresholdFn::sigmoid(k)
    } else {
        ThresholdFn::exponential(k)
    }
}

/// Threshold for weights of `shape` with every alpha drawn from `[lo, hi)`.
fn random_param(rng: &mut impl Rng, i: usize, shape: &[usize], lo: f64, hi: f64) -> StrParam<f64> {
    let func = random_fn(rng, i);
    let granularity = GRANULARITIES[(i / 2) % 4];
    let mut p = StrParam::new(granularity, shape, 0.0, func);
    for s in p.s.data_mut() {
        *s = func.inverse(rng.random_range(lo..hi));
    }
    p
}

fn alpha_at(p: &StrParam<f64>, i: usize, per_channel: usize) -> f64 {
    let slot = match p.granularity {
        Granularity::Global | Granularity::PerLayer => 0,
        Granularity::PerChannel => i / per_channel,
        Granularity::PerWeight => i,
    };
    p.func.eval(p.s.data()[slot])
}

/// Uniform entries in `(-1, 1)` kept out of the margin band around alpha.
fn margin_tensor(rng: &mut impl Rng, shape: &[usize], p: &StrParam<f64>) -> Tensor<f64> {
    let mut t = Tensor::zeros(shape);
    let per = t.len() / shape[0];
    for i in 0..t.len() {
        let a = alpha_at(p, i, per);
        t.data_mut()[i] = loop {
            let w: f64 = rng.random_range(-1.0..1.0);
            if (w.abs() - a).abs() > 2.0 * MARGIN {
                break w;
            }
        };
    }
    t
}

fn uniform(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Compares `analytic` entry by entry with the five-point central
/// difference of `perturb`. Every probe stays within `2h` of the original
/// point, inside the margin band.
fn probe(stats: &mut Stats, h: f64, analytic: &Tensor<f64>, len: usize, mut perturb: impl FnMut(usize, f64) -> f64) {
    for j in 0..len {
        let (p1, m1) = (perturb(j, h), perturb(j, -h));
        let (p2, m2) = (perturb(j, 2.0 * h), perturb(j, -2.0 * h));
        stats.record(analytic.data()[j], (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h));
    }
}

fn with_entry<M>(model: &mut M, get: impl Fn(&mut M) -> &mut f64, delta: f64, eval: impl Fn(&M) -> f64) -> f64 {
    let orig = *get(model);
    *get(model) = orig + delta;
    let v = eval(model);
    *get(model) = orig;
    v
}

pub fn linear(seed: u64) -> Stats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Stats::default();
    for i in 0..INSTANCES {
        let (n, fin, fout) = (rng.random_range(1..4), rng.random_range(1..7), rng.random_range(1..6));
        let p = random_param(&mut rng, i, &[fout, fin], 0.05, 0.6);
        let mut layer = StrLinear::new("fc", fin, fout, 0, &mut rng);
        layer.weight = margin_tensor(&mut rng, &[fout, fin], &p);
        let x = uniform(&mut rng, &[n, fin]);
        let c = uniform(&mut rng, &[n, fout]);
        let (_, wt) = layer.forward(&x, &p).unwrap();
        let g = layer.backward(&x, &wt, &c, &p).unwrap();
        let loss = |l: &StrLinear<f64>, p: &StrParam<f64>, x: &Tensor<f64>| dot(&l.forward(x, p).unwrap().0, &c);

        let mut lw = layer.clone();
        probe(&mut stats, H_LINEAR, &g.weight, lw.weight.len(), |j, d| {
            with_entry(&mut lw, |l| &mut l.weight.data_mut()[j], d, |l| loss(l, &p, &x))
        });
        let mut ps = p.clone();
        probe(&mut stats, H_LINEAR, &g.s, ps.s.len(), |j, d| with_entry(&mut ps, |p| &mut p.s.data_mut()[j], d, |p| loss(&layer, p, &x)));
        let mut xs = x.clone();
        probe(&mut stats, H_LINEAR, &g.input, xs.len(), |j, d| with_entry(&mut xs, |x| &mut x.data_mut()[j], d, |x| loss(&layer, &p, x)));
        stats.instances += 1;
    }
    stats
}

fn conv_instance(rng: &mut ChaCha8Rng, depthwise: bool) -> (StrConv<f64>, [usize; 4]) {
    let cin = rng.random_range(1..4);
    let (cout, groups) = if depthwise { (cin * rng.random_range(1..3), cin) } else { (rng.random_range(1..5), 1) };
    let k = rng.random_range(1..4);
    let stride = rng.random_range(1..3);
    let padding = rng.random_range(0..2);
    let hw = rng.random_range(k.max(2)..7);
    let n = rng.random_range(1..3);
    let conv = StrConv::new("conv", cin, cout, k, Conv2dGeometry::new(stride, padding, groups), 0, rng);
    (conv, [n, cin, hw, hw])
}

fn conv_suite(seed: u64, depthwise: bool) -> Stats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Stats::default();
    for i in 0..INSTANCES {
        let (mut layer, xshape) = conv_instance(&mut rng, depthwise);
        let wshape = layer.weight.shape().to_vec();
        let p = random_param(&mut rng, i, &wshape, 0.05, 0.6);
        layer.weight = margin_tensor(&mut rng, &wshape, &p);
        let x = uniform(&mut rng, &xshape);
        let (y, wt) = layer.forward(&x, &p).unwrap();
        let c = uniform(&mut rng, y.shape());
        let g = layer.backward(&x, &wt, &c, &p).unwrap();
        let loss = |l: &StrConv<f64>, p: &StrParam<f64>, x: &Tensor<f64>| dot(&l.forward(x, p).unwrap().0, &c);

        let mut lw = layer.clone();
        probe(&mut stats, H_LINEAR, &g.weight, lw.weight.len(), |j, d| {
            with_entry(&mut lw, |l| &mut l.weight.data_mut()[j], d, |l| loss(l, &p, &x))
        });
        let mut ps = p.clone();
        probe(&mut stats, H_LINEAR, &g.s, ps.s.len(), |j, d| with_entry(&mut ps, |p| &mut p.s.data_mut()[j], d, |p| loss(&layer, p, &x)));
        let mut xs = x.clone();
        probe(&mut stats, H_LINEAR, &g.input, xs.len(), |j, d| with_entry(&mut xs, |x| &mut x.data_mut()[j], d, |x| loss(&layer, &p, x)));
        stats.instances += 1;
    }
    stats
}

pub fn conv(seed: u64) -> Stats {
    conv_suite(seed, false)
}

pub fn depthwise(seed: u64) -> Stats {
    conv_suite(seed, true)
}

pub fn channel_prune(seed: u64) -> Stats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Stats::default();
    for i in 0..INSTANCES {
        let (conv, xshape) = conv_instance(&mut rng, i % 3 == 0);
        let cout = conv.weight.shape()[0];
        let p = random_param(&mut rng, i, &[cout], 0.05, 0.6);
        let importance = margin_tensor(&mut rng, &[cout], &p);
        let layer = ChannelPrunedConv::wrap(conv, importance).unwrap();
        let x = uniform(&mut rng, &xshape);
        let (y, _) = layer.forward(&x, &p).unwrap();
        let c = uniform(&mut rng, y.shape());
        let g = layer.backward(&x, &c, &p).unwrap();
        let g_imp = g.importance.clone().expect("importance gradient");
        let loss = |l: &ChannelPrunedConv<f64>, p: &StrParam<f64>, x: &Tensor<f64>| dot(&l.forward(x, p).unwrap().0, &c);

        let mut lw = layer.clone();
        probe(&mut stats, H_LINEAR, &g.weight, lw.weight.len(), |j, d| {
            with_entry(&mut lw, |l| &mut l.weight.data_mut()[j], d, |l| loss(l, &p, &x))
        });
        let mut li = layer.clone();
        probe(&mut stats, H_LINEAR, &g_imp, li.importance.len(), |j, d| {
            with_entry(&mut li, |l| &mut l.importance.data_mut()[j], d, |l| loss(l, &p, &x))
        });
        let mut ps = p.clone();
        probe(&mut stats, H_LINEAR, &g.s, ps.s.len(), |j, d| with_entry(&mut ps, |p| &mut p.s.data_mut()[j], d, |p| loss(&layer, p, &x)));
        let mut xs = x.clone();
        probe(&mut stats, H_LINEAR, &g.input, xs.len(), |j, d| with_entry(&mut xs, |x| &mut x.data_mut()[j], d, |x| loss(&layer, &p, x)));
        stats.instances += 1;
    }
    stats
}

/// Whole-sequence gradients of the low-rank cell under cross-entropy, for
/// every parameter including both threshold parameters.
pub fn rnn_cell(seed: u64) -> Stats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Stats::default();
    for i in 0..INSTANCES {
        let (d, h, classes) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(2..4));
        let (n, steps) = (rng.random_range(1..4), rng.random_range(1..4));
        let mut cfg = FastGrnnConfig::new(d, h, classes);
        cfg.func = random_fn(&mut rng, i);
        cfg.mask_granularity = GRANULARITIES[(i / 2) % 4];
        cfg.init_std = 0.5;
        let mut model = LowRankFastGrnn::<f64>::with_rng(&cfg, &mut rng);
        for p in [&mut model.p_w, &mut model.p_u] {
            let func = p.func;
            for s in p.s.data_mut() {
                *s = func.inverse(rng.random_range(0.05..0.6));
            }
        }
        model.m_w = margin_tensor(&mut rng, &[d], &model.p_w);
        model.m_u = margin_tensor(&mut rng, &[h], &model.p_u);
        for t in [&mut model.b_z, &mut model.b_h, &mut model.zeta, &mut model.nu, &mut model.c] {
            for v in t.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let x = uniform(&mut rng, &[n, steps, d]);
        let y = Targets::Classes((0..n).map(|_| rng.random_range(0..classes)).collect());
        let analytic = model.gradients(&x, &y).unwrap().grads;
        let loss = |m: &LowRankFastGrnn<f64>| m.gradients(&x, &y).unwrap().loss;
        for (k, g) in analytic.iter().enumerate() {
            let mut m = model.clone();
            probe(&mut stats, H_SMOOTH, g, g.len(), |j, delta| {
                with_entry(&mut m, |m| &mut m.params_mut().into_iter().nth(k).unwrap().data_mut()[j], delta, loss)
            });
        }
        stats.instances += 1;
    }
    stats
}
