//! Plain dense SGD for a bias-free ReLU MLP, written with explicit loops.
//!
//! It shares no code with the library trainer. The batch order comes from
//! the same seeded shuffle, and every sum runs in the same order, so with
//! thresholds at zero both must agree bit for bit.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct ReferenceMlp {
    /// Row-major `[out, in]` weights per layer.
    pub weights: Vec<Vec<f64>>,
    pub dims: Vec<usize>,
    velocity: Vec<Vec<f64>>,
}

pub struct Schedule {
    pub base_lr: f64,
    pub momentum: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub seed: u64,
}

fn lr_at(step: usize, total: usize, warmup: usize, base: f64) -> f64 {
    if step < warmup {
        base * step as f64 / warmup as f64
    } else {
        let t = (step - warmup) as f64 / (total - warmup) as f64;
        0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

impl ReferenceMlp {
    pub fn new(weights: Vec<Vec<f64>>, dims: Vec<usize>) -> Self {
        let velocity = weights.iter().map(|w| vec![0.0; w.len()]).collect();
        Self { weights, dims, velocity }
    }

    /// Input and every layer output (after ReLU on hidden layers) for `n` rows.
    fn activations(&self, x: &[f64], n: usize) -> Vec<Vec<f64>> {
        let layers = self.weights.len();
        let mut acts = vec![x.to_vec()];
        for l in 0..layers {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let a = &acts[l];
            let w = &self.weights[l];
            let mut z = vec![0.0; n * dout];
            for i in 0..n {
                for j in 0..dout {
                    let mut acc = 0.0;
                    for p in 0..din {
                        acc += a[i * din + p] * w[j * din + p];
                    }
                    z[i * dout + j] = acc;
                }
            }
            if l + 1 < layers {
                for v in &mut z {
                    if !(*v > 0.0) {
                        *v = 0.0;
                    }
                }
            }
            acts.push(z);
        }
        acts
    }

    pub fn logits(&self, x: &[f64], n: usize) -> Vec<f64> {
        self.activations(x, n).pop().unwrap()
    }

    /// Gradients of the mean cross-entropy over one batch.
    fn gradients(&self, x: &[f64], labels: &[usize]) -> Vec<Vec<f64>> {
        let n = labels.len();
        let layers = self.weights.len();
        let acts = self.activations(x, n);
        let c = self.dims[layers];
        let logits = &acts[layers];
        let inv_n = 1.0 / n as f64;
        let mut delta = vec![0.0; n * c];
        for i in 0..n {
            let row = &logits[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &v in row {
                denom += (v - max).exp();
            }
            let log_denom = denom.ln();
            for j in 0..c {
                let p = (row[j] - max - log_denom).exp();
                let t = if j == labels[i] { 1.0 } else { 0.0 };
                delta[i * c + j] = (p - t) * inv_n;
            }
        }
        let mut grads = vec![Vec::new(); layers];
        for l in (0..layers).rev() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let a = &acts[l];
            let w = &self.weights[l];
            let mut gw = vec![0.0; dout * din];
            for j in 0..dout {
                for p in 0..din {
                    let mut acc = 0.0;
                    for i in 0..n {
                        acc += delta[i * dout + j] * a[i * din + p];
                    }
                    gw[j * din + p] = acc;
                }
            }
            grads[l] = gw;
            if l > 0 {
                let mut prev = vec![0.0; n * din];
                for i in 0..n {
                    for p in 0..din {
                        let mut acc = 0.0;
                        for j in 0..dout {
                            acc += delta[i * dout + j] * w[j * din + p];
                        }
                        prev[i * din + p] = if a[i * din + p] > 0.0 { acc } else { 0.0 };
                    }
                }
                delta = prev;
            }
        }
        grads
    }

    /// Runs `steps` optimizer steps and returns the weights after each.
    pub fn train(&mut self, x: &[f64], labels: &[usize], sched: &Schedule, steps: usize) -> Vec<Vec<Vec<f64>>> {
        let n = labels.len();
        let din = self.dims[0];
        let per_epoch = n.div_ceil(sched.batch_size);
        let total = per_epoch * sched.epochs;
        let warmup = per_epoch * sched.warmup_epochs;
        let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
        let mut order: Vec<usize> = (0..n).collect();
        let mut snapshots = Vec::new();
        let mut step = 0;
        'outer: for _ in 0..sched.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(sched.batch_size) {
                if step == steps {
                    break 'outer;
                }
                let bx: Vec<f64> = chunk.iter().flat_map(|&i| x[i * din..(i + 1) * din].iter().copied()).collect();
                let by: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let grads = self.gradients(&bx, &by);
                let lr = lr_at(step, total, warmup, sched.base_lr);
                for ((w, v), g) in self.weights.iter_mut().zip(&mut self.velocity).zip(&grads) {
                    for k in 0..w.len() {
                        v[k] = sched.momentum * v[k] + (g[k] + sched.lambda * w[k]);
                        w[k] -= lr * v[k];
                    }
                }
                snapshots.push(self.weights.clone());
                step += 1;
            }
        }
        snapshots
    }
}

/// Trains a small blob MLP with frozen zero thresholds through the library
/// and through [`ReferenceMlp`], and reports the first step where the
/// weights differ in any bit.
pub fn dense_limit_mismatch(steps: usize) -> Option<String> {
    use strsparse::data::{gaussian_blobs, Targets};
    use strsparse::train::train_with;
    use strsparse::{Network, Sequential, StrSetup, TrainConfig};

    let (dim, hidden, classes) = (6, [12, 8], 3);
    let data = gaussian_blobs::<f64>(80, dim, classes, 2.0, 11);
    let cfg = TrainConfig {
        lambda: 1e-3,
        base_lr: 0.05,
        momentum: 0.9,
        batch_size: 16,
        epochs: 3,
        warmup_epochs: 1,
        seed: 5,
        freeze_thresholds: true,
        ..TrainConfig::default()
    };
    let mut model = Sequential::mlp(dim, &hidden, classes, StrSetup::dense(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let n_weights = hidden.len() + 1;
    let initial: Vec<Vec<f64>> = model.params()[..n_weights].iter().map(|t| t.data().to_vec()).collect();

    let mut snapshots = Vec::new();
    train_with(&mut model, &data, &cfg, |m, _| {
        snapshots.push(m.params()[..n_weights].iter().map(|t| t.data().to_vec()).collect::<Vec<_>>());
        Ok(())
    })
    .unwrap();

    let Targets::Classes(labels) = &data.targets else {
        return Some("blobs are unlabelled".into());
    };
    let mut reference = ReferenceMlp::new(initial.clone(), vec![dim, hidden[0], hidden[1], classes]);
    let sched = Schedule {
        base_lr: cfg.base_lr,
        momentum: cfg.momentum,
        lambda: cfg.lambda,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        warmup_epochs: cfg.warmup_epochs,
        seed: cfg.seed,
    };
    let expected = reference.train(data.inputs.data(), labels, &sched, steps);
    if expected.len() < steps || snapshots.len() < steps {
        return Some(format!("schedule shorter than {steps} steps"));
    }
    for (step, (got, want)) in snapshots.iter().zip(&expected).enumerate() {
        for (l, (g, w)) in got.iter().zip(want).enumerate() {
            if !g.iter().zip(w).all(|(a, b)| a.to_bits() == b.to_bits()) {
                return Some(format!("step {step}, layer {l}"));
            }
        }
    }
    if snapshots[steps - 1] == initial {
        return Some("weights never moved".into());
    }
    None
}
