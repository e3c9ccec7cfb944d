//! Datasets: seeded synthetic generators and an IDX file reader.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets<T> {
    Classes(Vec<usize>),
    Values(Vec<T>),
}

impl<T: Scalar> Targets<T> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        match self {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Inputs stacked along axis 0 with one target per sample.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub inputs: Tensor<T>,
    pub targets: Targets<T>,
    pub num_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(inputs: Tensor<T>, targets: Targets<T>, num_classes: usize) -> Result<Self> {
        if inputs.shape()[0] != targets.len() {
            return Err(Error::Dataset(format!("{} samples but {} targets", inputs.shape()[0], targets.len())));
        }
        Ok(Self { inputs, targets, num_classes })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Shape of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// Gathers the samples at `idx` into a batch.
    pub fn batch(&self, idx: &[usize]) -> (Tensor<T>, Targets<T>) {
        let per = self.inputs.len() / self.len();
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend_from_slice(self.inputs.outer_slice(i));
        }
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = idx.len();
        (Tensor::new(shape, data).expect("batch shape"), self.targets.select(idx))
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let (inputs, targets) = self.batch(idx);
        Self { inputs, targets, num_classes: self.num_classes }
    }

    /// First `n_train` samples and the rest.
    pub fn split(&self, n_train: usize) -> (Self, Self) {
        let all: Vec<usize> = (0..self.len()).collect();
        (self.subset(&all[..n_train]), self.subset(&all[n_train..]))
    }
}

fn normal<T: Scalar>(rng: &mut impl Rng) -> T {
    T::lit(StandardNormal.sample(rng))
}

fn shuffled_labels(n: usize, classes: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(rng);
    labels
}

/// Isotropic Gaussian clusters in `dim` dimensions with centres drawn at
/// scale `separation`.
pub fn gaussian_blobs<T: Scalar>(n: usize, dim: usize, classes: usize, separation: f64, seed: u64) -> Dataset<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..classes).map(|_| (0..dim).map(|_| separation * normal::<f64>(&mut rng)).collect()).collect();
    let labels = shuffled_labels(n, classes, &mut rng);
    let mut data = Vec::with_capacity(n * dim);
    for &c in &labels {
        for &mu in &centres[c] {
            data.push(T::lit(mu + normal::<f64>(&mut rng)));
        }
    }
    Dataset::new(Tensor::new(vec![n, dim], data).unwrap(), Targets::Classes(labels), classes).unwrap()
}

pub const PATTERN_CLASSES: usize = 4;

/// Single-channel `size x size` images of four stripe/checker families with
/// random period, phase and additive noise.
pub fn pattern_images<T: Scalar>(n: usize, size: usize, noise: f64, seed: u64) -> Dataset<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = shuffled_labels(n, PATTERN_CLASSES, &mut rng);
    let mut data = Vec::with_capacity(n * size * size);
    for &c in &labels {
        let period = rng.random_range(3..=5) as f64;
        let phase = rng.random_range(0.0..period);
        let amp = rng.random_range(0.6..1.2);
        for y in 0..size {
            for x in 0..size {
                let (yf, xf) = (y as f64, x as f64);
                let wave = |t: f64| (2.0 * std::f64::consts::PI * (t + phase) / period).sin();
                let v = match c {
                    0 => wave(yf),
                    1 => wave(xf),
                    2 => wave((xf + yf) / std::f64::consts::SQRT_2),
                    _ => wave(xf) * wave(yf),
                };
                data.push(T::lit(amp * v + noise * normal::<f64>(&mut rng)));
            }
        }
    }
    Dataset::new(Tensor::new(vec![n, 1, size, size], data).unwrap(), Targets::Classes(labels), PATTERN_CLASSES).unwrap()
}

/// Sequence classification where the class is carried by a weak mean signal
/// inside a `signal_dims`-dimensional subspace of the `dim`-dimensional
/// input, buried in isotropic noise. Inputs are `[N, steps, dim]`.
pub fn subspace_sequences<T: Scalar>(
    n: usize,
    steps: usize,
    dim: usize,
    signal_dims: usize,
    classes: usize,
    strength: f64,
    seed: u64,
) -> Dataset<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // orthonormal basis of the signal subspace (Gram-Schmidt)
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < signal_dims {
        let mut v: Vec<f64> = (0..dim).map(|_| normal::<f64>(&mut rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(b).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    // class means: unit directions inside the subspace
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
            let coords: Vec<f64> = (0..signal_dims)
                .map(|k| match k {
                    0 => angle.cos(),
                    1 => angle.sin(),
                    _ => 0.0,
                })
                .collect();
            (0..dim).map(|j| coords.iter().zip(&basis).map(|(c, b)| c * b[j]).sum::<f64>() * strength).collect()
        })
        .collect();
    let labels = shuffled_labels(n, classes, &mut rng);
    let mut data = Vec::with_capacity(n * steps * dim);
    for &c in &labels {
        for _ in 0..steps {
            for &mu in &means[c] {
                data.push(T::lit(mu + normal::<f64>(&mut rng)));
            }
        }
    }
    Dataset::new(Tensor::new(vec![n, steps, dim], data).unwrap(), Targets::Classes(labels), classes).unwrap()
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Unsigned-byte IDX array.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an unsigned-byte IDX buffer (big-endian header).
pub fn parse_idx(bytes: &[u8], source: &str) -> Result<IdxArray> {
    let err = |message: String| Error::Parse { path: source.to_string(), line: 0, message };
    if bytes.len() < 4 {
        return Err(err("truncated IDX header".into()));
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if magic != IDX_IMAGES_MAGIC && magic != IDX_LABELS_MAGIC {
        return Err(err(format!("unsupported IDX magic {magic:#010x}")));
    }
    let rank = bytes[3] as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(err("truncated IDX dimensions".into()));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let len: usize = dims.iter().product();
    if bytes.len() != header + len {
        return Err(err(format!("IDX payload has {} bytes, dimensions {dims:?} need {len}", bytes.len() - header)));
    }
    Ok(IdxArray { dims, data: bytes[header..].to_vec() })
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_idx(&bytes, &path.display().to_string())
}

/// Loads an image/label IDX pair as `[N, 1, H, W]` inputs scaled to `[0, 1]`.
pub fn load_idx_dataset<T: Scalar>(images: &Path, labels: &Path) -> Result<Dataset<T>> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    if img.dims.len() != 3 || lab.dims.len() != 1 || img.dims[0] != lab.dims[0] {
        return Err(Error::Dataset(format!("image dims {:?} and label dims {:?} are incompatible", img.dims, lab.dims)));
    }
    let num_classes = lab.data.iter().copied().max().map_or(0, |m| m as usize + 1);
    let inputs = Tensor::new(vec![img.dims[0], 1, img.dims[1], img.dims[2]], img.data.iter().map(|&b| T::lit(b as f64 / 255.0)).collect())?;
    Dataset::new(inputs, Targets::Classes(lab.data.iter().map(|&b| b as usize).collect()), num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut b = magic.to_be_bytes().to_vec();
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn parses_idx_images_and_labels() {
        let img = parse_idx(&idx_bytes(IDX_IMAGES_MAGIC, &[2, 2, 3], &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 255]), "mem").unwrap();
        assert_eq!(img.dims, vec![2, 2, 3]);
        assert_eq!(img.data[11], 255);
        let lab = parse_idx(&idx_bytes(IDX_LABELS_MAGIC, &[2], &[1, 0]), "mem").unwrap();
        assert_eq!(lab.dims, vec![2]);
    }

    #[test]
    fn rejects_bad_idx() {
        assert!(parse_idx(&idx_bytes(0x0000_0C03, &[1, 1, 1], &[0]), "mem").is_err());
        assert!(parse_idx(&idx_bytes(IDX_LABELS_MAGIC, &[3], &[0]), "mem").is_err());
        assert!(parse_idx(&[0, 0], "mem").is_err());
    }

    #[test]
    fn loads_idx_pair_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        std::fs::write(&ip, idx_bytes(IDX_IMAGES_MAGIC, &[2, 1, 2], &[0, 255, 51, 102])).unwrap();
        std::fs::write(&lp, idx_bytes(IDX_LABELS_MAGIC, &[2], &[3, 1])).unwrap();
        let ds = load_idx_dataset::<f64>(&ip, &lp).unwrap();
        assert_eq!(ds.inputs.shape(), &[2, 1, 1, 2]);
        assert_eq!(ds.num_classes, 4);
        assert_eq!(ds.inputs.data()[1], 1.0);
        assert!(load_idx_dataset::<f64>(&dir.path().join("missing"), &lp).is_err());
    }

    #[test]
    fn generators_are_seeded() {
        let a = gaussian_blobs::<f64>(20, 3, 2, 2.0, 7);
        let b = gaussian_blobs::<f64>(20, 3, 2, 2.0, 7);
        assert_eq!(a.inputs, b.inputs);
        let p = pattern_images::<f32>(8, 16, 0.3, 1);
        assert_eq!(p.inputs.shape(), &[8, 1, 16, 16]);
        let s = subspace_sequences::<f64>(6, 5, 8, 2, 3, 0.5, 2);
        assert_eq!(s.inputs.shape(), &[6, 5, 8]);
        assert_eq!(s.targets, subspace_sequences::<f64>(6, 5, 8, 2, 3, 0.5, 2).targets);
    }

    #[test]
    fn batch_gathers_rows() {
        let ds = Dataset::new(Tensor::from_fn(&[3, 2], |i| i as f64), Targets::Classes(vec![0, 1, 0]), 2).unwrap();
        let (x, y) = ds.batch(&[2, 0]);
        assert_eq!(x.data(), &[4.0, 5.0, 0.0, 1.0]);
        assert_eq!(y, Targets::Classes(vec![0, 0]));
    }
}
