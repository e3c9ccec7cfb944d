//! Dense row-major tensors and the handful of kernels the layers need.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("invalid shape {shape:?} for {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank { op: &'static str, expected: usize, shape: Vec<usize> },
    #[error("invalid convolution geometry: {0}")]
    Geometry(String),
    #[error("axis {axis} out of range for shape {shape:?}")]
    Axis { axis: usize, shape: Vec<usize> },
    #[error("tensor encoding: {0}")]
    Encoding(String),
}

pub type TensorResult<T> = Result<T, TensorError>;

/// Dense row-major n-dimensional array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor<T>", bound(deserialize = "T: Scalar"))]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

#[derive(Deserialize)]
struct RawTensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> TryFrom<RawTensor<T>> for Tensor<T> {
    type Error = TensorError;

    fn try_from(raw: RawTensor<T>) -> TensorResult<Self> {
        Tensor::new(raw.shape, raw.data)
    }
}

fn check_shape(shape: &[usize], len: usize) -> TensorResult<()> {
    if shape.is_empty() || shape.contains(&0) || shape.iter().product::<usize>() != len {
        return Err(TensorError::InvalidShape { shape: shape.to_vec(), len });
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> TensorResult<Self> {
        check_shape(&shape, data.len())?;
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        check_shape(shape, len).expect("dimensions must be positive");
        Self { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    /// Rank-1 tensor from a non-empty vector.
    pub fn vector(data: Vec<T>) -> Self {
        let n = data.len();
        Self::new(vec![n], data).expect("vector must be non-empty")
    }

    /// Rank-2 tensor from row slices of equal length.
    pub fn from_rows(rows: &[&[T]]) -> TensorResult<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::Encoding("ragged rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len: usize = shape.iter().product();
        let data = (0..len).map(&mut f).collect();
        Self::new(shape.to_vec(), data).expect("dimensions must be positive")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> TensorResult<Self> {
        check_shape(shape, self.data.len())?;
        self.shape = shape.to_vec();
        Ok(self)
    }

    fn expect_rank(&self, op: &'static str, rank: usize) -> TensorResult<()> {
        if self.rank() != rank {
            return Err(TensorError::Rank { op, expected: rank, shape: self.shape.clone() });
        }
        Ok(())
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> TensorResult<()> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch { op, left: self.shape.clone(), right: other.shape.clone() });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> TensorResult<Self> {
        self.same_shape(other, op)?;
        Ok(Self { shape: self.shape.clone(), data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() })
    }

    /// Elementwise sign with `sign(0) == 0`.
    pub fn sign(&self) -> Self {
        self.map(sign)
    }

    pub fn abs(&self) -> Self {
        self.map(|v| v.abs())
    }

    pub fn relu(&self) -> Self {
        self.map(relu)
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Self {
        self.map(|v| v.tanh())
    }

    pub fn exp(&self) -> Self {
        self.map(|v| v.exp())
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn hadamard(&self, other: &Self) -> TensorResult<Self> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    pub fn add(&self, other: &Self) -> TensorResult<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> TensorResult<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> TensorResult<()> {
        self.same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Sums over the listed axes. Remaining axes keep their order; reducing
    /// every axis yields shape `[1]`.
    pub fn sum_axes(&self, axes: &[usize]) -> TensorResult<Self> {
        for &axis in axes {
            if axis >= self.rank() {
                return Err(TensorError::Axis { axis, shape: self.shape.clone() });
            }
        }
        let kept: Vec<usize> = (0..self.rank()).filter(|a| !axes.contains(a)).collect();
        let out_shape: Vec<usize> = if kept.is_empty() { vec![1] } else { kept.iter().map(|&a| self.shape[a]).collect() };
        let mut out = vec![T::zero(); out_shape.iter().product()];
        let strides = row_major_strides(&self.shape);
        for (flat, &v) in self.data.iter().enumerate() {
            let mut o = 0;
            for &a in &kept {
                o = o * self.shape[a] + (flat / strides[a]) % self.shape[a];
            }
            out[o] += v;
        }
        Self::new(out_shape, out)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> TensorResult<Self> {
        self.expect_rank("transpose", 2)?;
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                data.push(self.data[i * c + j]);
            }
        }
        Self::new(vec![c, r], data)
    }

    /// Standard matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Self) -> TensorResult<Self> {
        self.expect_rank("matmul", 2)?;
        other.expect_rank("matmul", 2)?;
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(TensorError::ShapeMismatch { op: "matmul", left: self.shape.clone(), right: other.shape.clone() });
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &b) in row.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Self::new(vec![m, n], out)
    }

    /// Slice of the `index`-th entry along axis 0.
    pub fn outer_slice(&self, index: usize) -> &[T] {
        let inner = self.data.len() / self.shape[0];
        &self.data[index * inner..(index + 1) * inner]
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tensor serializes")
    }

    pub fn from_json(text: &str) -> TensorResult<Self> {
        serde_json::from_str(text).map_err(|e| TensorError::Encoding(e.to_string()))
    }

    /// Flat little-endian encoding: `u32` rank, `u64` dims, `f64` values.
    pub fn write_binary(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&(self.rank() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> TensorResult<Self> {
        let io = |e: std::io::Error| TensorError::Encoding(e.to_string());
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(io)?;
        let rank = u32::from_le_bytes(b4) as usize;
        let mut b8 = [0u8; 8];
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut b8).map_err(io)?;
            shape.push(u64::from_le_bytes(b8) as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut b8).map_err(io)?;
            data.push(T::lit(f64::from_le_bytes(b8)));
        }
        Self::new(shape, data)
    }
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

pub fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        v
    }
}

pub fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Logistic function, evaluated without overflow for either sign.
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Stride, padding and group count of a 2-D cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dGeometry {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dGeometry {
    fn default() -> Self {
        Self { stride: 1, padding: 0, groups: 1 }
    }
}

impl Conv2dGeometry {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self { stride, padding, groups }
    }

    /// Output spatial size, or a geometry error when the window does not fit.
    pub fn output_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> TensorResult<(usize, usize)> {
        if self.stride == 0 {
            return Err(TensorError::Geometry("stride must be positive".into()));
        }
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if kh > ph || kw > pw {
            return Err(TensorError::Geometry(format!("kernel {kh}x{kw} larger than padded input {ph}x{pw}")));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }
}

/// Resolved sizes for one convolution call.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub geom: Conv2dGeometry,
}

impl ConvDims {
    pub fn resolve(input: &[usize], kernel: &[usize], geom: Conv2dGeometry) -> TensorResult<Self> {
        if input.len() != 3 || kernel.len() != 4 {
            return Err(TensorError::Geometry(format!(
                "expected input [C,H,W] and kernel [C_out,C_in/groups,kh,kw], got {input:?} and {kernel:?}"
            )));
        }
        let (c_in, h, w) = (input[0], input[1], input[2]);
        let (c_out, cpg, kh, kw) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        let g = geom.groups;
        if g == 0 || c_in % g != 0 || c_out % g != 0 || cpg * g != c_in {
            return Err(TensorError::Geometry(format!("groups={g} incompatible with input channels {c_in}, kernel {kernel:?}")));
        }
        let (oh, ow) = geom.output_size(h, w, kh, kw)?;
        Ok(Self { c_in, h, w, c_out, kh, kw, oh, ow, geom })
    }

    pub fn input_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn output_len(&self) -> usize {
        self.c_out * self.oh * self.ow
    }

    /// Visits every contributing run of taps in a fixed order as
    /// `(output start, input start, input stride, run length, kernel index)`:
    /// output `o + t` reads input `i + t * stride` for `t < len`.
    #[inline]
    pub fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let g = self.geom.groups;
        let cpg_in = self.c_in / g;
        let cpg_out = self.c_out / g;
        let pad = self.geom.padding;
        let stride = self.geom.stride;
        for co in 0..self.c_out {
            let group = co / cpg_out;
            for ci in 0..cpg_in {
                let cin = group * cpg_in + ci;
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let k = ((co * cpg_in + ci) * self.kh + ky) * self.kw + kx;
                        // ox range with 0 <= ox * stride + kx - pad < w
                        let lo = pad.saturating_sub(kx).div_ceil(stride);
                        if self.w + pad <= kx {
                            continue;
                        }
                        let hi = ((self.w + pad - kx - 1) / stride + 1).min(self.ow);
                        if lo >= hi {
                            continue;
                        }
                        for oy in 0..self.oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            let o = (co * self.oh + oy) * self.ow + lo;
                            let i = (cin * self.h + iy as usize) * self.w + lo * stride + kx - pad;
                            f(o, i, stride, hi - lo, k);
                        }
                    }
                }
            }
        }
    }
}

/// `dst[t] += src[t * stride] * w`
#[inline]
fn axpy_strided<T: Scalar>(dst: &mut [T], src: &[T], stride: usize, w: T) {
    if stride == 1 {
        for (y, &x) in dst.iter_mut().zip(src) {
            *y += x * w;
        }
    } else {
        for (y, &x) in dst.iter_mut().zip(src.iter().step_by(stride)) {
            *y += x * w;
        }
    }
}

#[inline]
fn dot_strided<T: Scalar>(a: &[T], src: &[T], stride: usize) -> T {
    let mut acc = T::zero();
    if stride == 1 {
        for (&g, &x) in a.iter().zip(src) {
            acc += g * x;
        }
    } else {
        for (&g, &x) in a.iter().zip(src.iter().step_by(stride)) {
            acc += g * x;
        }
    }
    acc
}

// The raw kernels take `batch` samples laid out back to back.

pub(crate) fn conv2d_raw<T: Scalar>(d: &ConvDims, batch: usize, input: &[T], kernel: &[T], out: &mut [T]) {
    let (il, ol) = (d.input_len(), d.output_len());
    for b in 0..batch {
        let (input, out) = (&input[b * il..(b + 1) * il], &mut out[b * ol..(b + 1) * ol]);
        d.for_each_run(|o, i, s, n, k| {
            let w = kernel[k];
            if w != T::zero() {
                axpy_strided(&mut out[o..o + n], &input[i..i + (n - 1) * s + 1], s, w);
            }
        });
    }
}

pub(crate) fn conv2d_grad_input_raw<T: Scalar>(d: &ConvDims, batch: usize, grad_out: &[T], kernel: &[T], grad_in: &mut [T]) {
    let (il, ol) = (d.input_len(), d.output_len());
    for b in 0..batch {
        let (grad_out, grad_in) = (&grad_out[b * ol..(b + 1) * ol], &mut grad_in[b * il..(b + 1) * il]);
        d.for_each_run(|o, i, s, n, k| {
            let w = kernel[k];
            if w == T::zero() {
                return;
            }
            if s == 1 {
                for (x, &g) in grad_in[i..i + n].iter_mut().zip(&grad_out[o..o + n]) {
                    *x += g * w;
                }
            } else {
                for (x, &g) in grad_in[i..i + (n - 1) * s + 1].iter_mut().step_by(s).zip(&grad_out[o..o + n]) {
                    *x += g * w;
                }
            }
        });
    }
}

pub(crate) fn conv2d_grad_kernel_raw<T: Scalar>(d: &ConvDims, batch: usize, input: &[T], grad_out: &[T], grad_k: &mut [T]) {
    let (il, ol) = (d.input_len(), d.output_len());
    for b in 0..batch {
        let (input, grad_out) = (&input[b * il..(b + 1) * il], &grad_out[b * ol..(b + 1) * ol]);
        d.for_each_run(|o, i, s, n, k| {
            grad_k[k] += dot_strided(&grad_out[o..o + n], &input[i..i + (n - 1) * s + 1], s);
        });
    }
}

/// 2-D cross-correlation of `input` `[C_in,H,W]` with `kernel`
/// `[C_out,C_in/groups,kh,kw]`. `groups == C_in` is depthwise.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, geom: Conv2dGeometry) -> TensorResult<Tensor<T>> {
    let d = ConvDims::resolve(input.shape(), kernel.shape(), geom)?;
    let mut out = vec![T::zero(); d.output_len()];
    conv2d_raw(&d, 1, input.data(), kernel.data(), &mut out);
    Tensor::new(vec![d.c_out, d.oh, d.ow], out)
}

/// Gradient of a conv2d output w.r.t. its input.
pub fn conv2d_grad_input<T: Scalar>(
    grad_out: &Tensor<T>,
    kernel: &Tensor<T>,
    input_shape: &[usize],
    geom: Conv2dGeometry,
) -> TensorResult<Tensor<T>> {
    let d = ConvDims::resolve(input_shape, kernel.shape(), geom)?;
    if grad_out.shape() != [d.c_out, d.oh, d.ow] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_grad_input",
            left: grad_out.shape().to_vec(),
            right: vec![d.c_out, d.oh, d.ow],
        });
    }
    let mut gi = vec![T::zero(); d.input_len()];
    conv2d_grad_input_raw(&d, 1, grad_out.data(), kernel.data(), &mut gi);
    Tensor::new(input_shape.to_vec(), gi)
}

/// Gradient of a conv2d output w.r.t. its kernel.
pub fn conv2d_grad_kernel<T: Scalar>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    kernel_shape: &[usize],
    geom: Conv2dGeometry,
) -> TensorResult<Tensor<T>> {
    let d = ConvDims::resolve(input.shape(), kernel_shape, geom)?;
    if grad_out.shape() != [d.c_out, d.oh, d.ow] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_grad_kernel",
            left: grad_out.shape().to_vec(),
            right: vec![d.c_out, d.oh, d.ow],
        });
    }
    let mut gk = vec![T::zero(); kernel_shape.iter().product()];
    conv2d_grad_kernel_raw(&d, 1, input.data(), grad_out.data(), &mut gk);
    Tensor::new(kernel_shape.to_vec(), gk)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let m = t2(&[&[1.5, -2.0], &[0.25, 7.0]]);
        let eye = t2(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(eye.matmul(&m).unwrap(), m);

        let a = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = t2(&[&[5.0], &[6.0]]);
        assert_eq!(a.matmul(&b).unwrap(), t2(&[&[17.0], &[39.0]]));

        let s = t2(&[&[3.0]]).matmul(&t2(&[&[4.0]])).unwrap();
        assert_eq!(s, t2(&[&[12.0]]));
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }

    #[test]
    fn elementwise_examples() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]);
        assert_eq!(x.relu().data(), &[0.0, 0.0, 2.0]);
        let y = Tensor::vector(vec![-3.0, 0.0, 5.0]);
        assert_eq!(y.sign().data(), &[-1.0, 0.0, 1.0]);
        let a = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let b = Tensor::vector(vec![4.0, 5.0, 6.0]);
        assert_eq!(a.hadamard(&b).unwrap().data(), &[4.0, 10.0, 18.0]);
        assert!(a.hadamard(&Tensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn sum_axes_keeps_remaining_order() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.sum_axes(&[0]).unwrap().data(), &[5.0, 7.0, 9.0]);
        assert_eq!(t.sum_axes(&[1]).unwrap().data(), &[6.0, 15.0]);
        assert_eq!(t.sum_axes(&[0, 1]).unwrap().data(), &[21.0]);
        assert!(t.sum_axes(&[2]).is_err());
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::new(vec![0, 2], vec![]).is_err());
        assert!(Tensor::<f64>::from_json(r#"{"shape":[3],"data":[1.0]}"#).is_err());
    }

    #[test]
    fn identity_kernel_conv() {
        let x = Tensor::from_fn(&[1, 4, 5], |i| i as f64 * 0.5 - 3.0);
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        assert_eq!(conv2d(&x, &k, Conv2dGeometry::default()).unwrap(), x);
    }

    #[test]
    fn zero_kernel_conv() {
        let x = Tensor::from_fn(&[2, 5, 5], |i| i as f64);
        let k = Tensor::zeros(&[3, 2, 3, 3]);
        let y = conv2d(&x, &k, Conv2dGeometry::new(1, 1, 1)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resnet_stem_geometry() {
        let g = Conv2dGeometry::new(2, 3, 1);
        assert_eq!(g.output_size(224, 224, 7, 7).unwrap(), (112, 112));
        let d = ConvDims::resolve(&[3, 224, 224], &[64, 3, 7, 7], g).unwrap();
        assert_eq!((d.c_out, d.oh, d.ow), (64, 112, 112));
    }

    #[test]
    fn bad_geometry() {
        let x = Tensor::<f64>::zeros(&[3, 4, 4]);
        let k = Tensor::<f64>::zeros(&[4, 3, 5, 5]);
        assert!(matches!(conv2d(&x, &k, Conv2dGeometry::default()), Err(TensorError::Geometry(_))));
        let k = Tensor::<f64>::zeros(&[4, 1, 3, 3]);
        assert!(conv2d(&x, &k, Conv2dGeometry::new(1, 1, 2)).is_err());
    }

    #[test]
    fn json_and_binary_round_trip() {
        let t = Tensor::from_fn(&[2, 3], |i| i as f64 / 7.0 - 0.3);
        assert_eq!(Tensor::from_json(&t.to_json()).unwrap(), t);
        let mut buf = Vec::new();
        t.write_binary(&mut buf).unwrap();
        assert_eq!(Tensor::<f64>::read_binary(buf.as_slice()).unwrap(), t);
    }
}
