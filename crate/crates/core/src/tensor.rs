//! Dense row-major tensors and the plain (non-recording) forward kernels.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("shape {shape:?} needs {n} values, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::ZERO; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::ONE;
        }
        t
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape {
                op: "from_rows",
                detail: "ragged rows".into(),
            });
        }
        Self::matrix(rows.len(), cols, rows.concat())
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

    /// Leading dimension when viewed as a matrix; vectors are one row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::from_f64(x.to_f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

pub(crate) fn ensure_finite<T: Real>(t: &Tensor<T>, op: &'static str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// `C[m x n] = A[m x k] * B[k x n]`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::Shape {
            op: "matmul",
            detail: format!("{m}x{k} * {k2}x{n}"),
        });
    }
    let mut out = vec![T::ZERO; m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    Tensor::matrix(m, n, out)
}

pub(crate) fn matmul_into<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::ZERO {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[k x n] += A[m x k]^T * B[m x n]`.
pub(crate) fn matmul_tn_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::ZERO {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m x k] += A[m x n] * B[k x n]^T`.
pub(crate) fn matmul_nt_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = T::ZERO;
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * k + p] += s;
        }
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let mut mx = row[0];
    for &x in row.iter() {
        mx = mx.max(x);
    }
    let mut sum = T::ZERO;
    for x in row.iter_mut() {
        *x = (*x - mx).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_row<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    ensure_finite(x, "softmax_row")?;
    let mut out = x.clone();
    let cols = x.cols();
    if cols > 0 {
        for r in 0..x.rows() {
            softmax_in_place(out.row_mut(r));
        }
    }
    Ok(out)
}

/// Per-row statistics `(mean, 1/sqrt(var + eps))`, population variance.
pub(crate) fn row_moments<T: Real>(row: &[T]) -> (T, T) {
    let d = T::from_f64(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / d;
    let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / d;
    (mean, T::ONE / (var + T::from_f64(LAYER_NORM_EPS)).sqrt())
}

pub fn layer_norm<T: Real>(x: &Tensor<T>, gain: &[T], bias: &[T]) -> Result<Tensor<T>> {
    let d = x.cols();
    if gain.len() != d || bias.len() != d || d == 0 {
        return Err(Error::Shape {
            op: "layer_norm",
            detail: format!("width {d}, gain {}, bias {}", gain.len(), bias.len()),
        });
    }
    let mut out = x.clone();
    for r in 0..x.rows() {
        let (mean, rstd) = row_moments(x.row(r));
        for (j, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = (*o - mean) * rstd * gain[j] + bias[j];
        }
    }
    ensure_finite(&out, "layer_norm")?;
    Ok(out)
}

#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * x * (T::ONE + (x * T::from_f64(core::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::ONE + (x * T::from_f64(core::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::from_f64(0.398_942_280_401_432_7);
    cdf + x * pdf
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::ZERO {
        x + (T::ONE + (-x).exp()).ln()
    } else {
        (T::ONE + x.exp()).ln()
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::ZERO;
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub fn l2_norm<T: Real>(v: &[T]) -> T {
    dot(v, v).sqrt()
}
