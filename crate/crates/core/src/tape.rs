//! Reverse-mode differentiation over a linear tape of recorded primitives.
//!
//! Every primitive evaluates eagerly and appends its output to the tape, so
//! the tape order is already a topological order. [`Tape::backward`] walks it
//! once in reverse. Any primitive that produces a NaN or infinity fails with
//! the primitive's name instead of recording the value.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{
    ensure_finite, gelu, gelu_grad, matmul_into, matmul_nt_acc, matmul_tn_acc, row_moments, sigmoid, softmax_in_place,
    softplus, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    GatherRows(Var, Vec<usize>),
    Interleave(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    MulColumn(Var, Var),
    RowSum(Var),
    RowNorm(Var),
    Sum(Var),
    Mean(Var),
    Gelu(Var),
    Relu(Var),
    Softplus(Var),
    Sin(Var),
    Cos(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        group: usize,
        heads: usize,
        probs: Vec<T>,
    },
    NormalizeRows(Var, Vec<T>),
    RowDots {
        a: Var,
        c: Var,
        idx: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    BatchedMatVec {
        mats: Var,
        x: Var,
        which: Vec<usize>,
    },
}

#[derive(Debug)]
struct Entry<T> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    entries: Vec<Entry<T>>,
}

fn shape_err(op: &'static str, detail: alloc::string::String) -> Error {
    Error::Shape { op, detail }
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { entries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.entries[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        ensure_finite(&value, name)?;
        self.entries.push(Entry { value, op });
        Ok(Var(self.entries.len() - 1))
    }

    /// A constant; gradients are computed for it but it is never updated.
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Input, "input")
    }

    /// A trainable leaf identified by its slot in a parameter store.
    pub fn param(&mut self, slot: usize, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Param(slot), "param")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        if bv.rows() != k {
            return Err(shape_err("matmul", format!("{m}x{k} * {}x{n}", bv.rows())));
        }
        let mut out = vec![T::ZERO; m * n];
        matmul_into(av.data(), bv.data(), &mut out, m, k, n);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), "matmul")
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(name, av, bv)?;
        Tensor::new(
            av.shape().to_vec(),
            av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "add", |x, y| x + y)?;
        self.push(t, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "sub", |x, y| x - y)?;
        self.push(t, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "mul", |x, y| x * y)?;
        self.push(t, Op::Mul(a, b), "mul")
    }

    /// `x[m x n] + b` with `b` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let n = xv.cols();
        if bv.len() != n {
            return Err(shape_err("add_row", format!("width {n} vs bias {}", bv.len())));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, &bb) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        self.push(out, Op::AddRow(x, b), "add_row")
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let t = self.value(x).map(|v| v * c);
        self.push(t, Op::Scale(x, c), "scale")
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        let t = self.value(x).map(|v| v + c);
        self.push(t, Op::AddScalar(x), "add_scalar")
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= xv.rows() {
                return Err(shape_err("gather_rows", format!("row {i} of {}", xv.rows())));
            }
            out.extend_from_slice(xv.row(i));
        }
        let t = Tensor::matrix(idx.len(), c, out)?;
        self.push(t, Op::GatherRows(x, idx.to_vec()), "gather_rows")
    }

    /// Stacks `k` tensors of shape `[B x d]` into `[B*k x d]`, where row
    /// `b*k + s` is row `b` of input `s`.
    pub fn interleave(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]);
        let (b, d) = (first.rows(), first.cols());
        for &p in parts {
            let v = self.value(p);
            if v.rows() != b || v.cols() != d {
                return Err(shape_err("interleave", format!("{}x{} vs {b}x{d}", v.rows(), v.cols())));
            }
        }
        let k = parts.len();
        let mut out = Vec::with_capacity(b * k * d);
        for r in 0..b {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::matrix(b * k, d, out)?;
        self.push(t, Op::Interleave(parts.to_vec()), "interleave")
    }

    /// Stacks tensors of equal width vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let width = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != width) {
            return Err(shape_err("concat_rows", "widths differ".into()));
        }
        let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut out = Vec::with_capacity(rows * width);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::matrix(rows, width, out)?;
        self.push(t, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(shape_err("slice_cols", format!("{start}+{len} > {}", xv.cols())));
        }
        let mut out = Vec::with_capacity(xv.rows() * len);
        for r in 0..xv.rows() {
            out.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let t = Tensor::matrix(xv.rows(), len, out)?;
        self.push(t, Op::SliceCols(x, start), "slice_cols")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(shape_err("concat_cols", "row counts differ".into()));
        }
        let width: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::matrix(rows, width, out)?;
        self.push(t, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    /// `x[b, j] * s[b]` for `x: [B x d]`, `s: [B x 1]`.
    pub fn mul_column(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        if sv.len() != xv.rows() {
            return Err(shape_err(
                "mul_column",
                format!("{} rows vs {} scales", xv.rows(), sv.len()),
            ));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let c = sv.data()[r];
            for o in out.row_mut(r) {
                *o *= c;
            }
        }
        self.push(out, Op::MulColumn(x, s), "mul_column")
    }

    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = (0..xv.rows()).map(|r| xv.row(r).iter().copied().sum()).collect();
        let t = Tensor::matrix(xv.rows(), 1, out)?;
        self.push(t, Op::RowSum(x), "row_sum")
    }

    /// Euclidean norm of each row, `[B x 1]`.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = (0..xv.rows()).map(|r| crate::tensor::l2_norm(xv.row(r))).collect();
        let t = Tensor::matrix(xv.rows(), 1, out)?;
        self.push(t, Op::RowNorm(x), "row_norm")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.data().iter().copied().sum::<T>() / T::from_f64(xv.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x), "mean")
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(gelu);
        self.push(t, Op::Gelu(x), "gelu")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| v.max(T::ZERO));
        self.push(t, Op::Relu(x), "relu")
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(softplus);
        self.push(t, Op::Softplus(x), "softplus")
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| v.sin());
        self.push(t, Op::Sin(x), "sin")
    }

    pub fn cos(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| v.cos());
        self.push(t, Op::Cos(x), "cos")
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = crate::tensor::softmax_row(self.value(x))?;
        self.push(t, Op::SoftmaxRows(x), "softmax_rows")
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let d = xv.cols();
        if gv.len() != d || bv.len() != d {
            return Err(shape_err(
                "layer_norm",
                format!("width {d}, gain {}, bias {}", gv.len(), bv.len()),
            ));
        }
        let mut xhat = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(xv.rows());
        let mut out = Vec::with_capacity(xv.len());
        for r in 0..xv.rows() {
            let (mu, rs) = row_moments(xv.row(r));
            rstd.push(rs);
            for (j, &v) in xv.row(r).iter().enumerate() {
                let h = (v - mu) * rs;
                xhat.push(h);
                out.push(h * gv.data()[j] + bv.data()[j]);
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            "layer_norm",
        )
    }

    /// Multi-head scaled dot-product self-attention inside consecutive
    /// groups of `group` rows. `q`, `k`, `v` are `[N x d]` with `N` a
    /// multiple of `group`; heads split the columns evenly.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, group: usize, heads: usize) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = (qv.rows(), qv.cols());
        if heads == 0 || d % heads != 0 {
            return Err(shape_err(
                "attention",
                format!("width {d} not divisible by {heads} heads"),
            ));
        }
        if group == 0 || n % group != 0 {
            return Err(shape_err(
                "attention",
                format!("{n} rows not a multiple of group {group}"),
            ));
        }
        if kv.shape() != qv.shape() || vv.shape() != qv.shape() {
            return Err(shape_err("attention", "q, k, v shapes differ".into()));
        }
        let dh = d / heads;
        let scale = T::ONE / T::from_f64(dh as f64).sqrt();
        let groups = n / group;
        let mut probs = vec![T::ZERO; groups * heads * group * group];
        let mut out = vec![T::ZERO; n * d];
        for g in 0..groups {
            for h in 0..heads {
                let c0 = h * dh;
                let pbase = (g * heads + h) * group * group;
                for i in 0..group {
                    let qi = &qv.row(g * group + i)[c0..c0 + dh];
                    let prow = &mut probs[pbase + i * group..pbase + (i + 1) * group];
                    for (j, p) in prow.iter_mut().enumerate() {
                        let kj = &kv.row(g * group + j)[c0..c0 + dh];
                        *p = crate::tensor::dot(qi, kj) * scale;
                    }
                    softmax_in_place(prow);
                    let orow = &mut out[(g * group + i) * d + c0..(g * group + i) * d + c0 + dh];
                    for (j, &p) in prow.iter().enumerate() {
                        let vj = &vv.row(g * group + j)[c0..c0 + dh];
                        for (o, &x) in orow.iter_mut().zip(vj) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        let t = Tensor::matrix(n, d, out)?;
        self.push(
            t,
            Op::Attention {
                q,
                k,
                v,
                group,
                heads,
                probs,
            },
            "attention",
        )
    }

    /// Divides each row by its Euclidean norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut out = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let nrm = crate::tensor::l2_norm(xv.row(r));
            if !(nrm.to_f64() > 1e-12) {
                return Err(Error::DegenerateVector(nrm.to_f64()));
            }
            norms.push(nrm);
            for o in out.row_mut(r) {
                *o /= nrm;
            }
        }
        self.push(out, Op::NormalizeRows(x, norms), "normalize_rows")
    }

    /// `out[b, m] = a[b] . c[idx[b*W + m]]` for `a: [B x d]`, `c: [U x d]`;
    /// `W = idx.len() / B`.
    pub fn row_dots(&mut self, a: Var, c: Var, idx: &[usize]) -> Result<Var> {
        let (av, cv) = (self.value(a), self.value(c));
        let b = av.rows();
        if av.cols() != cv.cols() || b == 0 || !idx.len().is_multiple_of(b) {
            return Err(shape_err(
                "row_dots",
                format!(
                    "a {}x{}, c {}x{}, {} indices",
                    b,
                    av.cols(),
                    cv.rows(),
                    cv.cols(),
                    idx.len()
                ),
            ));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= cv.rows()) {
            return Err(shape_err("row_dots", format!("index {bad} of {}", cv.rows())));
        }
        let w = idx.len() / b;
        let mut out = Vec::with_capacity(idx.len());
        for r in 0..b {
            for m in 0..w {
                out.push(crate::tensor::dot(av.row(r), cv.row(idx[r * w + m])));
            }
        }
        let t = Tensor::matrix(b, w, out)?;
        self.push(
            t,
            Op::RowDots {
                a,
                c,
                idx: idx.to_vec(),
            },
            "row_dots",
        )
    }

    /// Mean softmax cross-entropy of `logits: [B x W]` against target columns.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        self.cross_entropy_prefix(logits, targets, None)
    }

    /// Cross-entropy where row `b` only uses its first `widths[b]` columns;
    /// the remaining columns are padding and receive zero gradient.
    pub fn cross_entropy_prefix(&mut self, logits: Var, targets: &[usize], widths: Option<&[usize]>) -> Result<Var> {
        let lv = self.value(logits);
        let (b, w) = (lv.rows(), lv.cols());
        let width = |r: usize| widths.map_or(w, |ws| ws[r]);
        if targets.len() != b
            || widths.is_some_and(|ws| ws.len() != b || ws.iter().any(|&x| x == 0 || x > w))
            || (0..b).any(|r| targets[r] >= width(r))
        {
            return Err(shape_err(
                "cross_entropy",
                format!("{b}x{w} logits, {} targets", targets.len()),
            ));
        }
        let mut probs = vec![T::ZERO; b * w];
        let mut total = T::ZERO;
        for r in 0..b {
            let row = &lv.row(r)[..width(r)];
            let mut mx = row[0];
            for &x in row.iter() {
                mx = mx.max(x);
            }
            let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<T>().ln();
            total += lse - row[targets[r]];
            let p = &mut probs[r * w..r * w + width(r)];
            p.copy_from_slice(row);
            softmax_in_place(p);
        }
        let loss = total / T::from_f64(b as f64);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            "cross_entropy",
        )
    }

    /// `out[b] = M_{which[b]} x[b]` where `mats: [R x (r*c)]` holds row-major
    /// `r x c` matrices and `x: [B x c]`.
    pub fn batched_matvec(&mut self, mats: Var, x: Var, which: &[usize], out_rows: usize) -> Result<Var> {
        let (mv, xv) = (self.value(mats), self.value(x));
        let c = xv.cols();
        if mv.cols() != out_rows * c || which.len() != xv.rows() || which.iter().any(|&w| w >= mv.rows()) {
            return Err(shape_err(
                "batched_matvec",
                format!("mats {}x{}, x {}x{c}, out {out_rows}", mv.rows(), mv.cols(), xv.rows()),
            ));
        }
        let mut out = Vec::with_capacity(xv.rows() * out_rows);
        for (b, &w) in which.iter().enumerate() {
            let m = mv.row(w);
            for r in 0..out_rows {
                out.push(crate::tensor::dot(&m[r * c..(r + 1) * c], xv.row(b)));
            }
        }
        let t = Tensor::matrix(xv.rows(), out_rows, out)?;
        self.push(
            t,
            Op::BatchedMatVec {
                mats,
                x,
                which: which.to_vec(),
            },
            "batched_matvec",
        )
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::filled(lv.shape(), T::ONE));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let entry = &self.entries[i];
            match &entry.op {
                Op::Input | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    let mut da = vec![T::ZERO; m * k];
                    matmul_nt_acc(g.data(), bv.data(), &mut da, m, n, k);
                    let mut db = vec![T::ZERO; k * n];
                    matmul_tn_acc(av.data(), g.data(), &mut db, m, k, n);
                    accumulate(&mut grads, *a, av.shape(), da);
                    accumulate(&mut grads, *b, bv.shape(), db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.shape(), g.data().to_vec());
                    accumulate(&mut grads, *b, g.shape(), g.data().to_vec());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.shape(), g.data().to_vec());
                    accumulate(&mut grads, *b, g.shape(), g.data().iter().map(|&x| -x).collect());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = g.data().iter().zip(bv.data()).map(|(&gg, &y)| gg * y).collect();
                    let db = g.data().iter().zip(av.data()).map(|(&gg, &x)| gg * x).collect();
                    accumulate(&mut grads, *a, av.shape(), da);
                    accumulate(&mut grads, *b, bv.shape(), db);
                }
                Op::AddRow(x, b) => {
                    let bv = self.value(*b);
                    let n = g.cols();
                    let mut db = vec![T::ZERO; n];
                    for r in 0..g.rows() {
                        for (d, &gg) in db.iter_mut().zip(g.row(r)) {
                            *d += gg;
                        }
                    }
                    accumulate(&mut grads, *x, g.shape(), g.data().to_vec());
                    accumulate(&mut grads, *b, bv.shape(), db);
                }
                Op::Scale(x, c) => {
                    accumulate(&mut grads, *x, g.shape(), g.data().iter().map(|&v| v * *c).collect());
                }
                Op::AddScalar(x) => {
                    accumulate(&mut grads, *x, g.shape(), g.data().to_vec());
                }
                Op::GatherRows(x, idx) => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let mut dx = vec![T::ZERO; xv.len()];
                    for (r, &src) in idx.iter().enumerate() {
                        for (d, &gg) in dx[src * c..(src + 1) * c].iter_mut().zip(g.row(r)) {
                            *d += gg;
                        }
                    }
                    accumulate(&mut grads, *x, xv.shape(), dx);
                }
                Op::Interleave(parts) => {
                    let k = parts.len();
                    let d = g.cols();
                    let b = g.rows() / k;
                    for (s, &p) in parts.iter().enumerate() {
                        let mut dp = Vec::with_capacity(b * d);
                        for r in 0..b {
                            dp.extend_from_slice(g.row(r * k + s));
                        }
                        accumulate(&mut grads, p, self.value(p).shape(), dp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let n = pv.len();
                        accumulate(&mut grads, p, pv.shape(), g.data()[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                Op::SliceCols(x, start) => {
                    let xv = self.value(*x);
                    let len = g.cols();
                    let mut dx = vec![T::ZERO; xv.len()];
                    let c = xv.cols();
                    for r in 0..g.rows() {
                        dx[r * c + start..r * c + start + len].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *x, xv.shape(), dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let w = pv.cols();
                        let mut dp = Vec::with_capacity(pv.len());
                        for r in 0..g.rows() {
                            dp.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        accumulate(&mut grads, p, pv.shape(), dp);
                        offset += w;
                    }
                }
                Op::MulColumn(x, s) => {
                    let (xv, sv) = (self.value(*x), self.value(*s));
                    let mut dx = g.data().to_vec();
                    let mut ds = vec![T::ZERO; sv.len()];
                    let c = xv.cols();
                    for r in 0..xv.rows() {
                        let sc = sv.data()[r];
                        for j in 0..c {
                            dx[r * c + j] *= sc;
                            ds[r] += g.data()[r * c + j] * xv.data()[r * c + j];
                        }
                    }
                    accumulate(&mut grads, *x, xv.shape(), dx);
                    accumulate(&mut grads, *s, sv.shape(), ds);
                }
                Op::RowSum(x) => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let dx = (0..xv.len()).map(|i| g.data()[i / c]).collect();
                    accumulate(&mut grads, *x, xv.shape(), dx);
                }
                Op::RowNorm(x) => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let norms = entry.value.data();
                    let dx = (0..xv.len())
                        .map(|i| {
                            let n = norms[i / c];
                            if n > T::ZERO {
                                g.data()[i / c] * xv.data()[i] / n
                            } else {
                                T::ZERO
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *x, xv.shape(), dx);
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    accumulate(&mut grads, *x, xv.shape(), vec![g.item(); xv.len()]);
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let v = g.item() / T::from_f64(xv.len() as f64);
                    accumulate(&mut grads, *x, xv.shape(), vec![v; xv.len()]);
                }
                Op::Gelu(x) => self.unary_back(&mut grads, *x, &g, |v, _| gelu_grad(v)),
                Op::Relu(x) => self.unary_back(&mut grads, *x, &g, |v, _| if v > T::ZERO { T::ONE } else { T::ZERO }),
                Op::Softplus(x) => self.unary_back(&mut grads, *x, &g, |v, _| sigmoid(v)),
                Op::Sin(x) => self.unary_back(&mut grads, *x, &g, |v, _| v.cos()),
                Op::Cos(x) => self.unary_back(&mut grads, *x, &g, |v, _| -v.sin()),
                Op::SoftmaxRows(x) => {
                    let y = &entry.value;
                    let mut dx = Vec::with_capacity(y.len());
                    for r in 0..y.rows() {
                        let dotp = crate::tensor::dot(g.row(r), y.row(r));
                        for (&gy, &yy) in g.row(r).iter().zip(y.row(r)) {
                            dx.push(yy * (gy - dotp));
                        }
                    }
                    accumulate(&mut grads, *x, y.shape(), dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let gv = self.value(*gain);
                    let d = g.cols();
                    let dt = T::from_f64(d as f64);
                    let mut dx = vec![T::ZERO; g.len()];
                    let mut dg = vec![T::ZERO; d];
                    let mut dbias = vec![T::ZERO; d];
                    for r in 0..g.rows() {
                        let gr = g.row(r);
                        let xh = &xhat[r * d..(r + 1) * d];
                        let mut mean_dxh = T::ZERO;
                        let mut mean_dxh_xh = T::ZERO;
                        for j in 0..d {
                            let dxh = gr[j] * gv.data()[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[j];
                            dg[j] += gr[j] * xh[j];
                            dbias[j] += gr[j];
                        }
                        mean_dxh /= dt;
                        mean_dxh_xh /= dt;
                        for j in 0..d {
                            let dxh = gr[j] * gv.data()[j];
                            dx[r * d + j] = rstd[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                    accumulate(&mut grads, *x, g.shape(), dx);
                    accumulate(&mut grads, *gain, gv.shape(), dg);
                    accumulate(&mut grads, *bias, self.value(*bias).shape(), dbias);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    group,
                    heads,
                    probs,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let (n, d) = (qv.rows(), qv.cols());
                    let (group, heads) = (*group, *heads);
                    let dh = d / heads;
                    let scale = T::ONE / T::from_f64(dh as f64).sqrt();
                    let mut dq = vec![T::ZERO; n * d];
                    let mut dk = vec![T::ZERO; n * d];
                    let mut dv = vec![T::ZERO; n * d];
                    let mut dp = vec![T::ZERO; group];
                    for gidx in 0..n / group {
                        for h in 0..heads {
                            let c0 = h * dh;
                            let pbase = (gidx * heads + h) * group * group;
                            for i in 0..group {
                                let ri = gidx * group + i;
                                let go = &g.row(ri)[c0..c0 + dh];
                                let prow = &probs[pbase + i * group..pbase + (i + 1) * group];
                                let mut weighted = T::ZERO;
                                for j in 0..group {
                                    let rj = gidx * group + j;
                                    dp[j] = crate::tensor::dot(go, &vv.row(rj)[c0..c0 + dh]);
                                    weighted += dp[j] * prow[j];
                                    for (t, &gg) in go.iter().enumerate() {
                                        dv[rj * d + c0 + t] += prow[j] * gg;
                                    }
                                }
                                for j in 0..group {
                                    let rj = gidx * group + j;
                                    let ds = prow[j] * (dp[j] - weighted) * scale;
                                    if ds == T::ZERO {
                                        continue;
                                    }
                                    for t in 0..dh {
                                        dq[ri * d + c0 + t] += ds * kv.data()[rj * d + c0 + t];
                                        dk[rj * d + c0 + t] += ds * qv.data()[ri * d + c0 + t];
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *q, qv.shape(), dq);
                    accumulate(&mut grads, *k, kv.shape(), dk);
                    accumulate(&mut grads, *v, vv.shape(), dv);
                }
                Op::NormalizeRows(x, norms) => {
                    let y = &entry.value;
                    let mut dx = Vec::with_capacity(y.len());
                    for (r, &n) in norms.iter().enumerate().take(y.rows()) {
                        let proj = crate::tensor::dot(y.row(r), g.row(r));
                        for (&yy, &gg) in y.row(r).iter().zip(g.row(r)) {
                            dx.push((gg - yy * proj) / n);
                        }
                    }
                    accumulate(&mut grads, *x, y.shape(), dx);
                }
                Op::RowDots { a, c, idx } => {
                    let (av, cv) = (self.value(*a), self.value(*c));
                    let d = av.cols();
                    let b = av.rows();
                    let w = idx.len() / b;
                    let mut da = vec![T::ZERO; av.len()];
                    let mut dc = vec![T::ZERO; cv.len()];
                    for r in 0..b {
                        for m in 0..w {
                            let gg = g.data()[r * w + m];
                            if gg == T::ZERO {
                                continue;
                            }
                            let ci = idx[r * w + m];
                            for t in 0..d {
                                da[r * d + t] += gg * cv.data()[ci * d + t];
                                dc[ci * d + t] += gg * av.data()[r * d + t];
                            }
                        }
                    }
                    accumulate(&mut grads, *a, av.shape(), da);
                    accumulate(&mut grads, *c, cv.shape(), dc);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let lv = self.value(*logits);
                    let w = lv.cols();
                    let scale = g.item() / T::from_f64(lv.rows() as f64);
                    let mut dl: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                    for (r, &t) in targets.iter().enumerate() {
                        dl[r * w + t] -= scale;
                    }
                    accumulate(&mut grads, *logits, lv.shape(), dl);
                }
                Op::BatchedMatVec { mats, x, which } => {
                    let (mv, xv) = (self.value(*mats), self.value(*x));
                    let c = xv.cols();
                    let out_rows = g.cols();
                    let mut dm = vec![T::ZERO; mv.len()];
                    let mut dx = vec![T::ZERO; xv.len()];
                    let mc = mv.cols();
                    for (b, &wi) in which.iter().enumerate() {
                        for r in 0..out_rows {
                            let gg = g.data()[b * out_rows + r];
                            for t in 0..c {
                                dm[wi * mc + r * c + t] += gg * xv.data()[b * c + t];
                                dx[b * c + t] += gg * mv.data()[wi * mc + r * c + t];
                            }
                        }
                    }
                    accumulate(&mut grads, *mats, mv.shape(), dm);
                    accumulate(&mut grads, *x, xv.shape(), dx);
                }
            }
        }

        let mut params = Vec::new();
        for (i, e) in self.entries.iter().enumerate().take(loss.0 + 1) {
            if let Op::Param(slot) = e.op {
                params.push((slot, Var(i)));
            }
        }
        Ok(Gradients { grads, params })
    }

    fn unary_back(&self, grads: &mut [Option<Tensor<T>>], x: Var, g: &Tensor<T>, f: impl Fn(T, T) -> T) {
        let xv = self.value(x);
        let dx = xv.data().iter().zip(g.data()).map(|(&v, &gg)| gg * f(v, gg)).collect();
        accumulate(grads, x, xv.shape(), dx);
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, shape: &[usize], data: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(data) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient shape matches value"));
        }
    }
}

#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(usize, Var)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a recorded value; `None` when the value does not reach the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient per parameter slot, zero-filled for unreachable slots.
    pub fn param_grads(&self, shapes: &[&[usize]]) -> Vec<Tensor<T>> {
        let mut out: Vec<Tensor<T>> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        for &(slot, var) in &self.params {
            if let Some(g) = self.wrt(var) {
                out[slot].add_assign(g);
            }
        }
        out
    }
}
