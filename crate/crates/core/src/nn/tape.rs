//! Reverse-mode differentiation over a recorded trace of tensor ops.
//!
//! A [`Tape`] borrows the parameter store for the duration of one forward
//! pass. Ops that only touch constants are recorded without gradient
//! bookkeeping, so inference through the same code path stays cheap.

// Kernels index several parallel buffers at once.
#![allow(clippy::needless_range_loop)]

use std::borrow::Cow;
use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{matmul_nt_acc, matmul_tn_acc, SparseMatrix, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Direction of a one-hot cyclic shift.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftDir {
    /// `out[s] = Σ_u m[u]·z[(s − u) mod t]`; moves a one-hot at `x` to `x + μ`.
    Forward,
    /// `out[s] = Σ_u m[u]·z[(s + u) mod t]`; moves a one-hot at `x` to `x − μ`.
    Inverse,
}

pub type Segments = Arc<[Range<usize>]>;

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    Sum(Var),
    SpMM(Arc<SparseMatrix>, Var),
    SegmentSum(Var, Segments),
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    LogSoftmax(Var),
    Softmax(Var, f64),
    StraightThrough(Var, f64),
    CyclicShift(Var, Var, ShiftDir),
    RowDot(Var, Var),
    BatchNormTrain(Box<BnTrainSaved>),
    BatchNormEval(Box<BnEvalSaved>),
}

struct BnTrainSaved {
    x: Var,
    gamma: Var,
    beta: Var,
    segments: Segments,
    xhat: Tensor,
    /// segment × column
    mean: Vec<f64>,
    var: Vec<f64>,
    inv_std: Vec<f64>,
}

struct BnEvalSaved {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Tensor,
    inv_std: Vec<f64>,
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    param_vars: Vec<Option<Var>>,
    non_finite: Option<&'static str>,
    consumed: bool,
}

fn shape_err(op: &'static str, detail: String) -> ! {
    panic!("{}", Error::Shape { op, detail })
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self { store, nodes: Vec::new(), param_vars: vec![None; store.len()], non_finite: None, consumed: false }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First op that produced a non-finite value, if any.
    pub fn check_finite(&self) -> Result<()> {
        match self.non_finite {
            Some(op) => Err(Error::NonFinite(op)),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, needs_grad: bool, name: &'static str) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(name);
        }
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false, "constant")
    }

    /// The parameter's value; repeated calls return the same handle.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let v = self.push(Cow::Borrowed(self.store.get(id)), Op::Param(id), true, "param");
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            shape_err("matmul", format!("{:?} · {:?}", x.shape(), y.shape()));
        }
        let out = x.matmul(y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Cow::Owned(out), Op::MatMul(a, b), ng, "matmul")
    }

    /// Adds a 1×n row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            shape_err("add_row", format!("{:?} + {:?}", x.shape(), r.shape()));
        }
        let mut out = x.clone();
        let cols = x.cols();
        for chunk in out.data_mut().chunks_mut(cols.max(1)) {
            for (o, b) in chunk.iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        self.push(Cow::Owned(out), Op::AddRow(a, row), ng, "add_row")
    }

    fn zip_same(&self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            shape_err(op, format!("{:?} vs {:?}", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_vec(x.rows(), x.cols(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_same(a, b, "add", |p, q| p + q);
        let ng = self.needs(a) || self.needs(b);
        self.push(Cow::Owned(out), Op::Add(a, b), ng, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_same(a, b, "sub", |p, q| p - q);
        let ng = self.needs(a) || self.needs(b);
        self.push(Cow::Owned(out), Op::Sub(a, b), ng, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_same(a, b, "mul", |p, q| p * q);
        let ng = self.needs(a) || self.needs(b);
        self.push(Cow::Owned(out), Op::Mul(a, b), ng, "mul")
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Var {
        let x = self.value(a);
        if x.shape() != c.shape() {
            shape_err("mul_const", format!("{:?} vs {:?}", x.shape(), c.shape()));
        }
        let data = x.data().iter().zip(c.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data).expect("same shape");
        let ng = self.needs(a);
        self.push(Cow::Owned(out), Op::MulConst(a, c), ng, "mul_const")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.needs(a);
        self.push(Cow::Owned(out), Op::Scale(a, s), ng, "scale")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let ng = self.needs(a);
        self.push(Cow::Owned(out), Op::Relu(a), ng, "relu")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let ng = self.needs(a);
        self.push(Cow::Owned(out), Op::Tanh(a), ng, "tanh")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let ng = self.needs(a);
        self.push(Cow::Owned(out), Op::Exp(a), ng, "exp")
    }

    /// Gradient passes only where `lo < x < hi`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        let ng = self.needs(a);
        self.push(Cow::Owned(out), Op::Clamp(a, lo, hi), ng, "clamp")
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_same(a, b, "minimum", f64::min);
        let ng = self.needs(a) || self.needs(b);
        self.push(Cow::Owned(out), Op::Minimum(a, b), ng, "minimum")
    }

    /// Sum of all entries as a 1×1 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(Cow::Owned(out), Op::Sum(a), ng, "sum")
    }

    /// `sparse · a`
    pub fn spmm(&mut self, sparse: Arc<SparseMatrix>, a: Var) -> Var {
        let x = self.value(a);
        if sparse.cols() != x.rows() {
            shape_err("spmm", format!("{}x{} · {:?}", sparse.rows(), sparse.cols(), x.shape()));
        }
        let out = sparse.matmul(x);
        let ng = self.needs(a);
        self.push(Cow::Owned(out), Op::SpMM(sparse, a), ng, "spmm")
    }

    /// One output row per segment holding the column sums of its rows;
    /// empty segments give zero rows.
    pub fn segment_sum(&mut self, a: Var, segments: Segments) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(segments.len(), x.cols());
        for (s, range) in segments.iter().enumerate() {
            for r in range.clone() {
                for (o, v) in out.row_mut(s).iter_mut().zip(x.row(r)) {
                    *o += v;
                }
            }
        }
        let ng = self.needs(a);
        self.push(Cow::Owned(out), Op::SegmentSum(a, segments), ng, "segment_sum")
    }

    pub fn gather(&mut self, a: Var, rows: Vec<usize>) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(rows.len(), x.cols());
        for (o, &r) in rows.iter().enumerate() {
            out.row_mut(o).copy_from_slice(x.row(r));
        }
        let ng = self.needs(a);
        self.push(Cow::Owned(out), Op::Gather(a, rows), ng, "gather")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let x = self.value(p);
            if x.rows() != rows {
                shape_err("concat_cols", format!("{} rows vs {rows}", x.rows()));
            }
            for r in 0..rows {
                out.row_mut(r)[offset..offset + x.cols()].copy_from_slice(x.row(r));
            }
            offset += x.cols();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Cow::Owned(out), Op::ConcatCols(parts.to_vec()), ng, "concat_cols")
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..x.rows() {
            let row = out.row_mut(r);
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let ng = self.needs(a);
        self.push(Cow::Owned(out), Op::LogSoftmax(a), ng, "log_softmax")
    }

    /// Row-wise `softmax(a / temperature)`.
    pub fn softmax(&mut self, a: Var, temperature: f64) -> Var {
        let out = softmax_rows(self.value(a), temperature);
        let ng = self.needs(a);
        self.push(Cow::Owned(out), Op::Softmax(a, temperature), ng, "softmax")
    }

    /// Hard row-wise argmax one-hot forward; the Jacobian of
    /// `softmax(a / temperature)` backward.
    pub fn straight_through(&mut self, a: Var, temperature: f64) -> Var {
        let x = self.value(a);
        let idx: Vec<usize> = (0..x.rows()).map(|r| x.argmax_row(r)).collect();
        let out = Tensor::one_hot(&idx, x.cols());
        let ng = self.needs(a);
        self.push(Cow::Owned(out), Op::StraightThrough(a, temperature), ng, "straight_through")
    }

    /// Row-wise cyclic shift of `z` by the distribution `m` over shift amounts.
    pub fn cyclic_shift(&mut self, z: Var, m: Var, dir: ShiftDir) -> Var {
        let (zv, mv) = (self.value(z), self.value(m));
        if zv.shape() != mv.shape() {
            shape_err("cyclic_shift", format!("{:?} vs {:?}", zv.shape(), mv.shape()));
        }
        let t = zv.cols();
        let mut out = Tensor::zeros(zv.rows(), t);
        for r in 0..zv.rows() {
            let (zr, mr) = (zv.row(r), mv.row(r));
            let o = out.row_mut(r);
            for (u, &w) in mr.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (s, os) in o.iter_mut().enumerate() {
                    *os += w * zr[shift_index(s, u, t, dir)];
                }
            }
        }
        let ng = self.needs(z) || self.needs(m);
        self.push(Cow::Owned(out), Op::CyclicShift(z, m, dir), ng, "cyclic_shift")
    }

    /// `a` (T×t) against the single row `b` (1×t): a T×1 column of dot products.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        if y.rows() != 1 || y.cols() != x.cols() {
            shape_err("row_dot", format!("{:?} vs {:?}", x.shape(), y.shape()));
        }
        let data = (0..x.rows()).map(|r| x.row(r).iter().zip(y.data()).map(|(p, q)| p * q).sum()).collect();
        let out = Tensor::from_vec(x.rows(), 1, data).expect("column");
        let ng = self.needs(a) || self.needs(b);
        self.push(Cow::Owned(out), Op::RowDot(a, b), ng, "row_dot")
    }

    /// Batch normalization with statistics computed over the rows of each
    /// segment separately (biased variance).
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, segments: Segments, eps: f64) -> Var {
        let xv = self.value(x);
        let cols = xv.cols();
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.shape() != (1, cols) || b.shape() != (1, cols) {
            shape_err("batch_norm_train", format!("{cols} features, affine {:?}/{:?}", g.shape(), b.shape()));
        }
        let mut xhat = Tensor::zeros(xv.rows(), cols);
        let mut out = Tensor::zeros(xv.rows(), cols);
        let mut mean = vec![0.0; segments.len() * cols];
        let mut var = vec![0.0; segments.len() * cols];
        let mut inv_std = vec![0.0; segments.len() * cols];
        for (s, range) in segments.iter().enumerate() {
            if range.is_empty() {
                continue;
            }
            let n = range.len() as f64;
            let m = &mut mean[s * cols..(s + 1) * cols];
            for r in range.clone() {
                for (acc, v) in m.iter_mut().zip(xv.row(r)) {
                    *acc += v;
                }
            }
            m.iter_mut().for_each(|v| *v /= n);
            let va = &mut var[s * cols..(s + 1) * cols];
            for r in range.clone() {
                for ((acc, v), mu) in va.iter_mut().zip(xv.row(r)).zip(m.iter()) {
                    *acc += (v - mu) * (v - mu);
                }
            }
            va.iter_mut().for_each(|v| *v /= n);
            let is = &mut inv_std[s * cols..(s + 1) * cols];
            for (i, v) in is.iter_mut().zip(va.iter()) {
                *i = 1.0 / (v + eps).sqrt();
            }
            for r in range.clone() {
                for c in 0..cols {
                    let h = (xv.get(r, c) - m[c]) * is[c];
                    xhat.set(r, c, h);
                    out.set(r, c, g.data()[c] * h + b.data()[c]);
                }
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let saved = BnTrainSaved { x, gamma, beta, segments, xhat, mean, var, inv_std };
        self.push(Cow::Owned(out), Op::BatchNormTrain(Box::new(saved)), ng, "batch_norm_train")
    }

    /// Batch normalization with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &Tensor, var: &Tensor, eps: f64) -> Var {
        let xv = self.value(x);
        let cols = xv.cols();
        let inv_std: Vec<f64> = var.data().iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut xhat = Tensor::zeros(xv.rows(), cols);
        let mut out = Tensor::zeros(xv.rows(), cols);
        for r in 0..xv.rows() {
            for c in 0..cols {
                let h = (xv.get(r, c) - mean.data()[c]) * inv_std[c];
                xhat.set(r, c, h);
                out.set(r, c, g.data()[c] * h + b.data()[c]);
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let saved = BnEvalSaved { x, gamma, beta, xhat, inv_std };
        self.push(Cow::Owned(out), Op::BatchNormEval(Box::new(saved)), ng, "batch_norm_eval")
    }

    /// Mean over non-empty segments of the per-segment mean and variance of a
    /// [`Tape::batch_norm_train`] node, with the number of segments used.
    pub fn batch_norm_stats(&self, v: Var) -> Option<(Vec<f64>, Vec<f64>, usize)> {
        let Op::BatchNormTrain(saved) = &self.nodes[v.0].op else { return None };
        let cols = saved.xhat.cols();
        let mut mean = vec![0.0; cols];
        let mut var = vec![0.0; cols];
        let mut used = 0;
        for (s, range) in saved.segments.iter().enumerate() {
            if range.is_empty() {
                continue;
            }
            used += 1;
            for c in 0..cols {
                mean[c] += saved.mean[s * cols + c];
                var[c] += saved.var[s * cols + c];
            }
        }
        if used > 0 {
            for c in 0..cols {
                mean[c] /= used as f64;
                var[c] /= used as f64;
            }
        }
        Some((mean, var, used))
    }

    /// Gradients of the 1×1 `root` with respect to every parameter of the
    /// store. Parameters the trace never touched get zero gradients.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TraceConsumed);
        }
        self.consumed = true;
        self.check_finite()?;
        if self.value(root).shape() != (1, 1) {
            return Err(Error::Shape { op: "backward", detail: format!("root is {:?}, expected 1x1", self.value(root).shape()) });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::zeros(self.store);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.backprop(idx, g, &mut grads, &mut out);
        }
        if !out.is_finite() {
            return Err(Error::NonFinite("backward"));
        }
        Ok(out)
    }

    fn backprop(&self, idx: usize, g: Tensor, grads: &mut [Option<Tensor>], out: &mut Gradients) {
        let node = &self.nodes[idx];
        let y = &*node.value;
        let mut send = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => out.accumulate(*id, &g),
            Op::MatMul(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                let (m, k, n) = (x.rows(), x.cols(), w.cols());
                if self.needs(*a) {
                    let mut ga = Tensor::zeros(m, k);
                    matmul_nt_acc(g.data(), w.data(), ga.data_mut(), m, k, n);
                    send(*a, ga);
                }
                if self.needs(*b) {
                    let mut gb = Tensor::zeros(k, n);
                    matmul_tn_acc(x.data(), g.data(), gb.data_mut(), m, k, n);
                    send(*b, gb);
                }
            }
            Op::AddRow(a, row) => {
                if self.needs(*row) {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gr.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    send(*row, gr);
                }
                send(*a, g);
            }
            Op::Add(a, b) => {
                if self.needs(*b) {
                    send(*b, g.clone());
                }
                send(*a, g);
            }
            Op::Sub(a, b) => {
                if self.needs(*b) {
                    send(*b, g.map(|v| -v));
                }
                send(*a, g);
            }
            Op::Mul(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    send(*a, elementwise(&g, w, |p, q| p * q));
                }
                if self.needs(*b) {
                    send(*b, elementwise(&g, x, |p, q| p * q));
                }
            }
            Op::MulConst(a, c) => send(*a, elementwise(&g, c, |p, q| p * q)),
            Op::Scale(a, s) => send(*a, g.map(|v| v * s)),
            Op::Relu(a) => send(*a, elementwise(&g, y, |p, q| if q > 0.0 { p } else { 0.0 })),
            Op::Tanh(a) => send(*a, elementwise(&g, y, |p, q| p * (1.0 - q * q))),
            Op::Exp(a) => send(*a, elementwise(&g, y, |p, q| p * q)),
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                send(*a, elementwise(&g, x, |p, q| if q > *lo && q < *hi { p } else { 0.0 }));
            }
            Op::Minimum(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                let take_a = |i: usize| x.data()[i] <= w.data()[i];
                if self.needs(*a) {
                    let data = g.data().iter().enumerate().map(|(i, &v)| if take_a(i) { v } else { 0.0 }).collect();
                    send(*a, Tensor::from_vec(g.rows(), g.cols(), data).expect("shape"));
                }
                if self.needs(*b) {
                    let data = g.data().iter().enumerate().map(|(i, &v)| if take_a(i) { 0.0 } else { v }).collect();
                    send(*b, Tensor::from_vec(g.rows(), g.cols(), data).expect("shape"));
                }
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                send(*a, Tensor::filled(x.rows(), x.cols(), g.item()));
            }
            Op::SpMM(sparse, a) => send(*a, sparse.matmul_transposed(&g)),
            Op::SegmentSum(a, segments) => {
                let x = self.value(*a);
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                for (s, range) in segments.iter().enumerate() {
                    for r in range.clone() {
                        ga.row_mut(r).copy_from_slice(g.row(s));
                    }
                }
                send(*a, ga);
            }
            Op::Gather(a, rows) => {
                let x = self.value(*a);
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                for (o, &r) in rows.iter().enumerate() {
                    for (acc, v) in ga.row_mut(r).iter_mut().zip(g.row(o)) {
                        *acc += v;
                    }
                }
                send(*a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if self.needs(p) {
                        let mut gp = Tensor::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        send(p, gp);
                    }
                    offset += cols;
                }
            }
            Op::LogSoftmax(a) => {
                let mut ga = g.clone();
                for r in 0..g.rows() {
                    let total: f64 = g.row(r).iter().sum();
                    for (o, &ly) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                        *o -= ly.exp() * total;
                    }
                }
                send(*a, ga);
            }
            Op::Softmax(a, temperature) => send(*a, softmax_backward(y, &g, *temperature)),
            Op::StraightThrough(a, temperature) => {
                let p = softmax_rows(self.value(*a), *temperature);
                send(*a, softmax_backward(&p, &g, *temperature));
            }
            Op::CyclicShift(z, m, dir) => {
                let (zv, mv) = (self.value(*z), self.value(*m));
                let t = zv.cols();
                let mut gz = Tensor::zeros(zv.rows(), t);
                let mut gm = Tensor::zeros(zv.rows(), t);
                for r in 0..zv.rows() {
                    let (zr, mr, gr) = (zv.row(r), mv.row(r), g.row(r));
                    for u in 0..t {
                        let mut dm = 0.0;
                        for s in 0..t {
                            let src = shift_index(s, u, t, *dir);
                            dm += gr[s] * zr[src];
                            gz.row_mut(r)[src] += mr[u] * gr[s];
                        }
                        gm.row_mut(r)[u] = dm;
                    }
                }
                if self.needs(*m) {
                    send(*m, gm);
                }
                send(*z, gz);
            }
            Op::RowDot(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut ga = Tensor::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let gr = g.get(r, 0);
                        for (o, q) in ga.row_mut(r).iter_mut().zip(w.data()) {
                            *o = gr * q;
                        }
                    }
                    send(*a, ga);
                }
                if self.needs(*b) {
                    let mut gb = Tensor::zeros(1, x.cols());
                    for r in 0..x.rows() {
                        let gr = g.get(r, 0);
                        for (o, p) in gb.data_mut().iter_mut().zip(x.row(r)) {
                            *o += gr * p;
                        }
                    }
                    send(*b, gb);
                }
            }
            Op::BatchNormTrain(saved) => {
                let cols = saved.xhat.cols();
                let gamma = self.value(saved.gamma).data().to_vec();
                let (dgamma, dbeta) = affine_grads(&g, &saved.xhat);
                if self.needs(saved.x) {
                    let mut gx = Tensor::zeros(g.rows(), cols);
                    for (s, range) in saved.segments.iter().enumerate() {
                        if range.is_empty() {
                            continue;
                        }
                        let n = range.len() as f64;
                        for c in 0..cols {
                            let (mut sum_d, mut sum_dx) = (0.0, 0.0);
                            for r in range.clone() {
                                let d = g.get(r, c) * gamma[c];
                                sum_d += d;
                                sum_dx += d * saved.xhat.get(r, c);
                            }
                            let is = saved.inv_std[s * cols + c];
                            for r in range.clone() {
                                let d = g.get(r, c) * gamma[c];
                                gx.set(r, c, is / n * (n * d - sum_d - saved.xhat.get(r, c) * sum_dx));
                            }
                        }
                    }
                    send(saved.x, gx);
                }
                send(saved.gamma, dgamma);
                send(saved.beta, dbeta);
            }
            Op::BatchNormEval(saved) => {
                let gamma = self.value(saved.gamma).data().to_vec();
                let (dgamma, dbeta) = affine_grads(&g, &saved.xhat);
                if self.needs(saved.x) {
                    let mut gx = g.clone();
                    for r in 0..g.rows() {
                        for (c, v) in gx.row_mut(r).iter_mut().enumerate() {
                            *v *= gamma[c] * saved.inv_std[c];
                        }
                    }
                    send(saved.x, gx);
                }
                send(saved.gamma, dgamma);
                send(saved.beta, dbeta);
            }
        }
    }
}

fn shift_index(s: usize, u: usize, t: usize, dir: ShiftDir) -> usize {
    match dir {
        ShiftDir::Forward => (s + t - u) % t,
        ShiftDir::Inverse => (s + u) % t,
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn affine_grads(g: &Tensor, xhat: &Tensor) -> (Tensor, Tensor) {
    let cols = g.cols();
    let mut dgamma = Tensor::zeros(1, cols);
    let mut dbeta = Tensor::zeros(1, cols);
    for r in 0..g.rows() {
        for c in 0..cols {
            dgamma.data_mut()[c] += g.get(r, c) * xhat.get(r, c);
            dbeta.data_mut()[c] += g.get(r, c);
        }
    }
    (dgamma, dbeta)
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Row-wise `softmax(x / temperature)`.
pub fn softmax_rows(x: &Tensor, temperature: f64) -> Tensor {
    let mut out = x.map(|v| v / temperature);
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Vector-Jacobian product of `p = softmax(x / temperature)` at `p`.
fn softmax_backward(p: &Tensor, g: &Tensor, temperature: f64) -> Tensor {
    let mut out = Tensor::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let dot: f64 = p.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
        for ((o, &pv), &gv) in out.row_mut(r).iter_mut().zip(p.row(r)).zip(g.row(r)) {
            *o = pv * (gv - dot) / temperature;
        }
    }
    out
}
