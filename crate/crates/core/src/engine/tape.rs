//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! Every operation appends a node whose parents already exist on the tape,
//! so node order is a topological order and the graph cannot contain a
//! cycle. `backward` walks the nodes in reverse and accumulates adjoints.
//!
//! Nodes only carry gradients when some leaf beneath them asks for one
//! (parameters and [`Tape::variable`] inputs). Constant inputs such as the
//! encoded image never receive an adjoint, which skips the largest matrix
//! product in the backward pass when nothing upstream is trainable.

use std::borrow::Cow;
use std::sync::Arc;

use super::{EngineError, Gradients, Matrix, ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    /// Adds a `1×cols` row to every row.
    AddRow(Var, Var),
    /// Multiplies every row elementwise by a `1×cols` row.
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    SoftmaxRows(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    Gather(Var, Arc<[usize]>),
    MeanRows(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
    requires_grad: bool,
}

/// Layer-norm variance floor. Kept tiny so normalized tokens have unit
/// variance to well below 1e-6 for any non-constant input.
pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    params: Vec<(Var, ParamId)>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Backprop {
    grads: Vec<Option<Matrix>>,
}

impl Backprop {
    /// Gradient of the loss with respect to `v`, if `v` was reachable and
    /// required one.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Matrix>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn owned(&mut self, value: Matrix, op: Op, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(Cow::Owned(m), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, m: &'a Matrix) -> Var {
        self.push(Cow::Borrowed(m), Op::Leaf, false)
    }

    /// Input whose gradient is wanted (read it back from [`Backprop::grad`]).
    pub fn variable(&mut self, m: Matrix) -> Var {
        self.push(Cow::Owned(m), Op::Leaf, true)
    }

    /// Borrows a parameter from `store`. Frozen parameters act as constants.
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let v = self.push(Cow::Borrowed(&p.value), Op::Leaf, !p.frozen);
        self.params.push((v, id));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.owned(out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`; the usual form for `x · Wᵀ` with `W` stored out×in.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        self.owned(out, Op::MatMulNt(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "add shape mismatch");
        let mut out = x.clone();
        out.add_assign(y);
        self.owned(out, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
        let data = x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| p * q).collect();
        let out = Matrix::from_vec(x.rows(), x.cols(), data);
        self.owned(out, Op::Mul(a, b), &[a, b])
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!(r.shape(), (1, x.cols()), "add_row expects a 1x{} row", x.cols());
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.as_slice()) {
                *o += b;
            }
        }
        self.owned(out, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!(r.shape(), (1, x.cols()), "mul_row expects a 1x{} row", x.cols());
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, s) in out.row_mut(i).iter_mut().zip(r.as_slice()) {
                *o *= s;
            }
        }
        self.owned(out, Op::MulRow(a, row), &[a, row])
    }

    /// `x · Wᵀ + b` with `W` stored `out×in` and `b` a `1×out` row.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let y = self.matmul_nt(x, w);
        match b {
            Some(b) => self.add_row(y, b),
            None => y,
        }
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.owned(out, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.owned(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.owned(out, Op::Sigmoid(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.owned(out, Op::Gelu(a), &[a])
    }

    /// Row-wise layer normalization followed by `γ ⊙ x̂ + β`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        assert_eq!(self.value(gamma).shape(), (1, cols), "layer_norm gamma shape");
        assert_eq!(self.value(beta).shape(), (1, cols), "layer_norm beta shape");
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, gi), bi) in out.row_mut(r).iter_mut().zip(g.as_slice()).zip(b.as_slice()) {
                *o = *o * gi + bi;
            }
        }
        self.owned(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.owned(out, Op::SoftmaxRows(a), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.rows(), "slice_rows out of bounds");
        let cols = x.cols();
        let data = x.as_slice()[start * cols..(start + len) * cols].to_vec();
        self.owned(Matrix::from_vec(len, cols, data), Op::SliceRows(a, start), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols(), "slice_cols out of bounds");
        let mut out = Matrix::zeros(x.rows(), len);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.owned(out, Op::SliceCols(a, start), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(m.as_slice());
            rows += m.rows();
        }
        let out = Matrix::from_vec(rows, cols, data);
        self.owned(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let m = self.value(p);
                assert_eq!(m.rows(), rows, "concat_cols row mismatch");
                out.row_mut(r)[off..off + m.cols()].copy_from_slice(m.row(r));
                off += m.cols();
            }
        }
        self.owned(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let out = self.value(a).clone().reshaped(rows, cols);
        self.owned(out, Op::Reshape(a), &[a])
    }

    /// `out.flat[k] = a.flat[indices[k]]`, producing a `rows×cols` matrix.
    pub fn gather(&mut self, a: Var, indices: Arc<[usize]>, rows: usize, cols: usize) -> Var {
        assert_eq!(indices.len(), rows * cols, "gather index count");
        let src = self.value(a).as_slice();
        let data = indices.iter().map(|&i| src[i]).collect();
        let out = Matrix::from_vec(rows, cols, data);
        self.owned(out, Op::Gather(a, indices), &[a])
    }

    /// Column means as a `1×cols` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Matrix::zeros(1, x.cols());
        for r in 0..x.rows() {
            for (o, v) in out.as_mut_slice().iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        out.scale_in_place(1.0 / x.rows() as f64);
        self.owned(out, Op::MeanRows(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.owned(Matrix::from_vec(1, 1, vec![s]), Op::Sum(a), &[a])
    }

    /// `-log softmax(logits)[label]` for a `1×K` logit row, stabilized by
    /// log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var, EngineError> {
        let z = self.value(logits);
        if z.rows() != 1 {
            return Err(EngineError::ShapeMismatch(format!(
                "cross_entropy expects a single logit row, got {}x{}",
                z.rows(),
                z.cols()
            )));
        }
        if label >= z.cols() {
            return Err(EngineError::LabelOutOfRange {
                label,
                num_classes: z.cols(),
            });
        }
        let (loss, probs) = cross_entropy_with_probs(z.as_slice(), label);
        Ok(self.owned(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Backprop, EngineError> {
        self.backward_scaled(loss, 1.0)
    }

    /// Reverse pass seeded with `d loss = seed`, e.g. `1/B` for a batch mean
    /// assembled from per-sample tapes.
    pub fn backward_scaled(&self, loss: Var, seed: f64) -> Result<Backprop, EngineError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(EngineError::ShapeMismatch(format!(
                "backward needs a scalar loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, seed));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if self.nodes[id].requires_grad {
                self.propagate(id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Backprop { grads })
    }

    /// Collects parameter adjoints into store-shaped [`Gradients`];
    /// parameters not reached by the loss get zeros.
    pub fn param_gradients(&self, bp: &Backprop, store: &ParamStore) -> Gradients {
        let mut out = store.zero_grads();
        self.accumulate_param_gradients(bp, &mut out);
        out
    }

    /// Adds parameter adjoints into an existing gradient buffer.
    pub fn accumulate_param_gradients(&self, bp: &Backprop, out: &mut Gradients) {
        for &(v, id) in &self.params {
            if let Some(g) = bp.grad(v) {
                out.get_mut(id).add_assign(g);
            }
        }
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    let b = self.value(*b);
                    let slot = slot(grads, *a, g.rows(), b.rows());
                    super::matrix::gemm(g, false, b, true, slot, 1.0);
                }
                if self.rg(*b) {
                    let a = self.value(*a);
                    let slot = slot(grads, *b, a.cols(), g.cols());
                    super::matrix::gemm(a, true, g, false, slot, 1.0);
                }
            }
            Op::MatMulNt(a, b) => {
                if self.rg(*a) {
                    let b = self.value(*b);
                    let slot = slot(grads, *a, g.rows(), b.cols());
                    super::matrix::gemm(g, false, b, false, slot, 1.0);
                }
                if self.rg(*b) {
                    let a = self.value(*a);
                    let slot = slot(grads, *b, g.cols(), a.cols());
                    super::matrix::gemm(g, true, a, false, slot, 1.0);
                }
            }
            Op::Add(a, b) => {
                for p in [a, b] {
                    if self.rg(*p) {
                        slot(grads, *p, g.rows(), g.cols()).add_assign(g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    accumulate_zip(slot(grads, *a, g.rows(), g.cols()), g, y);
                }
                if self.rg(*b) {
                    accumulate_zip(slot(grads, *b, g.rows(), g.cols()), g, x);
                }
            }
            Op::AddRow(a, row) => {
                if self.rg(*a) {
                    slot(grads, *a, g.rows(), g.cols()).add_assign(g);
                }
                if self.rg(*row) {
                    let s = slot(grads, *row, 1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in s.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::MulRow(a, row) => {
                let (x, rv) = (self.value(*a), self.value(*row));
                if self.rg(*a) {
                    let s = slot(grads, *a, g.rows(), g.cols());
                    for r in 0..g.rows() {
                        for ((o, gv), f) in s.row_mut(r).iter_mut().zip(g.row(r)).zip(rv.as_slice()) {
                            *o += gv * f;
                        }
                    }
                }
                if self.rg(*row) {
                    let s = slot(grads, *row, 1, g.cols());
                    for r in 0..g.rows() {
                        for ((o, gv), xv) in s.as_mut_slice().iter_mut().zip(g.row(r)).zip(x.row(r)) {
                            *o += gv * xv;
                        }
                    }
                }
            }
            Op::Scale(a, f) => {
                let s = slot(grads, *a, g.rows(), g.cols());
                for (o, v) in s.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *o += f * v;
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let s = slot(grads, *a, g.rows(), g.cols());
                for ((o, gv), xv) in s.as_mut_slice().iter_mut().zip(g.as_slice()).zip(x.as_slice()) {
                    if *xv > 0.0 {
                        *o += gv;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let s = slot(grads, *a, g.rows(), g.cols());
                for ((o, gv), yv) in s.as_mut_slice().iter_mut().zip(g.as_slice()).zip(y.as_slice()) {
                    *o += gv * yv * (1.0 - yv);
                }
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                let s = slot(grads, *a, g.rows(), g.cols());
                for ((o, gv), xv) in s.as_mut_slice().iter_mut().zip(g.as_slice()).zip(x.as_slice()) {
                    *o += gv * gelu_grad(*xv);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = g.shape();
                if self.rg(*gamma) {
                    let s = slot(grads, *gamma, 1, cols);
                    for r in 0..rows {
                        for ((o, gv), xh) in s.as_mut_slice().iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                            *o += gv * xh;
                        }
                    }
                }
                if self.rg(*beta) {
                    let s = slot(grads, *beta, 1, cols);
                    for r in 0..rows {
                        for (o, gv) in s.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                }
                if self.rg(*x) {
                    let gam = self.value(*gamma).as_slice().to_vec();
                    let s = slot(grads, *x, rows, cols);
                    let n = cols as f64;
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..rows {
                        for ((d, gv), gm) in dxhat.iter_mut().zip(g.row(r)).zip(&gam) {
                            *d = gv * gm;
                        }
                        let xh = xhat.row(r);
                        let mean_d = dxhat.iter().sum::<f64>() / n;
                        let mean_dx = dxhat.iter().zip(xh).map(|(d, x)| d * x).sum::<f64>() / n;
                        for ((o, d), xv) in s.row_mut(r).iter_mut().zip(&dxhat).zip(xh) {
                            *o += inv_std[r] * (d - mean_d - xv * mean_dx);
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let s = slot(grads, *a, g.rows(), g.cols());
                for r in 0..g.rows() {
                    let yr = y.row(r);
                    let dot: f64 = g.row(r).iter().zip(yr).map(|(gv, yv)| gv * yv).sum();
                    for ((o, gv), yv) in s.row_mut(r).iter_mut().zip(g.row(r)).zip(yr) {
                        *o += yv * (gv - dot);
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let src = self.value(*a);
                let s = slot(grads, *a, src.rows(), src.cols());
                for r in 0..g.rows() {
                    for (o, v) in s.row_mut(start + r).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }
            Op::SliceCols(a, start) => {
                let src = self.value(*a);
                let s = slot(grads, *a, src.rows(), src.cols());
                for r in 0..g.rows() {
                    for (o, v) in s.row_mut(r)[*start..*start + g.cols()].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let (pr, pc) = self.value(*p).shape();
                    if self.rg(*p) {
                        let s = slot(grads, *p, pr, pc);
                        for r in 0..pr {
                            for (o, v) in s.row_mut(r).iter_mut().zip(g.row(off + r)) {
                                *o += v;
                            }
                        }
                    }
                    off += pr;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let (pr, pc) = self.value(*p).shape();
                    if self.rg(*p) {
                        let s = slot(grads, *p, pr, pc);
                        for r in 0..pr {
                            for (o, v) in s.row_mut(r).iter_mut().zip(&g.row(r)[off..off + pc]) {
                                *o += v;
                            }
                        }
                    }
                    off += pc;
                }
            }
            Op::Reshape(a) => {
                let (r, c) = self.value(*a).shape();
                let s = slot(grads, *a, r, c);
                for (o, v) in s.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *o += v;
                }
            }
            Op::Gather(a, indices) => {
                let (r, c) = self.value(*a).shape();
                let s = slot(grads, *a, r, c).as_mut_slice();
                for (&i, v) in indices.iter().zip(g.as_slice()) {
                    s[i] += v;
                }
            }
            Op::MeanRows(a) => {
                let (r, c) = self.value(*a).shape();
                let s = slot(grads, *a, r, c);
                let inv = 1.0 / r as f64;
                for i in 0..r {
                    for (o, v) in s.row_mut(i).iter_mut().zip(g.as_slice()) {
                        *o += v * inv;
                    }
                }
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                let gv = g[(0, 0)];
                for o in slot(grads, *a, r, c).as_mut_slice() {
                    *o += gv;
                }
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                let gv = g[(0, 0)];
                let s = slot(grads, *logits, 1, probs.len());
                for (k, (o, p)) in s.as_mut_slice().iter_mut().zip(probs).enumerate() {
                    let target = if k == *label { 1.0 } else { 0.0 };
                    *o += gv * (p - target);
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Matrix>], v: Var, rows: usize, cols: usize) -> &mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(rows, cols))
}

fn accumulate_zip(out: &mut Matrix, g: &Matrix, other: &Matrix) {
    for ((o, gv), x) in out.as_mut_slice().iter_mut().zip(g.as_slice()).zip(other.as_slice()) {
        *o += gv * x;
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
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

/// Cross-entropy loss and softmax probabilities of one logit row.
pub(crate) fn cross_entropy_with_probs(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let log_z = max + sum_exp.ln();
    let probs = logits.iter().map(|z| (z - log_z).exp()).collect();
    (log_z - logits[label], probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut store = ParamStore::new(0);
        let p = store.insert("p", Matrix::row_vector(&[3.0, -1.0, 2.5]));
        let mut tape = Tape::new();
        let v = tape.param(&store, p);
        let loss = tape.sum(v);
        let bp = tape.backward(loss).unwrap();
        let grads = tape.param_gradients(&bp, &store);
        assert_eq!(grads.get(p).as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut store = ParamStore::new(0);
        let p = store.insert("p", Matrix::row_vector(&[1.0, 2.0]));
        let mut tape = Tape::new();
        let v = tape.param(&store, p);
        let sq = tape.mul(v, v);
        let loss = tape.sum(sq);
        let bp = tape.backward(loss).unwrap();
        let grads = tape.param_gradients(&bp, &store);
        assert_eq!(grads.get(p).as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn unreachable_params_get_zero_gradient() {
        let mut store = ParamStore::new(0);
        let used = store.insert("used", Matrix::row_vector(&[1.0]));
        let unused = store.insert("unused", Matrix::row_vector(&[5.0, 6.0]));
        let mut tape = Tape::new();
        let v = tape.param(&store, used);
        let loss = tape.sum(v);
        let bp = tape.backward(loss).unwrap();
        let grads = tape.param_gradients(&bp, &store);
        assert_eq!(grads.get(unused), &Matrix::zeros(1, 2));
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut store = ParamStore::new(0);
        let p = store.insert("p", Matrix::row_vector(&[1.0]));
        store.set_frozen(p, true);
        let mut tape = Tape::new();
        let v = tape.param(&store, p);
        let loss = tape.sum(v);
        let bp = tape.backward(loss).unwrap();
        assert!(bp.grad(v).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let v = tape.variable(Matrix::zeros(2, 2));
        assert!(matches!(tape.backward(v), Err(EngineError::ShapeMismatch(_))));
    }

    #[test]
    fn constants_do_not_collect_gradients() {
        let mut tape = Tape::new();
        let c = tape.constant(Matrix::row_vector(&[1.0, 2.0]));
        let x = tape.variable(Matrix::row_vector(&[3.0, 4.0]));
        let y = tape.mul(c, x);
        let loss = tape.sum(y);
        let bp = tape.backward(loss).unwrap();
        assert!(bp.grad(c).is_none());
        assert_eq!(bp.grad(x).unwrap().as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn shared_node_accumulates() {
        // loss = sum(x + x) → grad 2
        let mut tape = Tape::new();
        let x = tape.variable(Matrix::row_vector(&[1.0, -1.0]));
        let y = tape.add(x, x);
        let loss = tape.sum(y);
        let bp = tape.backward(loss).unwrap();
        assert_eq!(bp.grad(x).unwrap().as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn gelu_reference_values() {
        assert_eq!(gelu(0.0), 0.0);
        // Φ(1) = 0.841344746068543
        assert!((gelu(1.0) - 0.841_344_746_068_543).abs() < 1e-12);
        assert!((gelu(-1.0) + 0.158_655_253_931_457).abs() < 1e-12);
    }
}
