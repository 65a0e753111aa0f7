//! Reverse-mode differentiation over a linear record of operations.
//!
//! A [`Tape`] owns every value produced during one forward pass. Values are
//! addressed through [`Var`] handles; operations append a node and return
//! the handle of its output. [`Tape::backward`] walks the record once in
//! reverse and accumulates gradients into every node that requires them.

use crate::error::{CignError, Result};
use crate::numerics::tensor::{axis_split, matmul_raw, transpose_raw, Tensor};

/// Norm floor below which cosine similarity is rejected.
pub const COSINE_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    None,
    Lhs,
    Rhs,
}

#[derive(Debug, Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Binary(BinaryKind, Var, Var, Broadcast),
    Scale(Var, f64),
    Shift(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Sum(Var, usize),
    Mean(Var, usize),
    SumAll(Var),
    Max(Var, usize, Vec<usize>),
    Concat(Vec<Var>, usize),
    SliceRows(Var, usize),
    Reshape(Var),
    Clamp(Var, f64, f64),
    CosineSim(Var, Var, f64, f64),
    StraightThroughOneHot(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    corrupt_sigmoid: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose sigmoid backward rule drops the `(1 - y)` factor. Only
    /// used to demonstrate that gradient checking catches broken rules.
    pub fn with_corrupted_backward() -> Self {
        Tape {
            corrupt_sigmoid: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        let rank = self.value(x).rank();
        if axis >= rank {
            return Err(CignError::InvalidAxis { op, axis, rank });
        }
        Ok(())
    }

    fn dims2_strict(&self, op: &'static str, x: Var) -> Result<(usize, usize)> {
        let t = self.value(x);
        match t.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(CignError::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            }),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2_strict("matmul", a)?;
        let (k2, n) = self.dims2_strict("matmul", b)?;
        if k != k2 {
            return Err(CignError::Shape {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push_op(t, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2_strict("transpose", a)?;
        let t = Tensor::new(vec![c, r], transpose_raw(self.value(a).data(), r, c))?;
        Ok(self.push_op(t, Op::Transpose(a), &[a]))
    }

    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(Broadcast::None);
        }
        let trailing_eq = sa.len() == sb.len() && sa[1..] == sb[1..];
        if trailing_eq && sb[0] == 1 {
            Ok(Broadcast::Rhs)
        } else if trailing_eq && sa[0] == 1 {
            Ok(Broadcast::Lhs)
        } else {
            Err(CignError::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        let bc = self.broadcast_kind(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = if bc == Broadcast::Lhs {
            tb.shape().to_vec()
        } else {
            ta.shape().to_vec()
        };
        let numel: usize = out_shape.iter().product();
        let (na, nb) = (ta.numel(), tb.numel());
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let data: Vec<f64> = (0..numel)
            .map(|i| f(ta.data()[i % na], tb.data()[i % nb]))
            .collect();
        if matches!(kind, BinaryKind::Div) && tb.data().iter().any(|&v| v == 0.0) {
            return Err(CignError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let t = Tensor::new(out_shape, data)?;
        Ok(self.push_op(t, Op::Binary(kind, a, b, bc), &[a, b]))
    }

    /// Elementwise sum; either operand may have leading extent 1 and is then
    /// broadcast over the other's leading extent.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut t = self.value(a).clone();
        t.data_mut().iter_mut().for_each(|v| *v *= s);
        self.push_op(t, Op::Scale(a, s), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let mut t = self.value(a).clone();
        t.data_mut().iter_mut().for_each(|v| *v += c);
        self.push_op(t, Op::Shift(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        t.data_mut().iter_mut().for_each(|v| *v = v.exp());
        self.push_op(t, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let mut t = self.value(a).clone();
        if let Some(bad) = t.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(CignError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        t.data_mut().iter_mut().for_each(|v| *v = v.ln());
        Ok(self.push_op(t, Op::Log(a), &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        t.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        self.push_op(t, Op::Sigmoid(a), &[a])
    }

    /// Softmax along `axis`, stabilized by subtracting the slice maximum.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", a, axis)?;
        let x = self.value(a);
        let (outer, n, inner) = axis_split(x.shape(), axis);
        let mut out = x.clone();
        let data = out.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| data[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for j in 0..n {
                    let e = (data[idx(j)] - max).exp();
                    data[idx(j)] = e;
                    denom += e;
                }
                for j in 0..n {
                    data[idx(j)] /= denom;
                }
            }
        }
        Ok(self.push_op(out, Op::Softmax(a, axis), &[a]))
    }

    /// `x - logsumexp(x)` along `axis`; finite wherever the input is.
    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", a, axis)?;
        let x = self.value(a);
        let (outer, n, inner) = axis_split(x.shape(), axis);
        let mut out = x.clone();
        let data = out.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| data[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..n).map(|j| (data[idx(j)] - max).exp()).sum::<f64>().ln();
                for j in 0..n {
                    data[idx(j)] -= lse;
                }
            }
        }
        Ok(self.push_op(out, Op::LogSoftmax(a, axis), &[a]))
    }

    fn reduce_axis(&self, a: Var, axis: usize, f: impl Fn(&[f64]) -> (f64, usize)) -> (Tensor, Vec<usize>) {
        let x = self.value(a);
        let (outer, n, inner) = axis_split(x.shape(), axis);
        let mut shape = x.shape().to_vec();
        shape[axis] = 1;
        let mut data = Vec::with_capacity(outer * inner);
        let mut picks = Vec::with_capacity(outer * inner);
        let mut slice = vec![0.0; n];
        for o in 0..outer {
            for i in 0..inner {
                for (j, s) in slice.iter_mut().enumerate() {
                    *s = x.data()[(o * n + j) * inner + i];
                }
                let (v, k) = f(&slice);
                data.push(v);
                picks.push(k);
            }
        }
        (Tensor::new(shape, data).expect("reduced shape"), picks)
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("sum", a, axis)?;
        let (t, _) = self.reduce_axis(a, axis, |s| (s.iter().sum(), 0));
        Ok(self.push_op(t, Op::Sum(a, axis), &[a]))
    }

    /// Mean along `axis`, keeping it with extent 1.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("mean", a, axis)?;
        let (t, _) = self.reduce_axis(a, axis, |s| (s.iter().sum::<f64>() / s.len() as f64, 0));
        Ok(self.push_op(t, Op::Mean(a, axis), &[a]))
    }

    /// Maximum along `axis`; the gradient flows to the first maximal element.
    pub fn max(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("max", a, axis)?;
        let (t, picks) = self.reduce_axis(a, axis, |s| {
            let mut best = 0;
            for (j, v) in s.iter().enumerate() {
                if *v > s[best] {
                    best = j;
                }
            }
            (s[best], best)
        });
        Ok(self.push_op(t, Op::Max(a, axis, picks), &[a]))
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        self.push_op(t, Op::SumAll(a), &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| CignError::config("concat of empty list"))?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        for &p in &parts[1..] {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(CignError::Shape {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|&p| self.shape(p)[axis]).sum();
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let n = t.shape()[axis];
                data.extend_from_slice(&t.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let t = Tensor::new(shape, data)?;
        Ok(self.push_op(t, Op::Concat(parts.to_vec(), axis), parts))
    }

    /// Rows `[start, end)` of a rank-2 tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, _) = self.dims2_strict("slice_rows", a)?;
        if start >= end || end > rows {
            return Err(CignError::Shape {
                op: "slice_rows",
                lhs: self.shape(a).to_vec(),
                rhs: vec![start, end],
            });
        }
        let t = self.value(a).slice_rows(start, end);
        Ok(self.push_op(t, Op::SliceRows(a, start), &[a]))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        self.slice_rows(a, r, r + 1)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        Ok(self.push_op(t, Op::Reshape(a), &[a]))
    }

    /// Clamps into `[lo, hi]`; elements outside the range receive no gradient.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let mut t = self.value(a).clone();
        t.data_mut().iter_mut().for_each(|v| *v = v.clamp(lo, hi));
        self.push_op(t, Op::Clamp(a, lo, hi), &[a])
    }

    /// Cosine similarity of two equally sized tensors viewed as flat vectors.
    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.numel() != tb.numel() {
            return Err(CignError::Shape {
                op: "cosine_sim",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (na, nb) = (norm(ta.data()), norm(tb.data()));
        if na <= COSINE_EPS || nb <= COSINE_EPS {
            return Err(CignError::DegenerateVector {
                op: "cosine_sim",
                eps: COSINE_EPS,
            });
        }
        let dot: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        let t = Tensor::scalar(dot / (na * nb));
        Ok(self.push_op(t, Op::CosineSim(a, b, na, nb), &[a, b]))
    }

    /// One-hot of the argmax along `axis` in the forward pass; the backward
    /// pass hands the incoming gradient straight to `a`.
    pub fn straight_through_one_hot(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("straight_through_one_hot", a, axis)?;
        let x = self.value(a);
        let (outer, n, inner) = axis_split(x.shape(), axis);
        let mut out = Tensor::zeros(x.shape());
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let mut best = 0;
                for j in 1..n {
                    if x.data()[idx(j)] > x.data()[idx(best)] {
                        best = j;
                    }
                }
                out.data_mut()[idx(best)] = 1.0;
            }
        }
        Ok(self.push_op(out, Op::StraightThroughOneHot(a), &[a]))
    }

    /// Accumulates d`loss`/d`v` for every node `v` that requires gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if !self.value(loss).is_scalar() {
            return Err(CignError::NonScalar { shape });
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Tensor::full(&shape, 1.0));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g
                .data_mut()
                .iter_mut()
                .zip(contribution)
                .for_each(|(a, b)| *a += b),
            slot @ None => {
                let shape = self.nodes[v.0].value.shape().to_vec();
                *slot = Some(Tensor::new(shape, contribution).expect("gradient shape"));
            }
        }
    }

    fn propagate(&mut self, idx: usize, g: &Tensor) {
        let op = self.nodes[idx].op.clone();
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(a).dims2();
                let (_, n) = self.value(b).dims2();
                if self.requires_grad(a) {
                    let bt = transpose_raw(self.value(b).data(), k, n);
                    let da = matmul_raw(gd, &bt, m, n, k);
                    self.accumulate(a, da);
                }
                if self.requires_grad(b) {
                    let at = transpose_raw(self.value(a).data(), m, k);
                    let db = matmul_raw(&at, gd, k, m, n);
                    self.accumulate(b, db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(a).dims2();
                self.accumulate(a, transpose_raw(gd, c, r));
            }
            Op::Binary(kind, a, b, bc) => {
                let ta = self.value(a).data().to_vec();
                let tb = self.value(b).data().to_vec();
                let (na, nb) = (ta.len(), tb.len());
                let mut da = vec![0.0; na];
                let mut db = vec![0.0; nb];
                for (i, &go) in gd.iter().enumerate() {
                    let (x, y) = (ta[i % na], tb[i % nb]);
                    let (gx, gy) = match kind {
                        BinaryKind::Add => (go, go),
                        BinaryKind::Sub => (go, -go),
                        BinaryKind::Mul => (go * y, go * x),
                        BinaryKind::Div => (go / y, -go * x / (y * y)),
                    };
                    da[i % na] += gx;
                    db[i % nb] += gy;
                }
                debug_assert!(bc != Broadcast::Lhs || na <= nb);
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Scale(a, s) => self.accumulate(a, gd.iter().map(|v| v * s).collect()),
            Op::Shift(a) | Op::Reshape(a) | Op::StraightThroughOneHot(a) => {
                self.accumulate(a, gd.to_vec())
            }
            Op::Exp(a) => {
                let y = self.nodes[idx].value.data();
                let d = gd.iter().zip(y).map(|(g, y)| g * y).collect();
                self.accumulate(a, d);
            }
            Op::Log(a) => {
                let x = self.value(a).data();
                let d = gd.iter().zip(x).map(|(g, x)| g / x).collect();
                self.accumulate(a, d);
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[idx].value.data();
                let corrupt = self.corrupt_sigmoid;
                let d = gd
                    .iter()
                    .zip(y)
                    .map(|(g, y)| if corrupt { g * y } else { g * y * (1.0 - y) })
                    .collect();
                self.accumulate(a, d);
            }
            Op::Softmax(a, axis) => {
                let y = &self.nodes[idx].value;
                let (outer, n, inner) = axis_split(y.shape(), axis);
                let yd = y.data();
                let mut d = vec![0.0; yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + i;
                        let dot: f64 = (0..n).map(|j| gd[at(j)] * yd[at(j)]).sum();
                        for j in 0..n {
                            d[at(j)] = yd[at(j)] * (gd[at(j)] - dot);
                        }
                    }
                }
                self.accumulate(a, d);
            }
            Op::LogSoftmax(a, axis) => {
                let y = &self.nodes[idx].value;
                let (outer, n, inner) = axis_split(y.shape(), axis);
                let yd = y.data();
                let mut d = vec![0.0; yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + i;
                        let total: f64 = (0..n).map(|j| gd[at(j)]).sum();
                        for j in 0..n {
                            d[at(j)] = gd[at(j)] - yd[at(j)].exp() * total;
                        }
                    }
                }
                self.accumulate(a, d);
            }
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let shape = self.value(a).shape().to_vec();
                let (outer, n, inner) = axis_split(&shape, axis);
                let w = if matches!(op, Op::Mean(..)) {
                    1.0 / n as f64
                } else {
                    1.0
                };
                let mut d = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            d[(o * n + j) * inner + i] = gd[o * inner + i] * w;
                        }
                    }
                }
                self.accumulate(a, d);
            }
            Op::Max(a, axis, picks) => {
                let shape = self.value(a).shape().to_vec();
                let (outer, n, inner) = axis_split(&shape, axis);
                let mut d = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let k = picks[o * inner + i];
                        d[(o * n + k) * inner + i] = gd[o * inner + i];
                    }
                }
                self.accumulate(a, d);
            }
            Op::SumAll(a) => {
                let n = self.value(a).numel();
                self.accumulate(a, vec![gd[0]; n]);
            }
            Op::Concat(parts, axis) => {
                let shape = self.nodes[idx].value.shape().to_vec();
                let (outer, total, inner) = axis_split(&shape, axis);
                let mut offset = 0;
                for p in parts {
                    let n = self.value(p).shape()[axis];
                    let mut d = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        d.extend_from_slice(&gd[start..start + n * inner]);
                    }
                    offset += n;
                    self.accumulate(p, d);
                }
            }
            Op::SliceRows(a, start) => {
                let (rows, cols) = self.value(a).dims2();
                let mut d = vec![0.0; rows * cols];
                d[start * cols..start * cols + gd.len()].copy_from_slice(gd);
                self.accumulate(a, d);
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(g, x)| if *x < lo || *x > hi { 0.0 } else { *g })
                    .collect();
                self.accumulate(a, d);
            }
            Op::CosineSim(a, b, na, nb) => {
                let cos = self.nodes[idx].value.data()[0];
                let g0 = gd[0];
                let xa = self.value(a).data().to_vec();
                let xb = self.value(b).data().to_vec();
                let da = xa
                    .iter()
                    .zip(&xb)
                    .map(|(x, y)| g0 * (y / (na * nb) - cos * x / (na * na)))
                    .collect();
                let db = xa
                    .iter()
                    .zip(&xb)
                    .map(|(x, y)| g0 * (x / (na * nb) - cos * y / (nb * nb)))
                    .collect();
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity of two plain slices.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CignError::Shape {
            op: "cosine_sim",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na <= COSINE_EPS || nb <= COSINE_EPS {
        return Err(CignError::DegenerateVector {
            op: "cosine_sim",
            eps: COSINE_EPS,
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_basis() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::eye(2));
        let m = tape.constant(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let out = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.constant(t(&[vec![1.0, 0.0]]));
        let b = tape.constant(t(&[vec![0.0], vec![5.0]]));
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out).shape(), &[1, 1]);
        assert_eq!(tape.value(out).data(), &[0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn log_softmax_is_finite_where_softmax_underflows() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(&[0.0, 0.0]));
        let y = tape.log_softmax(x, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[-(2f64.ln()), -(2f64.ln())]);

        let x = tape.constant(Tensor::vector(&[0.0, -2000.0]));
        let y = tape.log_softmax(x, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, -2000.0]);
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(&[0.0, 0.0]));
        let y = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

        let x = tape.constant(Tensor::vector(&[2f64.ln(), 0.0]));
        let y = tape.softmax(x, 0).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] - 2.0 / 3.0).abs() < 1e-15 && (d[1] - 1.0 / 3.0).abs() < 1e-15);

        assert!(matches!(
            tape.softmax(x, 1),
            Err(CignError::InvalidAxis { .. })
        ));
    }

    #[test]
    fn softmax_axis_zero_on_matrix() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![1.0, 5.0], vec![1.0, -5.0]]));
        let y = tape.softmax(x, 0).unwrap();
        let v = tape.value(y);
        assert!((v.get2(0, 0) - 0.5).abs() < 1e-15);
        assert!((v.get2(0, 1) + v.get2(1, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).data(), &[0.5]);

        let a = tape.constant(Tensor::zeros(&[1, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let c = tape.concat(&[a, b], 0).unwrap();
        assert_eq!(tape.shape(c), &[3, 3]);

        let v = tape.constant(Tensor::vector(&[2.0, 4.0]));
        let m = tape.mean(v, 0).unwrap();
        assert_eq!(tape.value(m).data(), &[3.0]);
    }

    #[test]
    fn log_rejects_nonpositive() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(&[1.0, 0.0]));
        assert!(matches!(tape.log(x), Err(CignError::Domain { .. })));
    }

    #[test]
    fn broadcast_over_leading_extent_only() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[3, 2]));
        let row = tape.constant(Tensor::full(&[1, 2], 1.0));
        let col = tape.constant(Tensor::full(&[3, 1], 1.0));
        let out = tape.add(a, row).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0; 6]);
        let out = tape.add(row, a).unwrap();
        assert_eq!(tape.shape(out), &[3, 2]);
        assert!(matches!(tape.add(a, col), Err(CignError::Shape { .. })));
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[0.3, -2.0], &[0.3, -2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let v = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((v - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(CignError::DegenerateVector { .. })
        ));

        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(&[1.0, 1.0]));
        let b = tape.constant(Tensor::vector(&[1.0, 0.0]));
        let c = tape.cosine_sim(a, b).unwrap();
        assert!((tape.value(c).data()[0] - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn backward_square() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_through_softmax_sum_is_zero() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(&[0.3, -1.2, 2.0, 0.7]));
        let y = tape.softmax(x, 0).unwrap();
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        for g in tape.grad(x).unwrap().data() {
            assert!(g.abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(CignError::NonScalar { .. })));
    }

    #[test]
    fn gradients_accumulate_over_two_paths() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let a = tape.scale(x, 3.0);
        let b = tape.exp(x);
        let s = tape.add(a, b).unwrap();
        tape.backward(s).unwrap();
        let expected = 3.0 + 2f64.exp();
        assert!((tape.grad(x).unwrap().data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn straight_through_forward_is_one_hot() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[vec![0.1, 0.7, 0.2], vec![0.5, 0.2, 0.3]]));
        let h = tape.straight_through_one_hot(x, 1).unwrap();
        assert_eq!(tape.value(h).data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        let w = tape.constant(t(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]));
        let p = tape.mul(h, w).unwrap();
        let s = tape.sum_all(p);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let x = tape.param(Tensor::scalar(1.0));
        let y = tape.mul(c, x).unwrap();
        tape.backward(y).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0]);
    }
}
