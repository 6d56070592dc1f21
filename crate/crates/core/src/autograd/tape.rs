//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every primitive appends a node holding its forward value and operand
//! handles. Nodes are appended in evaluation order, so walking the tape
//! backwards is a reverse topological traversal.

use std::collections::HashMap;

use super::params::{Grads, ParameterStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Log(Var),
    Mean(Var),
    Sum(Var),
    SumLast(Var),
    Gather(Var, Vec<usize>),
    StraightThrough(Var),
    Bce {
        pred: Var,
        labels: Vec<f64>,
        norm: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Probabilities are clamped into `[BCE_CLAMP, 1 - BCE_CLAMP]` before taking logs.
pub const BCE_CLAMP: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
}

fn require_2d(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, format!("expected a matrix, got shape {s:?}"))),
    }
}

fn with_cols(shape: &[usize], cols: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    match s.last_mut() {
        Some(last) => *last = cols,
        None => s.push(cols),
    }
    s
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b) => self.requires_grad(*a) || self.requires_grad(*b),
            Op::Concat(parts) => parts.iter().any(|p| self.requires_grad(*p)),
            Op::Affine(a, _)
            | Op::Slice(a, ..)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softmax(a)
            | Op::Log(a)
            | Op::Mean(a)
            | Op::Sum(a)
            | Op::SumLast(a)
            | Op::Gather(a, _)
            | Op::StraightThrough(a)
            | Op::Bce { pred: a, .. } => self.requires_grad(*a),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A free differentiable leaf not tied to a parameter store.
    pub fn input(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Binds a stored parameter; repeated binds return the same node.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?;
        if let Some(v) = self.params.get(&idx) {
            return Ok(*v);
        }
        let v = self.input(store.value_at(idx).clone());
        self.params.insert(idx, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = require_2d(self.value(a), "matmul")?;
        let (k2, n) = require_2d(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("[{m}, {k}] x [{k2}, {n}]"),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            0.0,
            &mut out,
        );
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b)))
    }

    /// Elementwise sum. A right operand with as many elements as the left has
    /// columns is broadcast over every row (bias addition).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
            let t = Tensor::new(va.shape().to_vec(), data)?;
            return Ok(self.push(t, Op::Add(a, b)));
        }
        let cols = va.cols();
        if vb.len() != cols || vb.rows() != 1 {
            return Err(Error::shape(
                "add",
                format!("{:?} + {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(cols) {
            for (x, y) in row.iter_mut().zip(vb.data()) {
                *x += y;
            }
        }
        let t = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddRow(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.same_shape(vb, "sub")?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.same_shape(vb, "mul")?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let t = self.value(a).map(|x| scale * x + shift);
        self.push(t, Op::Affine(a, scale))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no operands"))?;
        let rows = self.value(*first).rows();
        let lead = self.value(*first).shape().to_vec();
        let mut total = 0;
        for p in parts {
            let v = self.value(*p);
            if v.rows() != rows || v.shape().len() != lead.len() {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?}", lead, v.shape()),
                ));
            }
            total += v.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let t = Tensor::new(with_cols(&lead, total), data)?;
        Ok(self.push(t, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let va = self.value(a);
        if start >= end || end > va.cols() {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{end} on shape {:?}", va.shape()),
            ));
        }
        let mut data = Vec::with_capacity(va.rows() * (end - start));
        for r in 0..va.rows() {
            data.extend_from_slice(&va.row(r)[start..end]);
        }
        let t = Tensor::new(with_cols(va.shape(), end - start), data)?;
        Ok(self.push(t, Op::Slice(a, start, end)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(va.cols().max(1)) {
            softmax_in_place(row);
        }
        let t = Tensor::new(va.shape().to_vec(), data).expect("shape preserved");
        self.push(t, Op::Softmax(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::ln);
        self.push(t, Op::Log(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let m = va.data().iter().sum::<f64>() / va.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum::<f64>();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Row sums: `[.., n] -> [.., 1]`.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let data: Vec<f64> = (0..va.rows()).map(|r| va.row(r).iter().sum()).collect();
        let t = Tensor::new(with_cols(va.shape(), 1), data).expect("row count preserved");
        self.push(t, Op::SumLast(a))
    }

    /// Embedding lookup: row `indices[i]` of `table` becomes output row `i`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let (rows, cols) = require_2d(vt, "gather")?;
        if let Some(bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::shape(
                "gather",
                format!("index {bad} out of range for {rows} rows"),
            ));
        }
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(vt.row(i));
        }
        let t = Tensor::matrix(indices.len(), cols, data)?;
        Ok(self.push(t, Op::Gather(table, indices.to_vec())))
    }

    /// Forward: one-hot of each row's argmax. Backward: identity onto `a`.
    pub fn straight_through(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let cols = va.cols();
        let mut data = vec![0.0; va.len()];
        for r in 0..va.rows() {
            data[r * cols + argmax(va.row(r))] = 1.0;
        }
        let t = Tensor::new(va.shape().to_vec(), data).expect("shape preserved");
        self.push(t, Op::StraightThrough(a))
    }

    /// Mean binary cross-entropy between probabilities and 0/1 labels.
    pub fn bce(&mut self, pred: Var, labels: &[f64]) -> Result<Var> {
        let n = labels.len() as f64;
        self.bce_normalized(pred, labels, n)
    }

    /// Binary cross-entropy summed over entries and divided by `norm`.
    pub fn bce_normalized(&mut self, pred: Var, labels: &[f64], norm: f64) -> Result<Var> {
        let vp = self.value(pred);
        if vp.len() != labels.len() {
            return Err(Error::shape(
                "bce",
                format!("{} predictions vs {} labels", vp.len(), labels.len()),
            ));
        }
        let total: f64 = vp
            .data()
            .iter()
            .zip(labels)
            .map(|(&p, &y)| bce_term(p, y))
            .sum();
        let t = Tensor::scalar(total / norm);
        Ok(self.push(
            t,
            Op::Bce {
                pred,
                labels: labels.to_vec(),
                norm,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.requires_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    /// Adjoint buffer of `v` for in-place accumulation, created zeroed if absent.
    /// Returns the gemm `beta`: 1 to add into an existing adjoint, 0 for a fresh one.
    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var, shape: &[usize]) -> (f64, &'g mut [f64]) {
        let beta = if grads[v.0].is_some() { 1.0 } else { 0.0 };
        let t = grads[v.0].get_or_insert_with(|| Tensor::zeros(shape));
        (beta, t.data_mut())
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if self.requires_grad(*a) {
                    // dA = dC * B^T
                    let (beta, acc) = self.slot(grads, *a, &[m, k]);
                    gemm(m, n, k, g.data(), (n as isize, 1), vb.data(), (1, n as isize), beta, acc);
                }
                if self.requires_grad(*b) {
                    // dB = A^T * dC
                    let (beta, acc) = self.slot(grads, *b, &[k, n]);
                    gemm(k, m, n, va.data(), (1, k as isize), g.data(), (n as isize, 1), beta, acc);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    let vb = self.value(*b);
                    let mut db = vec![0.0; vb.len()];
                    for r in 0..g.rows() {
                        for (acc, x) in db.iter_mut().zip(g.row(r)) {
                            *acc += x;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(vb.shape().to_vec(), db)?);
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, zip_with(g, vb, |x, y| x * y));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, zip_with(g, va, |x, y| x * y));
                }
            }
            Op::Affine(a, scale) => {
                let s = *scale;
                self.accumulate(grads, *a, g.map(|x| s * x));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let vp = self.value(*p);
                    let w = vp.cols();
                    if self.requires_grad(*p) {
                        let mut d = Vec::with_capacity(vp.len());
                        for r in 0..g.rows() {
                            d.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        self.accumulate(grads, *p, Tensor::new(vp.shape().to_vec(), d)?);
                    }
                    offset += w;
                }
            }
            Op::Slice(a, start, end) => {
                let va = self.value(*a);
                let cols = va.cols();
                let mut d = vec![0.0; va.len()];
                for r in 0..g.rows() {
                    d[r * cols + start..r * cols + end].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *a, Tensor::new(va.shape().to_vec(), d)?);
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, zip_with(g, out, |x, y| x * (1.0 - y * y)));
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, zip_with(g, out, |x, y| x * y * (1.0 - y)));
            }
            Op::Softmax(a) => {
                let cols = out.cols();
                let mut d = vec![0.0; out.len()];
                for r in 0..out.rows() {
                    let (y, gy) = (out.row(r), g.row(r));
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        d[r * cols + c] = y[c] * (gy[c] - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(out.shape().to_vec(), d)?);
            }
            Op::Log(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, zip_with(g, va, |x, y| x / y));
            }
            Op::Mean(a) => {
                let va = self.value(*a);
                let s = g.item() / va.len() as f64;
                self.accumulate(grads, *a, Tensor::full(va.shape(), s));
            }
            Op::Sum(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, Tensor::full(va.shape(), g.item()));
            }
            Op::SumLast(a) => {
                let va = self.value(*a);
                let cols = va.cols();
                let mut d = vec![0.0; va.len()];
                for r in 0..va.rows() {
                    d[r * cols..(r + 1) * cols].fill(g.data()[r]);
                }
                self.accumulate(grads, *a, Tensor::new(va.shape().to_vec(), d)?);
            }
            Op::Gather(table, indices) => {
                let vt = self.value(*table);
                let cols = vt.cols();
                let mut d = vec![0.0; vt.len()];
                for (r, &i) in indices.iter().enumerate() {
                    for (acc, x) in d[i * cols..(i + 1) * cols].iter_mut().zip(g.row(r)) {
                        *acc += x;
                    }
                }
                self.accumulate(grads, *table, Tensor::new(vt.shape().to_vec(), d)?);
            }
            Op::StraightThrough(a) => {
                self.accumulate(grads, *a, g.clone());
            }
            Op::Bce { pred, labels, norm } => {
                let vp = self.value(*pred);
                let s = g.item() / norm;
                let d = vp
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&p, &y)| {
                        let q = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                        if q != p {
                            0.0
                        } else {
                            s * (q - y) / (q * (1.0 - q))
                        }
                    })
                    .collect();
                self.accumulate(grads, *pred, Tensor::new(vp.shape().to_vec(), d)?);
            }
        }
        Ok(())
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<usize, Var>,
}

impl Gradients {
    /// Adjoint of `v`, if any path from the loss reached it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients aligned with `store`; parameters the loss never reached get zeros.
    pub fn for_store(&self, store: &ParameterStore) -> Grads {
        let tensors = (0..store.len())
            .map(|i| {
                self.params
                    .get(&i)
                    .and_then(|v| self.wrt(*v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(store.value_at(i).shape()))
            })
            .collect();
        Grads::new(tensors)
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(b.shape().to_vec(), data).expect("operands share a shape")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

pub fn bce_term(p: f64, y: f64) -> f64 {
    let q = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
}
