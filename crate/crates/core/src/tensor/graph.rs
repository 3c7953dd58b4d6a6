//! Tape-based reverse-mode differentiation over [`Array`] values.
//!
//! Nodes are appended in evaluation order, so the tape order is already a
//! topological order: `backward` walks it once from the loss towards the
//! leaves and every node is visited exactly once. Gradients of nodes that
//! feed several consumers are summed.

use super::{Array, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
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
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Powf(Var, f64),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Softmax(Var),
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    /// False when no differentiable leaf feeds this node.
    needs_grad: bool,
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Powf(a, _)
            | Op::Scale(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _)
            | Op::Softmax(a) => vec![*a],
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
        }
    }
}

/// Recording of one forward evaluation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
    param_slots: Vec<Option<Var>>,
}

/// Gradients of one `backward` call, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// `None` means the node does not influence the loss (zero gradient).
    pub fn get(&self, v: Var) -> Option<&Array> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds parameter gradients into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, var) in &self.params {
            if let Some(g) = self.get(var) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }
}

fn broadcast_dims(op: &'static str, a: &Array, b: &Array) -> Result<(usize, usize)> {
    let (am, an) = a.dims2()?;
    let (bm, bn) = b.dims2()?;
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    match (dim(am, bm), dim(an, bn)) {
        (Some(m), Some(n)) => Ok((m, n)),
        _ => Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }),
    }
}

fn broadcast_shape(a: &Array, b: &Array, m: usize, n: usize) -> Vec<usize> {
    if a.shape() == b.shape() {
        a.shape().to_vec()
    } else {
        vec![m, n]
    }
}

fn binary_map(op: &'static str, a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Result<Array> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Array::new(a.shape(), data);
    }
    let (m, n) = broadcast_dims(op, a, b)?;
    let (am, an) = a.dims2()?;
    let (bm, bn) = b.dims2()?;
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let ia = if am == 1 { 0 } else { i };
        let ib = if bm == 1 { 0 } else { i };
        for j in 0..n {
            let ja = if an == 1 { 0 } else { j };
            let jb = if bn == 1 { 0 } else { j };
            out.push(f(a.data()[ia * an + ja], b.data()[ib * bn + jb]));
        }
    }
    Array::new(&broadcast_shape(a, b, m, n), out)
}

/// Sums a broadcast gradient back down to `target`'s shape.
fn reduce_to(grad: &Array, target: &Array) -> Array {
    if grad.shape() == target.shape() {
        return grad.clone();
    }
    let (m, n) = grad.dims2().expect("rank <= 2");
    let (tm, tn) = target.dims2().expect("rank <= 2");
    let mut out = vec![0.0; tm * tn];
    for i in 0..m {
        let it = if tm == 1 { 0 } else { i };
        for j in 0..n {
            let jt = if tn == 1 { 0 } else { j };
            out[it * tn + jt] += grad.data()[i * n + j];
        }
    }
    Array::new(target.shape(), out).expect("target shape")
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Array, op: Op, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "{name} produced a non-finite value (shape {:?})",
                value.shape()
            )));
        }
        let needs_grad = op.parents().iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf that does not receive parameter updates; its gradient is
    /// still available from [`Gradients::get`].
    pub fn constant(&mut self, value: Array) -> Var {
        self.leaf(value, true)
    }

    /// A leaf excluded from differentiation (data, masks). Work that only
    /// leads to such leaves is skipped in `backward`.
    pub fn input(&mut self, value: Array) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Array, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a stored parameter as a leaf. Binding the same parameter twice
    /// returns the same node, so repeated use accumulates into one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_slots.get(id.0) {
            return *v;
        }
        let v = self.constant(store.value(id).clone());
        if self.param_slots.len() <= id.0 {
            self.param_slots.resize(id.0 + 1, None);
        }
        self.param_slots[id.0] = Some(v);
        self.params.push((id, v));
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary_map("add", self.value(a), self.value(b), |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary_map("sub", self.value(a), self.value(b), |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary_map("mul", self.value(a), self.value(b), |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary_map("div", self.value(a), self.value(b), |x, y| x / y)?;
        self.push(out, Op::Div(a, b), "div")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        self.push(out, Op::Transpose(a), "transpose")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), "tanh")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a), "exp")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a), "log")
    }

    /// Elementwise `a^p`.
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x.powf(p));
        self.push(out, Op::Powf(a, p), "power")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), "scale")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Array::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::invalid("mean of an empty array"));
        }
        let out = Array::scalar(v.sum() / v.len() as f64);
        self.push(out, Op::Mean(a), "mean")
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat of zero arrays"))?;
        let (m, _) = self.value(first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.value(p).dims2()?;
            if pm != m {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(Array::matrix(m, n, out)?, Op::ConcatCols(parts.to_vec()), "concat")
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat of zero arrays"))?;
        let (_, n) = self.value(first).dims2()?;
        let mut m = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pm, pn) = self.value(p).dims2()?;
            if pn != n {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            m += pm;
            out.extend_from_slice(self.value(p).data());
        }
        self.push(Array::matrix(m, n, out)?, Op::ConcatRows(parts.to_vec()), "concat")
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if start >= end || end > m {
            return Err(Error::invalid(format!(
                "row slice {start}..{end} out of bounds for shape {:?}",
                self.shape(a)
            )));
        }
        let out = Array::matrix(end - start, n, self.value(a).data()[start * n..end * n].to_vec())?;
        self.push(out, Op::SliceRows(a, start), "slice")
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if start >= end || end > n {
            return Err(Error::invalid(format!(
                "column slice {start}..{end} out of bounds for shape {:?}",
                self.shape(a)
            )));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let out = Array::matrix(m, end - start, out)?;
        self.push(out, Op::SliceCols(a, start), "slice")
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let (m, n) = v.dims2()?;
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(n.max(1)).take(m) {
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
        let out = Array::new(v.shape(), out)?;
        self.push(out, Op::Softmax(a), "softmax")
    }

    /// `x · w + b` with `b` a row broadcast over the batch.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Array>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array::ones(lv.shape()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    /// Convenience: backward plus accumulation into the store.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.backward(loss)?.accumulate_into(store);
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Array, grads: &mut [Option<Array>]) {
        let node = &self.nodes[i];
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, delta: Array| {
            if !wants(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let zip = |a: &Array, b: &Array, f: &dyn Fn(f64, f64) -> f64| {
            binary_map("backward", a, b, f).expect("forward shapes agree")
        };

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, reduce_to(g, val(*a)));
                acc(*b, reduce_to(g, val(*b)));
            }
            Op::Sub(a, b) => {
                acc(*a, reduce_to(g, val(*a)));
                acc(*b, reduce_to(&g.map(|x| -x), val(*b)));
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let ga = zip(g, val(*b), &|x, y| x * y);
                    acc(*a, reduce_to(&ga, val(*a)));
                }
                if wants(*b) {
                    let gb = zip(g, val(*a), &|x, y| x * y);
                    acc(*b, reduce_to(&gb, val(*b)));
                }
            }
            Op::Div(a, b) => {
                let ga = zip(g, val(*b), &|x, y| x / y);
                // d(a/b)/db = -out / b
                let out_over_b = zip(&node.value, val(*b), &|o, y| -o / y);
                let gb = zip(g, &out_over_b, &|x, y| x * y);
                acc(*a, reduce_to(&ga, val(*a)));
                acc(*b, reduce_to(&gb, val(*b)));
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    let ga = g.matmul_t(false, bv, true).unwrap();
                    acc(*a, ga.reshape(av.shape()).unwrap());
                }
                if wants(*b) {
                    let gb = av.matmul_t(true, g, false).unwrap();
                    acc(*b, gb.reshape(bv.shape()).unwrap());
                }
            }
            Op::Transpose(a) => {
                let gt = g.transpose().unwrap();
                acc(*a, gt.reshape(val(*a).shape()).unwrap());
            }
            Op::Sigmoid(a) => acc(*a, zip(g, &node.value, &|x, y| x * y * (1.0 - y))),
            Op::Tanh(a) => acc(*a, zip(g, &node.value, &|x, y| x * (1.0 - y * y))),
            Op::Exp(a) => acc(*a, zip(g, &node.value, &|x, y| x * y)),
            Op::Log(a) => acc(*a, zip(g, val(*a), &|x, y| x / y)),
            Op::Powf(a, p) => {
                let p = *p;
                acc(*a, zip(g, val(*a), &|x, y| x * p * y.powf(p - 1.0)));
            }
            Op::Scale(a, s) => {
                let s = *s;
                acc(*a, g.map(|x| x * s));
            }
            Op::Sum(a) => acc(*a, Array::filled(val(*a).shape(), g.data()[0])),
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                acc(*a, Array::filled(val(*a).shape(), g.data()[0] / n));
            }
            Op::ConcatCols(parts) => {
                let (m, n) = node.value.dims2().unwrap();
                let mut offset = 0;
                for &p in parts {
                    let (_, w) = val(p).dims2().unwrap();
                    let mut part = Vec::with_capacity(m * w);
                    for r in 0..m {
                        part.extend_from_slice(&g.data()[r * n + offset..r * n + offset + w]);
                    }
                    acc(p, Array::new(val(p).shape(), part).unwrap());
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    let part = g.data()[offset..offset + len].to_vec();
                    acc(p, Array::new(val(p).shape(), part).unwrap());
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                let src = val(*a);
                let (_, n) = src.dims2().unwrap();
                let mut full = Array::zeros(src.shape());
                full.data_mut()[start * n..start * n + g.len()].copy_from_slice(g.data());
                acc(*a, full);
            }
            Op::SliceCols(a, start) => {
                let src = val(*a);
                let (m, n) = src.dims2().unwrap();
                let (_, w) = node.value.dims2().unwrap();
                let mut full = Array::zeros(src.shape());
                for r in 0..m {
                    full.data_mut()[r * n + start..r * n + start + w].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                acc(*a, full);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let (m, n) = y.dims2().unwrap();
                let mut out = vec![0.0; m * n];
                for r in 0..m {
                    let ys = &y.data()[r * n..(r + 1) * n];
                    let gs = &g.data()[r * n..(r + 1) * n];
                    let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                    for c in 0..n {
                        out[r * n + c] = ys[c] * (gs[c] - dot);
                    }
                }
                acc(*a, Array::new(y.shape(), out).unwrap());
            }
        }
    }
}
