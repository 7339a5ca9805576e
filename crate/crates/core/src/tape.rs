//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation eagerly: values are computed when the
//! node is pushed, and [`Tape::backward`] walks the nodes once in reverse
//! order. Handles ([`Var`]) are plain indices, so a node's inputs always
//! precede it.
//!
//! ```
//! use dibod::tape::Tape;
//! use dibod::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let w = tape.leaf(Tensor::scalar(3.0));
//! let sq = tape.mul(w, w).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(w).unwrap().data(), &[6.0]);
//! ```

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sparse::RowOperator;
use crate::tensor::{gemm, Operand, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    Param { store: u64, id: usize },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Sigmoid(Var),
    Tanh(Var),
    Square(Var),
    ClampMin(Var, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumCols(Var),
    Transpose(Var),
    RowOp(Arc<RowOperator>, Var),
    Entries(Arc<Vec<usize>>, Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Const | Op::Param { .. } => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sqrt(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Square(a)
            | Op::ClampMin(a, _)
            | Op::SoftmaxRows(a)
            | Op::LogSoftmaxRows(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::Transpose(a)
            | Op::RowOp(_, a)
            | Op::Entries(_, a) => vec![*a],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// Whether any gradient-receiving leaf or parameter feeds this node.
    live: bool,
}

/// Append-only record of a computation.
#[derive(Default, Clone, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn broadcast_dims(a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::shape(format!(
            "cannot broadcast {}x{} with {}x{}",
            a.0, a.1, b.0, b.1
        ))),
    }
}

fn slot_mut(grads: &mut [Option<Vec<f64>>], n: usize, v: Var) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

#[inline]
fn bidx(i: usize, j: usize, dims: (usize, usize)) -> usize {
    (if dims.0 == 1 { 0 } else { i }) * dims.1 + if dims.1 == 1 { 0 } else { j }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let (da, db) = (a.dims(), b.dims());
    let (r, c) = broadcast_dims(da, db)?;
    if da == db {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::matrix(r, c, data));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(f(ad[bidx(i, j, da)], bd[bidx(i, j, db)]));
        }
    }
    Ok(Tensor::matrix(r, c, out))
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let live = match &op {
            Op::Leaf | Op::Param { .. } => true,
            Op::Const => false,
            other => other.inputs().iter().any(|v| self.nodes[v.0].live),
        };
        self.nodes.push(Node { value, op, live });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Gradient of the most recent [`Tape::backward`] call with respect to `v`.
    /// `None` when `v` did not influence the loss.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        let shape = self.nodes[v.0].value.shape().to_vec();
        Some(Tensor::new(&shape, g.clone()).expect("grad shape"))
    }

    pub(crate) fn param_grads(&self) -> impl Iterator<Item = (u64, usize, &[f64])> + '_ {
        self.nodes.iter().zip(&self.grads).filter_map(|(n, g)| match (&n.op, g) {
            (Op::Param { store, id }, Some(g)) => Some((*store, *id, g.as_slice())),
            _ => None,
        })
    }

    /// A constant or input node. It receives a gradient but is never updated.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// A node that never receives a gradient. Computations that depend only
    /// on constants are skipped by the reverse sweep.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const)
    }

    pub(crate) fn param_node(&mut self, t: Tensor, store: u64, id: usize) -> Var {
        self.push(t, Op::Param { store, id })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = zip_broadcast(self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = zip_broadcast(self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = zip_broadcast(self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Elementwise quotient. A zero divisor is a domain error.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().contains(&0.0) {
            return Err(Error::Domain("division by zero".into()));
        }
        let out = zip_broadcast(self.value(a), self.value(b), |x, y| x / y)?;
        Ok(self.push(out, Op::Div(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v + s);
        self.push(out, Op::Offset(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v < 0.0 { 0.0 } else { v });
        self.push(out, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    /// Natural log. Non-positive entries are a domain error.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(v) = self.value(a).data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::Domain(format!("log of {v}")));
        }
        let out = self.value(a).map(f64::ln);
        Ok(self.push(out, Op::Log(a)))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(v) = self.value(a).data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::Domain(format!("sqrt of {v}")));
        }
        let out = self.value(a).map(f64::sqrt);
        Ok(self.push(out, Op::Sqrt(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        });
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v * v);
        self.push(out, Op::Square(a))
    }

    /// `max(a, lo)` with gradient passed only where `a > lo`; NaN passes through.
    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        let out = self.value(a).map(|v| if v < lo { lo } else { v });
        self.push(out, Op::ClampMin(a, lo))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (r, c) = x.dims();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = x.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[i * c..(i + 1) * c];
            let mut s = 0.0;
            for (o, &v) in dst.iter_mut().zip(row) {
                *o = (v - m).exp();
                s += *o;
            }
            dst.iter_mut().for_each(|o| *o /= s);
        }
        self.push(Tensor::matrix(r, c, out), Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (r, c) = x.dims();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = x.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            for (o, &v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        self.push(Tensor::matrix(r, c, out), Op::LogSoftmaxRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Row sums: `r x c -> r x 1`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = (0..t.rows()).map(|i| t.row(i).iter().sum()).collect();
        self.push(Tensor::column(out), Op::SumRows(a))
    }

    /// Column sums: `r x c -> 1 x c`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = t.dims();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(t.row(i)) {
                *o += v;
            }
        }
        self.push(Tensor::row_vector(out), Op::SumCols(a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let c = self.value(a).cols();
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / c as f64)
    }

    pub fn mean_cols(&mut self, a: Var) -> Var {
        let r = self.value(a).rows();
        let s = self.sum_cols(a);
        self.scale(s, 1.0 / r as f64)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    /// `S * a` for a constant sparse operator `S`.
    pub fn row_op(&mut self, op: &Arc<RowOperator>, a: Var) -> Result<Var> {
        let out = op.apply(self.value(a))?;
        Ok(self.push(out, Op::RowOp(Arc::clone(op), a)))
    }

    /// `a * w + b` with `b` a `1 x n` row broadcast.
    /// `rows x cols` output whose k-th entry is the `index[k]`-th flat entry
    /// of `a`. Used for max pooling with precomputed argmax positions.
    pub fn entries(&mut self, a: Var, index: Arc<Vec<usize>>, rows: usize, cols: usize) -> Result<Var> {
        let src = self.value(a).data();
        if index.len() != rows * cols || index.iter().any(|&i| i >= src.len()) {
            return Err(Error::shape("entry index does not fit source or output"));
        }
        let out = Tensor::matrix(rows, cols, index.iter().map(|&i| src[i]).collect());
        Ok(self.push(out, Op::Entries(index, a)))
    }

    pub fn affine(&mut self, a: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(a, w)?;
        self.add(h, b)
    }

    /// Mean squared error over all entries.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    /// Per-row cross-entropy `-sum_j t_ij ln p_ij` of probability rows `p`
    /// against target rows `t` (entries with `t_ij = 0` are skipped).
    /// Returns an `r x 1` column.
    pub fn cross_entropy_rows(&mut self, probs: Var, targets: &Tensor) -> Result<Var> {
        let p = self.value(probs);
        if p.dims() != targets.dims() {
            return Err(Error::shape("cross-entropy target shape"));
        }
        for (pv, tv) in p.data().iter().zip(targets.data()) {
            if *tv != 0.0 && *pv <= 0.0 {
                return Err(Error::Domain(format!("cross-entropy of probability {pv}")));
            }
        }
        // ln of masked probabilities: untouched entries are mapped to 1 so
        // that 0 * ln(1) contributes nothing.
        let mask = targets.map(|t| if t != 0.0 { 1.0 } else { 0.0 });
        let inv = mask.map(|m| 1.0 - m);
        let m = self.constant(mask);
        let iv = self.constant(inv);
        let masked = self.mul(probs, m)?;
        let safe = self.add(masked, iv)?;
        let lg = self.log(safe)?;
        let t = self.constant(targets.clone());
        let prod = self.mul(lg, t)?;
        let s = self.sum_rows(prod);
        Ok(self.neg(s))
    }

    /// Per-row cross-entropy from unnormalized logits, computed through a
    /// stabilized log-softmax. Returns an `r x 1` column.
    pub fn softmax_cross_entropy_rows(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        if self.value(logits).dims() != targets.dims() {
            return Err(Error::shape("cross-entropy target shape"));
        }
        let ls = self.log_softmax_rows(logits);
        let t = self.constant(targets.clone());
        let prod = self.mul(ls, t)?;
        let s = self.sum_rows(prod);
        Ok(self.neg(s))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of a previous sweep are
    /// discarded; accumulation across sweeps happens in parameter stores.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].live {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let (r, c) = out.dims();
        let val = |v: Var| &self.nodes[v.0].value;
        let nodes = &self.nodes;
        let slot = |grads: &'_ mut [Option<Vec<f64>>], v: Var| {
            let n = nodes[v.0].value.len();
            grads[v.0].take().unwrap_or_else(|| vec![0.0; n])
        };
        // Accumulates `g` (shaped like the output) into a possibly broadcast input.
        let acc_broadcast = |grads: &mut [Option<Vec<f64>>], v: Var, f: &dyn Fn(usize, usize, usize) -> f64| {
            let dims = self.nodes[v.0].value.dims();
            let n = self.nodes[v.0].value.len();
            let dst = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            if dims == (r, c) {
                for (k, d) in dst.iter_mut().enumerate() {
                    *d += f(k / c, k % c, k);
                }
            } else {
                for i in 0..r {
                    for j in 0..c {
                        dst[bidx(i, j, dims)] += f(i, j, i * c + j);
                    }
                }
            }
        };
        match &node.op {
            Op::Leaf | Op::Const | Op::Param { .. } => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k) = av.dims();
                let n = bv.dims().1;
                if nodes[a.0].live {
                    let mut ga = slot(grads, *a);
                    gemm(Operand::plain(g, m, n), Operand::t(bv.data(), k, n), &mut ga, true);
                    grads[a.0] = Some(ga);
                }
                if nodes[b.0].live {
                    let mut gb = slot(grads, *b);
                    gemm(Operand::t(av.data(), m, k), Operand::plain(g, m, n), &mut gb, true);
                    grads[b.0] = Some(gb);
                }
            }
            Op::Add(a, b) => {
                acc_broadcast(grads, *a, &|_, _, k| g[k]);
                acc_broadcast(grads, *b, &|_, _, k| g[k]);
            }
            Op::Sub(a, b) => {
                acc_broadcast(grads, *a, &|_, _, k| g[k]);
                acc_broadcast(grads, *b, &|_, _, k| -g[k]);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (da, db) = (av.dims(), bv.dims());
                let (ad, bd) = (av.data(), bv.data());
                acc_broadcast(grads, *a, &|i, j, k| g[k] * bd[bidx(i, j, db)]);
                acc_broadcast(grads, *b, &|i, j, k| g[k] * ad[bidx(i, j, da)]);
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (da, db) = (av.dims(), bv.dims());
                let (ad, bd) = (av.data(), bv.data());
                acc_broadcast(grads, *a, &|i, j, k| g[k] / bd[bidx(i, j, db)]);
                acc_broadcast(grads, *b, &|i, j, k| {
                    let y = bd[bidx(i, j, db)];
                    -g[k] * ad[bidx(i, j, da)] / (y * y)
                });
            }
            Op::Scale(a, s) => {
                let s = *s;
                acc_broadcast(grads, *a, &|_, _, k| g[k] * s);
            }
            Op::Offset(a) => acc_broadcast(grads, *a, &|_, _, k| g[k]),
            Op::Relu(a) => {
                let x = val(*a).data();
                acc_broadcast(grads, *a, &|_, _, k| if x[k] > 0.0 { g[k] } else { 0.0 });
            }
            Op::Exp(a) => {
                let y = out.data();
                acc_broadcast(grads, *a, &|_, _, k| g[k] * y[k]);
            }
            Op::Log(a) => {
                let x = val(*a).data();
                acc_broadcast(grads, *a, &|_, _, k| g[k] / x[k]);
            }
            Op::Sqrt(a) => {
                let y = out.data();
                acc_broadcast(grads, *a, &|_, _, k| g[k] * 0.5 / y[k]);
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                acc_broadcast(grads, *a, &|_, _, k| g[k] * y[k] * (1.0 - y[k]));
            }
            Op::Tanh(a) => {
                let y = out.data();
                acc_broadcast(grads, *a, &|_, _, k| g[k] * (1.0 - y[k] * y[k]));
            }
            Op::Square(a) => {
                let x = val(*a).data();
                acc_broadcast(grads, *a, &|_, _, k| 2.0 * g[k] * x[k]);
            }
            Op::ClampMin(a, lo) => {
                let x = val(*a).data();
                let lo = *lo;
                acc_broadcast(grads, *a, &|_, _, k| if x[k] > lo { g[k] } else { 0.0 });
            }
            Op::SoftmaxRows(a) => {
                let y = out.data();
                let dst = slot_mut(grads, val(*a).len(), *a);
                for i in 0..r {
                    let row = i * c..(i + 1) * c;
                    let dot: f64 = g[row.clone()].iter().zip(&y[row.clone()]).map(|(a, b)| a * b).sum();
                    for k in row {
                        dst[k] += y[k] * (g[k] - dot);
                    }
                }
            }
            Op::LogSoftmaxRows(a) => {
                let y = out.data();
                let dst = slot_mut(grads, val(*a).len(), *a);
                for i in 0..r {
                    let row = i * c..(i + 1) * c;
                    let gs: f64 = g[row.clone()].iter().sum();
                    for k in row {
                        dst[k] += g[k] - y[k].exp() * gs;
                    }
                }
            }
            Op::Sum(a) => {
                let g0 = g[0];
                let dst = slot_mut(grads, val(*a).len(), *a);
                dst.iter_mut().for_each(|d| *d += g0);
            }
            Op::Mean(a) => {
                let dst = slot_mut(grads, val(*a).len(), *a);
                let g0 = g[0] / dst.len() as f64;
                dst.iter_mut().for_each(|d| *d += g0);
            }
            Op::SumRows(a) => {
                let cols = val(*a).cols();
                let dst = slot_mut(grads, val(*a).len(), *a);
                for (k, d) in dst.iter_mut().enumerate() {
                    *d += g[k / cols];
                }
            }
            Op::SumCols(a) => {
                let cols = val(*a).cols();
                let dst = slot_mut(grads, val(*a).len(), *a);
                for (k, d) in dst.iter_mut().enumerate() {
                    *d += g[k % cols];
                }
            }
            Op::Transpose(a) => {
                // out is r x c, input is c x r
                let dst = slot_mut(grads, val(*a).len(), *a);
                for i in 0..r {
                    for j in 0..c {
                        dst[j * r + i] += g[i * c + j];
                    }
                }
            }
            Op::RowOp(op, a) if nodes[a.0].live => {
                let dst = slot_mut(grads, val(*a).len(), *a);
                op.apply_transpose_into(g, c, dst);
            }
            Op::RowOp(..) => {}
            Op::Entries(idx, a) => {
                let dst = slot_mut(grads, val(*a).len(), *a);
                for (k, &src) in idx.iter().enumerate() {
                    dst[src] += g[k];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn relu_values() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row_vector(vec![-1.0, 2.0]));
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0.0, 2.0]);
        let n = t.leaf(Tensor::scalar(f64::NAN));
        let r = t.relu(n);
        assert!(t.scalar(r).is_nan());
        let c = t.clamp_min(n, 0.0);
        assert!(t.scalar(c).is_nan());
    }

    #[test]
    fn softmax_symmetric_row() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row_vector(vec![0.0, 0.0]));
        let y = t.softmax_rows(x);
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one_for_extreme_logits() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::matrix(2, 3, vec![1000.0, -1000.0, 3.0, -7.0, 0.1, 1e-9]));
        let y = t.softmax_rows(x);
        for r in 0..2 {
            let s: f64 = t.value(y).row(r).iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
        assert!(t.value(y).is_finite());
    }

    #[test]
    fn perfect_one_hot_prediction_has_zero_cross_entropy() {
        let mut t = Tape::new();
        let target = Tensor::one_hot(&[1, 0], 2);
        let p = t.leaf(target.clone());
        let ce = t.cross_entropy_rows(p, &target).unwrap();
        assert_eq!(t.value(ce).data(), &[0.0, 0.0]);
    }

    #[test]
    fn log_of_nonpositive_is_domain_error() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row_vector(vec![1.0, 0.0]));
        assert!(matches!(t.log(x), Err(Error::Domain(_))));
    }

    #[test]
    fn quadratic_gradient() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::row_vector(vec![3.0]));
        let sq = t.mul(w, w).unwrap();
        let l = t.sum(sq);
        t.backward(l).unwrap();
        assert_eq!(t.grad(w).unwrap().data(), &[6.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::row_vector(vec![3.0, 1.0]));
        let z = t.scale(w, 0.0);
        let s = t.sum(z);
        let l = t.add_scalar(s, 5.0);
        t.backward(l).unwrap();
        assert_eq!(t.grad(w).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_backward_is_contract_error() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::row_vector(vec![3.0, 1.0]));
        assert!(matches!(t.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let b = t.leaf(Tensor::row_vector(vec![10.0, 20.0]));
        let s = t.add(a, b).unwrap();
        assert_eq!(t.value(s).data(), &[11.0, 22.0, 13.0, 24.0]);
        let l = t.sum(s);
        t.backward(l).unwrap();
        assert_eq!(t.grad(b).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn self_matmul_gradient() {
        // loss = sum(A A); d/dA = 1 A^T + A^T 1 (both paths through the same node)
        let mut t = Tape::new();
        let a = t.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let p = t.matmul(a, a).unwrap();
        let l = t.sum(p);
        t.backward(l).unwrap();
        // ones * A^T puts row sums of A in columns; A^T * ones puts column sums in rows
        let expected = [3.0 + 4.0, 7.0 + 4.0, 3.0 + 6.0, 7.0 + 6.0];
        assert!(close(t.grad(a).unwrap().data(), &expected, 1e-12));
    }

    #[test]
    fn cross_entropy_rows_zero_target_entries_ignore_zero_probabilities() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::matrix(1, 3, vec![0.0, 0.25, 0.75]));
        let ce = t.cross_entropy_rows(p, &Tensor::one_hot(&[2], 3)).unwrap();
        assert!((t.value(ce).item() + 0.75f64.ln()).abs() < 1e-15);
        let s = t.sum(ce);
        t.backward(s).unwrap();
        let g = t.grad(p).unwrap();
        assert!((g.data()[2] + 1.0 / 0.75).abs() < 1e-12);
        assert_eq!(g.data()[0], 0.0);
    }
}
