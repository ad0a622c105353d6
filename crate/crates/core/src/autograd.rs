//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only list of recorded operations. Every node's
//! parents are recorded before it, so a single reverse sweep over the tape
//! visits nodes in a valid order for backpropagation.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{shape_err, Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{self, Tensor};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Exp(usize),
    Ln(usize),
    Abs(usize),
    Powf(usize, f64),
    Clamp(usize, f64, f64),
    Maximum(usize, usize),
    Minimum(usize, usize),
    SoftmaxRows(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    Reshape(usize),
    Sum(usize),
    Mean(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Recording tape. Create one per forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    param_nodes: RefCell<HashMap<ParamId, usize>>,
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    id: usize,
    graph: &'g Graph,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.value().shape())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { id: nodes.len() - 1, graph: self }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// A constant input; gradients are not tracked through it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable input.
    pub fn input(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf node for a stored parameter. Repeated calls with the same id
    /// return the same node, so gradients accumulate in one place.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&node) = self.param_nodes.borrow().get(&id) {
            return Var { id: node, graph: self };
        }
        let v = self.input(store.value(id).clone());
        self.param_nodes.borrow_mut().insert(id, v.id);
        v
    }

    pub fn concat_cols<'g>(&'g self, parts: &[Var<'g>]) -> Result<Var<'g>> {
        if parts.is_empty() {
            return Err(shape_err!("concat of zero tensors"));
        }
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let m = values[0].dims2()?.0;
        let mut widths = Vec::with_capacity(values.len());
        for v in &values {
            let (rows, cols) = v.dims2()?;
            if rows != m {
                return Err(shape_err!("concat_cols row counts {} vs {}", m, rows));
            }
            widths.push(cols);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        let rg = parts.iter().any(|p| self.rg(p.id));
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(self.push(Tensor::new(&[m, total], data)?, Op::ConcatCols(ids), rg))
    }

    pub fn concat_rows<'g>(&'g self, parts: &[Var<'g>]) -> Result<Var<'g>> {
        if parts.is_empty() {
            return Err(shape_err!("concat of zero tensors"));
        }
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let n = values[0].dims2()?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for v in &values {
            let (r, c) = v.dims2()?;
            if c != n {
                return Err(shape_err!("concat_rows widths {} vs {}", n, c));
            }
            rows += r;
            data.extend_from_slice(v.data());
        }
        let rg = parts.iter().any(|p| self.rg(p.id));
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(self.push(Tensor::new(&[rows, n], data)?, Op::ConcatRows(ids), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[id].take() else { continue };
            propagate(&nodes, id, &upstream, &mut grads);
            grads[id] = Some(upstream);
        }
        let shaped = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| g.map(|g| Tensor::new(nodes[id].value.shape(), g).expect("grad shape")))
            .collect();
        Ok(Gradients { grads: shaped, param_nodes: self.param_nodes.borrow().clone() })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, delta: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(delta),
    }
}

fn propagate(nodes: &[Node], id: usize, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    match &nodes[id].op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            let (m, k) = val(a).dims2().unwrap();
            let n = val(b).dims2().unwrap().1;
            if nodes[a].requires_grad {
                accumulate(grads, nodes, a, tensor::mm_nt(up, val(b).data(), m, n, k));
            }
            if nodes[b].requires_grad {
                accumulate(grads, nodes, b, tensor::mm_tn(val(a).data(), up, m, k, n));
            }
        }
        &Op::MatMulT(a, b) => {
            // C = A·Bᵀ with A m×k, B n×k.
            let (m, k) = val(a).dims2().unwrap();
            let n = val(b).dims2().unwrap().0;
            if nodes[a].requires_grad {
                accumulate(grads, nodes, a, tensor::mm(up, val(b).data(), m, n, k));
            }
            if nodes[b].requires_grad {
                accumulate(grads, nodes, b, tensor::mm_tn(up, val(a).data(), m, n, k));
            }
        }
        &Op::Transpose(a) => {
            let (m, n) = val(a).dims2().unwrap();
            accumulate(grads, nodes, a, tensor::transpose(up, n, m));
        }
        &Op::Add(a, b) => {
            accumulate(grads, nodes, a, up.to_vec());
            accumulate(grads, nodes, b, up.to_vec());
        }
        &Op::Sub(a, b) => {
            accumulate(grads, nodes, a, up.to_vec());
            accumulate(grads, nodes, b, up.iter().map(|g| -g).collect());
        }
        &Op::Mul(a, b) => {
            let (av, bv) = (val(a).data(), val(b).data());
            accumulate(grads, nodes, a, up.iter().zip(bv).map(|(g, y)| g * y).collect());
            accumulate(grads, nodes, b, up.iter().zip(av).map(|(g, x)| g * x).collect());
        }
        &Op::Div(a, b) => {
            let (av, bv) = (val(a).data(), val(b).data());
            accumulate(grads, nodes, a, up.iter().zip(bv).map(|(g, y)| g / y).collect());
            let db = up.iter().zip(av).zip(bv).map(|((g, x), y)| -g * x / (y * y)).collect();
            accumulate(grads, nodes, b, db);
        }
        &Op::AddRow(a, b) => {
            accumulate(grads, nodes, a, up.to_vec());
            let n = val(b).len();
            let mut db = vec![0.0; n];
            for chunk in up.chunks(n) {
                db.iter_mut().zip(chunk).for_each(|(d, g)| *d += g);
            }
            accumulate(grads, nodes, b, db);
        }
        &Op::Scale(a, c) => accumulate(grads, nodes, a, up.iter().map(|g| g * c).collect()),
        &Op::AddScalar(a) | &Op::Reshape(a) => accumulate(grads, nodes, a, up.to_vec()),
        &Op::Relu(a) => {
            let d = up.iter().zip(val(a).data()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 });
            accumulate(grads, nodes, a, d.collect());
        }
        &Op::Sigmoid(a) => {
            let d = up.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y));
            accumulate(grads, nodes, a, d.collect());
        }
        &Op::Exp(a) => {
            accumulate(grads, nodes, a, up.iter().zip(out.data()).map(|(g, y)| g * y).collect());
        }
        &Op::Ln(a) => {
            let d = up.iter().zip(val(a).data()).map(|(g, x)| g / x);
            accumulate(grads, nodes, a, d.collect());
        }
        &Op::Abs(a) => {
            let d = up.iter().zip(val(a).data()).map(|(g, &x)| {
                if x > 0.0 {
                    *g
                } else if x < 0.0 {
                    -g
                } else {
                    0.0
                }
            });
            accumulate(grads, nodes, a, d.collect());
        }
        &Op::Powf(a, p) => {
            let d = up.iter().zip(val(a).data()).map(|(g, x)| g * p * x.powf(p - 1.0));
            accumulate(grads, nodes, a, d.collect());
        }
        &Op::Clamp(a, lo, hi) => {
            let d = up
                .iter()
                .zip(val(a).data())
                .map(|(g, &x)| if (lo..=hi).contains(&x) { *g } else { 0.0 });
            accumulate(grads, nodes, a, d.collect());
        }
        &Op::Maximum(a, b) | &Op::Minimum(a, b) => {
            let is_max = matches!(nodes[id].op, Op::Maximum(..));
            let (av, bv) = (val(a).data(), val(b).data());
            let mut da = vec![0.0; up.len()];
            let mut db = vec![0.0; up.len()];
            for i in 0..up.len() {
                let a_wins = if is_max { av[i] >= bv[i] } else { av[i] <= bv[i] };
                if a_wins {
                    da[i] = up[i];
                } else {
                    db[i] = up[i];
                }
            }
            accumulate(grads, nodes, a, da);
            accumulate(grads, nodes, b, db);
        }
        &Op::SoftmaxRows(a) => {
            let (m, n) = out.dims2().unwrap();
            let y = out.data();
            let mut d = vec![0.0; m * n];
            for r in 0..m {
                let (ys, gs) = (&y[r * n..(r + 1) * n], &up[r * n..(r + 1) * n]);
                let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    d[r * n + j] = ys[j] * (gs[j] - dot);
                }
            }
            accumulate(grads, nodes, a, d);
        }
        Op::ConcatCols(parts) => {
            let (m, total) = out.dims2().unwrap();
            let mut offset = 0;
            for &p in parts {
                let w = val(p).dims2().unwrap().1;
                let mut d = Vec::with_capacity(m * w);
                for r in 0..m {
                    d.extend_from_slice(&up[r * total + offset..r * total + offset + w]);
                }
                accumulate(grads, nodes, p, d);
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = val(p).len();
                accumulate(grads, nodes, p, up[offset..offset + len].to_vec());
                offset += len;
            }
        }
        &Op::SliceCols(a, start) => {
            let (m, n) = val(a).dims2().unwrap();
            let w = out.dims2().unwrap().1;
            let mut d = vec![0.0; m * n];
            for r in 0..m {
                d[r * n + start..r * n + start + w].copy_from_slice(&up[r * w..(r + 1) * w]);
            }
            accumulate(grads, nodes, a, d);
        }
        &Op::SliceRows(a, start) => {
            let n = val(a).dims2().unwrap().1;
            let mut d = vec![0.0; val(a).len()];
            d[start * n..start * n + up.len()].copy_from_slice(up);
            accumulate(grads, nodes, a, d);
        }
        &Op::Sum(a) => accumulate(grads, nodes, a, vec![up[0]; val(a).len()]),
        &Op::Mean(a) => {
            let n = val(a).len();
            accumulate(grads, nodes, a, vec![up[0] / n as f64; n]);
        }
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    param_nodes: HashMap<ParamId, usize>,
}

impl Gradients {
    /// Gradient with respect to `var`, if the loss depends on it.
    pub fn wrt(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient with respect to a parameter used on the graph.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.param_nodes.get(&id).and_then(|&n| self.grads.get(n)).and_then(Option::as_ref)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.param_nodes
            .iter()
            .filter_map(|(&p, &n)| self.grads.get(n).and_then(Option::as_ref).map(|g| (p, g)))
    }
}

impl<'g> Var<'g> {
    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.rg(self.id)
    }

    fn unary(self, op: Op, value: Tensor) -> Var<'g> {
        let rg = self.graph.rg(self.id);
        self.graph.push(value, op, rg)
    }

    fn binary(self, other: Var<'g>, op: Op, value: Tensor) -> Var<'g> {
        let rg = self.graph.rg(self.id) || self.graph.rg(other.id);
        self.graph.push(value, op, rg)
    }

    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.value().matmul(&other.value())?;
        Ok(self.binary(other, Op::MatMul(self.id, other.id), v))
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(self, other: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        let (m, k) = a.dims2()?;
        let (n, k2) = b.dims2()?;
        if k != k2 {
            return Err(shape_err!("matmul_t inner dimensions {} and {} differ", k, k2));
        }
        let v = Tensor::new(&[m, n], tensor::mm_nt(a.data(), b.data(), m, k, n))?;
        Ok(self.binary(other, Op::MatMulT(self.id, other.id), v))
    }

    pub fn transpose(self) -> Result<Var<'g>> {
        let v = self.value().transpose()?;
        Ok(self.unary(Op::Transpose(self.id), v))
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.value().zip_map(&other.value(), |a, b| a + b)?;
        Ok(self.binary(other, Op::Add(self.id, other.id), v))
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.value().zip_map(&other.value(), |a, b| a - b)?;
        Ok(self.binary(other, Op::Sub(self.id, other.id), v))
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.value().zip_map(&other.value(), |a, b| a * b)?;
        Ok(self.binary(other, Op::Mul(self.id, other.id), v))
    }

    pub fn div(self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.value().zip_map(&other.value(), |a, b| a / b)?;
        Ok(self.binary(other, Op::Div(self.id, other.id), v))
    }

    /// Adds a length-`n` row to every row of an `m × n` matrix.
    pub fn add_row(self, row: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), row.value());
        let (m, n) = a.dims2()?;
        if b.len() != n {
            return Err(shape_err!("bias of length {} for width {}", b.len(), n));
        }
        let mut data = a.data().to_vec();
        for r in 0..m {
            data[r * n..(r + 1) * n].iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
        let v = Tensor::new(&[m, n], data)?;
        Ok(self.binary(row, Op::AddRow(self.id, row.id), v))
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        let v = self.value().map(|x| x * c);
        self.unary(Op::Scale(self.id, c), v)
    }

    pub fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        let v = self.value().map(|x| x + c);
        self.unary(Op::AddScalar(self.id), v)
    }

    /// `c - self`.
    pub fn rsub_scalar(self, c: f64) -> Var<'g> {
        self.neg().add_scalar(c)
    }

    pub fn relu(self) -> Var<'g> {
        let v = self.value().map(|x| x.max(0.0));
        self.unary(Op::Relu(self.id), v)
    }

    pub fn sigmoid(self) -> Var<'g> {
        let v = self.value().map(sigmoid);
        self.unary(Op::Sigmoid(self.id), v)
    }

    pub fn exp(self) -> Var<'g> {
        let v = self.value().map(f64::exp);
        self.unary(Op::Exp(self.id), v)
    }

    pub fn ln(self) -> Var<'g> {
        let v = self.value().map(f64::ln);
        self.unary(Op::Ln(self.id), v)
    }

    pub fn abs(self) -> Var<'g> {
        let v = self.value().map(f64::abs);
        self.unary(Op::Abs(self.id), v)
    }

    pub fn powf(self, p: f64) -> Var<'g> {
        let v = self.value().map(|x| x.powf(p));
        self.unary(Op::Powf(self.id, p), v)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'g> {
        let v = self.value().map(|x| x.clamp(lo, hi));
        self.unary(Op::Clamp(self.id, lo, hi), v)
    }

    pub fn maximum(self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.value().zip_map(&other.value(), f64::max)?;
        Ok(self.binary(other, Op::Maximum(self.id, other.id), v))
    }

    pub fn minimum(self, other: Var<'g>) -> Result<Var<'g>> {
        let v = self.value().zip_map(&other.value(), f64::min)?;
        Ok(self.binary(other, Op::Minimum(self.id, other.id), v))
    }

    pub fn softmax_rows(self) -> Result<Var<'g>> {
        let v = self.value().softmax_rows()?;
        Ok(self.unary(Op::SoftmaxRows(self.id), v))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'g>> {
        let a = self.value();
        let (m, n) = a.dims2()?;
        if start >= end || end > n {
            return Err(shape_err!("column range {}..{} out of 0..{}", start, end, n));
        }
        let mut data = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            data.extend_from_slice(&a.row(r)[start..end]);
        }
        let v = Tensor::new(&[m, end - start], data)?;
        Ok(self.unary(Op::SliceCols(self.id, start), v))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'g>> {
        let a = self.value();
        let (m, n) = a.dims2()?;
        if start >= end || end > m {
            return Err(shape_err!("row range {}..{} out of 0..{}", start, end, m));
        }
        let v = Tensor::new(&[end - start, n], a.data()[start * n..end * n].to_vec())?;
        Ok(self.unary(Op::SliceRows(self.id, start), v))
    }

    pub fn row(self, r: usize) -> Result<Var<'g>> {
        self.slice_rows(r, r + 1)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let v = self.value().reshape(shape)?;
        Ok(self.unary(Op::Reshape(self.id), v))
    }

    pub fn sum(self) -> Var<'g> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(Op::Sum(self.id), v)
    }

    pub fn mean(self) -> Var<'g> {
        let a = self.value();
        let v = Tensor::scalar(a.sum() / a.len() as f64);
        self.unary(Op::Mean(self.id), v)
    }

    pub fn item(&self) -> f64 {
        self.value().item()
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let g = Graph::new();
        let x = g.input(Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let grads = g.backward(x.sum()).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn square_gives_two_x() {
        let g = Graph::new();
        let data = vec![1.0, -2.0, 3.5, 0.25];
        let x = g.input(Tensor::new(&[4], data.clone()).unwrap());
        let loss = x.mul(x).unwrap().sum();
        let grads = g.backward(loss).unwrap();
        let expected: Vec<f64> = data.iter().map(|v| 2.0 * v).collect();
        assert_eq!(grads.wrt(x).unwrap().data(), expected.as_slice());
    }

    #[test]
    fn fan_out_accumulates() {
        let g = Graph::new();
        let x = g.input(Tensor::new(&[3], vec![0.3, -1.2, 2.0]).unwrap());
        let f = x.mul(x).unwrap().sum();
        let h = x.sigmoid().sum();
        let both = f.add(h).unwrap();
        let gb = g.backward(both).unwrap().wrt(x).unwrap().clone();
        let gf = g.backward(f).unwrap().wrt(x).unwrap().clone();
        let gh = g.backward(h).unwrap().wrt(x).unwrap().clone();
        for i in 0..3 {
            assert!((gb.data()[i] - gf.data()[i] - gh.data()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let g = Graph::new();
        let x = g.input(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let g = Graph::new();
        let c = g.constant(Tensor::ones(&[2]));
        let x = g.input(Tensor::ones(&[2]));
        let grads = g.backward(c.mul(x).unwrap().sum()).unwrap();
        assert!(grads.wrt(c).is_none());
        assert!(grads.wrt(x).is_some());
    }

    #[test]
    fn parents_precede_children() {
        let g = Graph::new();
        let x = g.input(Tensor::ones(&[1, 2]));
        let y = x.relu().scale(2.0);
        assert!(x.id < y.id);
        assert_eq!(g.len(), 3);
    }
}
