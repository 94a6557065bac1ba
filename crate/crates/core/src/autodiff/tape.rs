use std::cell::{Ref, RefCell};

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Primitive operations the tape knows how to record and differentiate.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind<T> {
    /// Variable or constant; never recorded through [`Tape::record`].
    Leaf,
    MatMul,
    /// Elementwise with row/column broadcasting.
    Add,
    /// Elementwise with row/column broadcasting.
    Mul,
    ScalarMul(T),
    Sin,
    Cos,
    Tanh,
    Recip,
    /// Sum of all entries into a rank-0 tensor.
    Sum,
    /// Sum broadcast dimensions down to the given shape.
    SumTo(Vec<usize>),
    BroadcastTo(Vec<usize>),
    /// Half-open range along the last axis.
    Slice { start: usize, end: usize },
    /// Concatenation along the last axis.
    Concat,
    Transpose,
    Reshape(Vec<usize>),
    /// Copy that starts a fresh path, used to take partial derivatives.
    Identity,
}

impl<T> OpKind<T> {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::ScalarMul(_) => "scalar-mul",
            OpKind::Sin => "sin",
            OpKind::Cos => "cos",
            OpKind::Tanh => "tanh",
            OpKind::Recip => "recip",
            OpKind::Sum => "sum",
            OpKind::SumTo(_) => "sum-to",
            OpKind::BroadcastTo(_) => "broadcast-to",
            OpKind::Slice { .. } => "slice",
            OpKind::Concat => "concat",
            OpKind::Transpose => "transpose",
            OpKind::Reshape(_) => "reshape",
            OpKind::Identity => "identity",
        }
    }
}

struct Node<T> {
    kind: OpKind<T>,
    inputs: Vec<usize>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Append-only record of a computation. Node ids are positions in the record,
/// so every node's inputs precede it.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
    visited: usize,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a leaf; `None` if the loss does not depend on it.
    pub fn get(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient for a leaf, zero-filled when the loss does not depend on it.
    pub fn wrt(&self, var: &Var<'_, T>) -> Tensor<T> {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes.get(var.id).map_or(&[][..], Vec::as_slice)),
        }
    }

    /// Number of nodes the reverse sweep processed.
    pub fn nodes_visited(&self) -> usize {
        self.visited
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, kind: OpKind<T>, inputs: Vec<usize>, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { kind, inputs, value, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Differentiable leaf.
    pub fn var(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(OpKind::Leaf, Vec::new(), value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(OpKind::Leaf, Vec::new(), value, false)
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.constant(Tensor::scalar(value))
    }

    pub fn concat(&self, parts: &[Var<'_, T>]) -> Result<Var<'_, T>> {
        let parts: Vec<Var<'_, T>> = parts.iter().map(|v| Var { tape: self, id: v.id }).collect();
        self.record(OpKind::Concat, &parts)
    }

    /// Record one primitive and compute its forward value.
    pub fn record<'t>(&'t self, kind: OpKind<T>, inputs: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        if let OpKind::MatMul = kind {
            if let [a, b] = inputs {
                let (ra, rb) = (a.rank(), b.rank());
                if (ra == 1 || rb == 1) && ra <= 2 && rb <= 2 {
                    return self.matmul_vector(*a, *b);
                }
            }
        }
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let vals: Vec<&Tensor<T>> = ids.iter().map(|&i| &nodes[i].value).collect();
            let value = forward(&kind, &vals)?;
            (value, ids.iter().any(|&i| nodes[i].requires_grad))
        };
        Ok(self.push(kind, ids, value, requires_grad))
    }

    fn matmul_vector<'t>(&'t self, a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
        let (sa, sb) = (a.shape(), b.shape());
        let a2 = if sa.len() == 1 { a.reshape(&[1, sa[0]])? } else { a };
        let b2 = if sb.len() == 1 { b.reshape(&[sb[0], 1])? } else { b };
        let out = self.record(OpKind::MatMul, &[a2, b2])?;
        let shape = match (sa.len(), sb.len()) {
            (1, 1) => vec![],
            (2, 1) => vec![sa[0]],
            _ => vec![sb[1]],
        };
        out.reshape(&shape)
    }

    /// Reverse sweep from a scalar loss, returning gradients of every leaf.
    ///
    /// The sweep runs on stored values only and does not extend the tape.
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.id).map(|_| None).collect();
        let mut out: Vec<Option<Tensor<T>>> = (0..=loss.id).map(|_| None).collect();
        let shapes = nodes[..=loss.id].iter().map(|n| n.value.shape().to_vec()).collect();
        let mut visited = 0;
        if root.requires_grad {
            grads[loss.id] = Some(Tensor::ones(root.value.shape()));
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            visited += 1;
            let node = &nodes[id];
            if let OpKind::Leaf = node.kind {
                out[id] = Some(g);
                continue;
            }
            let vals: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| &nodes[i].value).collect();
            for (k, &input) in node.inputs.iter().enumerate() {
                if !nodes[input].requires_grad {
                    continue;
                }
                let contrib = vjp_value(&node.kind, k, &g, &vals, &node.value);
                match &mut grads[input] {
                    Some(acc) => acc.accumulate(&contrib),
                    slot => *slot = Some(contrib),
                }
            }
        }
        Ok(Gradients { grads: out, shapes, visited })
    }

    /// Gradients of `scalar` with respect to `inputs`, recorded on the tape so
    /// they can themselves be differentiated.
    ///
    /// Each input is treated as an independent variable: paths that reach one
    /// input through another input are cut. An input the scalar does not
    /// depend on gets a zero constant of matching shape.
    pub fn grad_wrt<'t>(&'t self, scalar: &Var<'t, T>, inputs: &[Var<'t, T>]) -> Result<Vec<Var<'t, T>>> {
        let (depends, is_input, scalar_shape) = {
            let nodes = self.nodes.borrow();
            let value = &nodes[scalar.id].value;
            if value.len() != 1 {
                return Err(Error::NonScalarLoss(value.shape().to_vec()));
            }
            let mut depends = vec![false; scalar.id + 1];
            let mut is_input = vec![false; scalar.id + 1];
            for v in inputs {
                if v.id <= scalar.id {
                    depends[v.id] = true;
                    is_input[v.id] = true;
                }
            }
            let start = inputs.iter().map(|v| v.id).min().unwrap_or(scalar.id + 1);
            for id in start..=scalar.id {
                if !depends[id] {
                    depends[id] = nodes[id].inputs.iter().any(|&i| depends[i]);
                }
            }
            (depends, is_input, value.shape().to_vec())
        };
        let zeros = |v: &Var<'t, T>| self.constant(Tensor::zeros(&v.shape()));
        if !depends[scalar.id] {
            return Ok(inputs.iter().map(zeros).collect());
        }
        let mut grads: Vec<Option<Var<'t, T>>> = vec![None; scalar.id + 1];
        grads[scalar.id] = Some(self.constant(Tensor::ones(&scalar_shape)));
        let start = inputs.iter().map(|v| v.id).min().unwrap_or(0);
        for id in (start..=scalar.id).rev() {
            if is_input[id] || !depends[id] {
                continue;
            }
            let Some(g) = grads[id] else { continue };
            let (kind, node_inputs) = {
                let nodes = self.nodes.borrow();
                (nodes[id].kind.clone(), nodes[id].inputs.clone())
            };
            for (k, &input) in node_inputs.iter().enumerate() {
                if !depends[input] {
                    continue;
                }
                let contrib = vjp_recorded(self, &kind, k, g, &node_inputs, id)?;
                grads[input] = Some(match grads[input] {
                    Some(acc) => acc.add(contrib)?,
                    None => contrib,
                });
            }
        }
        Ok(inputs
            .iter()
            .map(|v| match grads.get(v.id).copied().flatten() {
                Some(g) => g,
                None => zeros(v),
            })
            .collect())
    }

    fn var_at(&self, id: usize) -> Var<'_, T> {
        Var { tape: self, id }
    }
}

fn mismatch<T>(kind: &OpKind<T>, vals: &[&Tensor<T>]) -> Error
where
    T: Scalar,
{
    Error::ShapeMismatch { op: kind.name(), shapes: vals.iter().map(|v| v.shape().to_vec()).collect() }
}

fn forward<T: Scalar>(kind: &OpKind<T>, vals: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let bad = || mismatch(kind, vals);
    let arity = match kind {
        OpKind::Leaf => return Err(bad()),
        OpKind::MatMul | OpKind::Add | OpKind::Mul => 2,
        OpKind::Concat => vals.len().max(1),
        _ => 1,
    };
    if vals.len() != arity || vals.iter().any(|v| v.rank() > 2) {
        return Err(bad());
    }
    let x = vals[0];
    Ok(match kind {
        OpKind::Leaf => unreachable!(),
        OpKind::MatMul => {
            let (a, b) = (vals[0], vals[1]);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(bad());
            }
            tensor::matmul(a, false, b, false)
        }
        OpKind::Add | OpKind::Mul => {
            let (a, b) = (vals[0], vals[1]);
            let shape = tensor::broadcast_shape(a.shape(), b.shape()).ok_or_else(bad)?;
            if let OpKind::Add = kind {
                tensor::binary(a, b, &shape, |p, q| p + q)
            } else {
                tensor::binary(a, b, &shape, |p, q| p * q)
            }
        }
        OpKind::ScalarMul(c) => x.map(|v| *c * v),
        OpKind::Sin => x.map(T::sin),
        OpKind::Cos => x.map(T::cos),
        OpKind::Tanh => x.map(tanh),
        OpKind::Recip => x.map(T::recip),
        OpKind::Sum => Tensor::scalar(x.data().iter().fold(T::zero(), |a, &b| a + b)),
        OpKind::SumTo(shape) => {
            if !fits(shape, x.shape()) {
                return Err(bad());
            }
            tensor::sum_to(x, shape)
        }
        OpKind::BroadcastTo(shape) => {
            if !fits(x.shape(), shape) {
                return Err(bad());
            }
            tensor::broadcast_to(x, shape)
        }
        OpKind::Slice { start, end } => {
            let last = *x.shape().last().ok_or_else(bad)?;
            if start > end || *end > last {
                return Err(bad());
            }
            tensor::slice_last(x, *start, *end)
        }
        OpKind::Concat => {
            let rank = x.rank();
            if rank == 0 || vals.iter().any(|v| v.rank() != rank) {
                return Err(bad());
            }
            let rows = x.dims2().ok_or_else(bad)?.0;
            let mut cols = 0;
            for v in vals {
                let (r, c) = v.dims2().ok_or_else(bad)?;
                if r != rows {
                    return Err(bad());
                }
                cols += c;
            }
            let shape = if rank == 1 { vec![cols] } else { vec![rows, cols] };
            tensor::concat_last(vals, &shape)
        }
        OpKind::Transpose => {
            if x.rank() != 2 {
                return Err(bad());
            }
            tensor::transpose(x)
        }
        OpKind::Reshape(shape) => {
            if shape.len() > 2 || shape.iter().product::<usize>() != x.len() {
                return Err(bad());
            }
            x.reshape(shape)?
        }
        OpKind::Identity => x.clone(),
    })
}

/// `tanh` through `exp`, which is several times cheaper than the libm routine;
/// `expm1` keeps small arguments accurate.
fn tanh<T: Scalar>(x: T) -> T {
    let two = T::lit(2.0);
    let a = x.abs();
    let t = if a < T::lit(0.5) {
        let e = (two * a).exp_m1();
        e / (e + two)
    } else {
        T::one() - two / ((two * a).exp() + T::one())
    };
    if x.is_sign_negative() { -t } else { t }
}

/// `small` broadcasts up to `big` without changing rank upward past `big`.
fn fits(small: &[usize], big: &[usize]) -> bool {
    if small.len() > big.len() || big.len() > 2 {
        return false;
    }
    matches!(tensor::broadcast_shape(small, big), Some(s) if s == big)
}

/// Vector-Jacobian product on plain values for input `k`.
fn vjp_value<T: Scalar>(
    kind: &OpKind<T>,
    k: usize,
    g: &Tensor<T>,
    vals: &[&Tensor<T>],
    out: &Tensor<T>,
) -> Tensor<T> {
    let x = vals[k];
    match kind {
        OpKind::Leaf => unreachable!("leaves have no inputs"),
        OpKind::MatMul => {
            if k == 0 {
                tensor::matmul(g, false, vals[1], true)
            } else {
                tensor::matmul(vals[0], true, g, false)
            }
        }
        OpKind::Add => tensor::sum_to(g, x.shape()),
        OpKind::Mul => {
            let other = vals[1 - k];
            let prod = tensor::binary(g, other, g.shape(), |a, b| a * b);
            tensor::sum_to(&prod, x.shape())
        }
        OpKind::ScalarMul(c) => g.map(|v| *c * v),
        OpKind::Sin => tensor::binary(g, x, g.shape(), |a, b| a * b.cos()),
        OpKind::Cos => tensor::binary(g, x, g.shape(), |a, b| -a * b.sin()),
        OpKind::Tanh => tensor::binary(g, out, g.shape(), |a, y| a * (T::one() - y * y)),
        OpKind::Recip => tensor::binary(g, out, g.shape(), |a, y| -a * y * y),
        OpKind::Sum => Tensor::full(x.shape(), g.item()),
        OpKind::SumTo(_) => tensor::broadcast_to(g, x.shape()),
        OpKind::BroadcastTo(_) => tensor::sum_to(g, x.shape()),
        OpKind::Slice { start, .. } => tensor::pad_last(g, x.shape(), *start),
        OpKind::Concat => {
            let start: usize = vals[..k].iter().map(|v| v.dims2().expect("rank <= 2").1).sum();
            let w = x.dims2().expect("rank <= 2").1;
            tensor::slice_last(g, start, start + w)
        }
        OpKind::Transpose => tensor::transpose(g),
        OpKind::Reshape(_) => g.reshape(x.shape()).expect("same length"),
        OpKind::Identity => g.clone(),
    }
}

/// Vector-Jacobian product expressed in tape primitives for input `k`.
fn vjp_recorded<'t, T: Scalar>(
    tape: &'t Tape<T>,
    kind: &OpKind<T>,
    k: usize,
    g: Var<'t, T>,
    inputs: &[usize],
    out: usize,
) -> Result<Var<'t, T>> {
    let x = tape.var_at(inputs[k]);
    let y = tape.var_at(out);
    match kind {
        OpKind::Leaf => unreachable!("leaves have no inputs"),
        OpKind::MatMul => {
            if k == 0 {
                g.matmul(tape.var_at(inputs[1]).transpose()?)
            } else {
                tape.var_at(inputs[0]).transpose()?.matmul(g)
            }
        }
        OpKind::Add => g.sum_to(&x.shape()),
        OpKind::Mul => g.mul(tape.var_at(inputs[1 - k]))?.sum_to(&x.shape()),
        OpKind::ScalarMul(c) => g.scale(*c),
        OpKind::Sin => g.mul(x.cos()?),
        OpKind::Cos => g.mul(x.sin()?)?.neg(),
        OpKind::Tanh => {
            let gyy = g.mul(y)?.mul(y)?;
            g.sub(gyy)
        }
        OpKind::Recip => g.mul(y)?.mul(y)?.neg(),
        OpKind::Sum => g.broadcast_to(&x.shape()),
        OpKind::SumTo(_) => g.broadcast_to(&x.shape()),
        OpKind::BroadcastTo(_) => g.sum_to(&x.shape()),
        OpKind::Slice { start, end } => {
            let shape = x.shape();
            let last = *shape.last().expect("rank >= 1");
            let mut parts = Vec::with_capacity(3);
            let with_width = |w: usize| {
                let mut s = shape.clone();
                *s.last_mut().expect("rank >= 1") = w;
                s
            };
            if *start > 0 {
                parts.push(tape.constant(Tensor::zeros(&with_width(*start))));
            }
            parts.push(g);
            if *end < last {
                parts.push(tape.constant(Tensor::zeros(&with_width(last - end))));
            }
            if parts.len() == 1 {
                Ok(g)
            } else {
                tape.concat(&parts)
            }
        }
        OpKind::Concat => {
            let mut start = 0;
            for &i in &inputs[..k] {
                start += *tape.var_at(i).shape().last().expect("rank >= 1");
            }
            let w = *x.shape().last().expect("rank >= 1");
            g.slice(start, start + w)
        }
        OpKind::Transpose => g.transpose(),
        OpKind::Reshape(_) => g.reshape(&x.shape()),
        OpKind::Identity => Ok(g),
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn rank(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.rank()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Value of a single-element var.
    pub fn item(&self) -> T {
        self.value().item()
    }

    fn unary(self, kind: OpKind<T>) -> Result<Self> {
        self.tape.record(kind, &[self])
    }

    pub fn add(self, other: Self) -> Result<Self> {
        self.tape.record(OpKind::Add, &[self, other])
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        self.add(other.neg()?)
    }

    pub fn mul(self, other: Self) -> Result<Self> {
        self.tape.record(OpKind::Mul, &[self, other])
    }

    pub fn matmul(self, other: Self) -> Result<Self> {
        self.tape.record(OpKind::MatMul, &[self, other])
    }

    pub fn scale(self, c: T) -> Result<Self> {
        self.unary(OpKind::ScalarMul(c))
    }

    pub fn neg(self) -> Result<Self> {
        self.scale(-T::one())
    }

    pub fn square(self) -> Result<Self> {
        self.mul(self)
    }

    pub fn sin(self) -> Result<Self> {
        self.unary(OpKind::Sin)
    }

    pub fn cos(self) -> Result<Self> {
        self.unary(OpKind::Cos)
    }

    pub fn tanh(self) -> Result<Self> {
        self.unary(OpKind::Tanh)
    }

    pub fn recip(self) -> Result<Self> {
        self.unary(OpKind::Recip)
    }

    pub fn div(self, other: Self) -> Result<Self> {
        self.mul(other.recip()?)
    }

    pub fn sum(self) -> Result<Self> {
        self.unary(OpKind::Sum)
    }

    pub fn sum_to(self, shape: &[usize]) -> Result<Self> {
        if self.shape() == shape {
            return Ok(self);
        }
        self.unary(OpKind::SumTo(shape.to_vec()))
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Result<Self> {
        if self.shape() == shape {
            return Ok(self);
        }
        self.unary(OpKind::BroadcastTo(shape.to_vec()))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice(self, start: usize, end: usize) -> Result<Self> {
        self.unary(OpKind::Slice { start, end })
    }

    pub fn col(self, j: usize) -> Result<Self> {
        self.slice(j, j + 1)
    }

    pub fn transpose(self) -> Result<Self> {
        self.unary(OpKind::Transpose)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        self.unary(OpKind::Reshape(shape.to_vec()))
    }

    pub fn identity(self) -> Result<Self> {
        self.unary(OpKind::Identity)
    }
}
