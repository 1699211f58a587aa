use std::cell::{Ref, RefCell};
use std::collections::HashMap;

use super::kernels;
use super::{gemm, Float, Tensor};
use crate::error::{Error, Result};

/// Recorded operation with references to its parent nodes and whatever the
/// backward rule needs from the forward pass.
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    BatchMatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddLeading(usize, usize),
    Scale(usize, T),
    Softmax(usize, usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Concat(Vec<usize>, usize),
    Narrow {
        x: usize,
        axis: usize,
        start: usize,
    },
    Expand(usize),
    Sum(usize),
    Mean(usize),
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

struct Inner<T> {
    nodes: Vec<Node<T>>,
    record: bool,
    backward_done: bool,
}

/// Append-only record of tensor operations.
///
/// Nodes are stored in creation order, so every entry's parents precede it
/// and a reverse sweep is a valid topological order for backpropagation.
pub struct Tape<T: Float> {
    inner: RefCell<Inner<T>>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Float> {
    tape: &'t Tape<T>,
    id: usize,
}

/// Gradients of a scalar with respect to the tape's trainable leaves.
#[derive(Debug)]
pub struct Gradients<T> {
    by_leaf: HashMap<usize, Tensor<T>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        self.by_leaf.get(&var.id)
    }

    pub fn take(&mut self, var: &Var<'_, T>) -> Option<Tensor<T>> {
        self.by_leaf.remove(&var.id)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

impl<T: Float> Tape<T> {
    /// A tape that records operations for backpropagation.
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                record: true,
                backward_done: false,
            }),
        }
    }

    /// A tape that evaluates operations without recording backward state.
    pub fn no_grad() -> Self {
        let t = Self::new();
        t.inner.borrow_mut().record = false;
        t
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf whose gradient is collected by [`Tape::backward`].
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        let record = self.inner.borrow().record;
        self.push_node(value, Op::Leaf, record)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(value, Op::Leaf, false)
    }

    fn push_node(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self, id }
    }

    fn push(&self, value: Tensor<T>, parents: &[usize], op: impl FnOnce() -> Op<T>) -> Var<'_, T> {
        let needs = {
            let inner = self.inner.borrow();
            inner.record && parents.iter().any(|&p| inner.nodes[p].requires_grad)
        };
        if needs {
            self.push_node(value, op(), true)
        } else {
            self.push_node(value, Op::Leaf, false)
        }
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor<T>> {
        Ref::map(self.inner.borrow(), |i| &i.nodes[id].value)
    }

    /// Allows another call to [`Tape::backward`] on the same recording.
    pub fn reset_backward(&self) {
        self.inner.borrow_mut().backward_done = false;
    }

    /// Backpropagates from a scalar `loss` to every trainable leaf reachable
    /// from it.
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<Gradients<T>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract("loss belongs to a different tape".into()));
        }
        let by_leaf = {
            let inner = self.inner.borrow();
            if inner.backward_done {
                return Err(Error::Contract(
                    "backward already ran on this tape; call reset_backward first".into(),
                ));
            }
            let root = &inner.nodes[loss.id];
            if root.value.numel() != 1 {
                return Err(Error::Contract(format!(
                    "backward needs a scalar loss, got shape {:?}",
                    root.value.shape()
                )));
            }
            backprop(&inner.nodes, loss.id)
        };
        self.inner.borrow_mut().backward_done = true;
        Ok(Gradients { by_leaf })
    }
}

fn accumulate<T: Float>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    id: usize,
    g: Vec<T>,
) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        slot => *slot = Some(g),
    }
}

fn backprop<T: Float>(nodes: &[Node<T>], root: usize) -> HashMap<usize, Tensor<T>> {
    let mut grads: Vec<Option<Vec<T>>> = (0..=root).map(|_| None).collect();
    grads[root] = Some(vec![T::one()]);
    let mut out = HashMap::new();

    for id in (0..=root).rev() {
        let Some(g) = grads[id].take() else { continue };
        let node = &nodes[id];
        if !node.requires_grad {
            continue;
        }
        let val = |p: usize| &nodes[p].value;
        match &node.op {
            Op::Leaf => {
                let t = Tensor::new(node.value.shape().to_vec(), g).expect("gradient shape");
                out.insert(id, t);
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (rows, k, n, _) =
                    kernels::matmul_dims(av.shape(), bv.shape()).expect("recorded shapes");
                if nodes[*a].requires_grad {
                    let mut da = vec![T::zero(); rows * k];
                    gemm(rows, n, k, &g, false, bv.data(), true, &mut da, false);
                    accumulate(nodes, &mut grads, *a, da);
                }
                if nodes[*b].requires_grad {
                    let mut db = vec![T::zero(); k * n];
                    gemm(k, rows, n, av.data(), true, &g, false, &mut db, false);
                    accumulate(nodes, &mut grads, *b, db);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (batch, m, k, n) = kernels::bmm_dims(av.shape(), bv.shape()).expect("shapes");
                if nodes[*a].requires_grad {
                    let mut da = vec![T::zero(); batch * m * k];
                    for i in 0..batch {
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..(i + 1) * m * n],
                            false,
                            &bv.data()[i * k * n..(i + 1) * k * n],
                            true,
                            &mut da[i * m * k..(i + 1) * m * k],
                            false,
                        );
                    }
                    accumulate(nodes, &mut grads, *a, da);
                }
                if nodes[*b].requires_grad {
                    let mut db = vec![T::zero(); batch * k * n];
                    for i in 0..batch {
                        gemm(
                            k,
                            m,
                            n,
                            &av.data()[i * m * k..(i + 1) * m * k],
                            true,
                            &g[i * m * n..(i + 1) * m * n],
                            false,
                            &mut db[i * k * n..(i + 1) * k * n],
                            false,
                        );
                    }
                    accumulate(nodes, &mut grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                accumulate(nodes, &mut grads, *b, g.clone());
                accumulate(nodes, &mut grads, *a, g);
            }
            Op::Sub(a, b) => {
                accumulate(nodes, &mut grads, *b, g.iter().map(|&v| -v).collect());
                accumulate(nodes, &mut grads, *a, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let da = g.iter().zip(bv.data()).map(|(&g, &y)| g * y).collect();
                let db = g.iter().zip(av.data()).map(|(&g, &x)| g * x).collect();
                accumulate(nodes, &mut grads, *a, da);
                accumulate(nodes, &mut grads, *b, db);
            }
            Op::AddLeading(a, b) => {
                let width = val(*b).numel();
                let mut db = vec![T::zero(); width];
                for chunk in g.chunks_exact(width) {
                    for (d, &v) in db.iter_mut().zip(chunk) {
                        *d += v;
                    }
                }
                accumulate(nodes, &mut grads, *b, db);
                accumulate(nodes, &mut grads, *a, g);
            }
            Op::Scale(a, s) => {
                let s = *s;
                accumulate(nodes, &mut grads, *a, g.iter().map(|&v| v * s).collect());
            }
            Op::Softmax(a, axis) => {
                let dx = kernels::softmax_backward(node.value.data(), &g, node.value.shape(), *axis);
                accumulate(nodes, &mut grads, *a, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let gv = val(*gamma);
                let d = gv.numel();
                let (dx, dgamma, dbeta) =
                    kernels::layer_norm_backward(val(*x).data(), &g, d, gv.data(), mean, rstd);
                accumulate(nodes, &mut grads, *gamma, dgamma);
                accumulate(nodes, &mut grads, *beta, dbeta);
                accumulate(nodes, &mut grads, *x, dx);
            }
            Op::Gelu(a) => {
                let dx = g
                    .iter()
                    .zip(val(*a).data())
                    .map(|(&g, &x)| g * kernels::gelu_grad(x))
                    .collect();
                accumulate(nodes, &mut grads, *a, dx);
            }
            Op::Reshape(a) => accumulate(nodes, &mut grads, *a, g),
            Op::Permute(a, perm) => {
                let inv = kernels::inverse_perm(perm);
                let (dx, _) = kernels::permute(&g, node.value.shape(), &inv);
                accumulate(nodes, &mut grads, *a, dx);
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = kernels::axis_extents(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).shape()[*axis];
                    if nodes[p].requires_grad {
                        let mut dp = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            dp.extend_from_slice(&g[start..start + len * inner]);
                        }
                        accumulate(nodes, &mut grads, p, dp);
                    }
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let xv = val(*x);
                let (outer, total, inner) = kernels::axis_extents(xv.shape(), *axis);
                let len = node.value.shape()[*axis];
                let mut dx = vec![T::zero(); xv.numel()];
                for o in 0..outer {
                    let dst = (o * total + start) * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                accumulate(nodes, &mut grads, *x, dx);
            }
            Op::Expand(a) => {
                let width = val(*a).numel();
                let mut dx = vec![T::zero(); width];
                for chunk in g.chunks_exact(width) {
                    for (d, &v) in dx.iter_mut().zip(chunk) {
                        *d += v;
                    }
                }
                accumulate(nodes, &mut grads, *a, dx);
            }
            Op::Sum(a) => {
                let n = val(*a).numel();
                accumulate(nodes, &mut grads, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = val(*a).numel();
                let v = g[0] / T::of(n as f64);
                accumulate(nodes, &mut grads, *a, vec![v; n]);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let classes = val(*logits).shape()[1];
                let scale = g[0] / T::of(labels.len() as f64);
                let mut dx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    dx[r * classes + l] -= scale;
                }
                accumulate(nodes, &mut grads, *logits, dx);
            }
        }
    }
    out
}

impl<'t, T: Float> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    fn same_tape(&self, other: &Var<'_, T>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("operands live on different tapes".into()))
        }
    }

    fn same_shape(&self, other: &Var<'_, T>, op: &'static str) -> Result<()> {
        self.same_tape(other)?;
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(Error::ShapeMismatch { op, lhs: a, rhs: b });
        }
        Ok(())
    }

    /// `[.., m, k] x [k, n] -> [.., m, n]`.
    pub fn matmul(&self, rhs: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(rhs)?;
        let out = self.value().matmul(&rhs.value())?;
        Ok(self.tape.push(out, &[self.id, rhs.id], || Op::MatMul(self.id, rhs.id)))
    }

    /// `[b, m, k] x [b, k, n] -> [b, m, n]`.
    pub fn batch_matmul(&self, rhs: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(rhs)?;
        let out = {
            let (a, b) = (self.value(), rhs.value());
            let (batch, m, k, n) = kernels::bmm_dims(a.shape(), b.shape())?;
            let mut c = vec![T::zero(); batch * m * n];
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &a.data()[i * m * k..(i + 1) * m * k],
                    false,
                    &b.data()[i * k * n..(i + 1) * k * n],
                    false,
                    &mut c[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
            Tensor::new([batch, m, n], c)?
        };
        Ok(self
            .tape
            .push(out, &[self.id, rhs.id], || Op::BatchMatMul(self.id, rhs.id)))
    }

    fn zip_with(&self, rhs: &Var<'t, T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.same_shape(rhs, op)?;
        let (a, b) = (self.value(), rhs.value());
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), data)
    }

    pub fn add(&self, rhs: &Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.zip_with(rhs, "add", |a, b| a + b)?;
        Ok(self.tape.push(out, &[self.id, rhs.id], || Op::Add(self.id, rhs.id)))
    }

    pub fn sub(&self, rhs: &Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.zip_with(rhs, "sub", |a, b| a - b)?;
        Ok(self.tape.push(out, &[self.id, rhs.id], || Op::Sub(self.id, rhs.id)))
    }

    pub fn mul(&self, rhs: &Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.zip_with(rhs, "mul", |a, b| a * b)?;
        Ok(self.tape.push(out, &[self.id, rhs.id], || Op::Mul(self.id, rhs.id)))
    }

    /// Adds `rhs` to every trailing slice of `self`; `rhs`'s shape must equal
    /// the trailing dimensions of `self` (leading-batch broadcast only).
    pub fn add_leading(&self, rhs: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(rhs)?;
        let out = {
            let (a, b) = (self.value(), rhs.value());
            let (sa, sb) = (a.shape(), b.shape());
            if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
                return Err(Error::ShapeMismatch {
                    op: "add_leading",
                    lhs: sa.to_vec(),
                    rhs: sb.to_vec(),
                });
            }
            let mut data = a.data().to_vec();
            for chunk in data.chunks_exact_mut(b.numel()) {
                for (x, &y) in chunk.iter_mut().zip(b.data()) {
                    *x += y;
                }
            }
            Tensor::new(sa.to_vec(), data)?
        };
        Ok(self
            .tape
            .push(out, &[self.id, rhs.id], || Op::AddLeading(self.id, rhs.id)))
    }

    pub fn scale(&self, s: T) -> Var<'t, T> {
        let out = self.value().map(|v| v * s);
        self.tape.push(out, &[self.id], || Op::Scale(self.id, s))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Var<'t, T>> {
        let out = {
            let x = self.value();
            if axis >= x.ndim() {
                return Err(Error::InvalidShape {
                    shape: x.shape().to_vec(),
                    reason: format!("softmax axis {axis} out of range"),
                });
            }
            if !x.all_finite() {
                return Err(Error::NonFinite("softmax input".into()));
            }
            Tensor::new(x.shape().to_vec(), kernels::softmax_forward(x.data(), x.shape(), axis))?
        };
        Ok(self.tape.push(out, &[self.id], || Op::Softmax(self.id, axis)))
    }

    /// Layer normalization over the last dimension.
    pub fn layer_norm(&self, gamma: &Var<'t, T>, beta: &Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        self.same_tape(gamma)?;
        self.same_tape(beta)?;
        let (out, mean, rstd) = {
            let (x, g, b) = (self.value(), gamma.value(), beta.value());
            let d = *x.shape().last().unwrap_or(&1);
            if g.shape() != [d] || b.shape() != [d] {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    lhs: x.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if eps <= T::zero() {
                return Err(Error::Contract("layer_norm eps must be positive".into()));
            }
            let r = kernels::layer_norm_forward(x.data(), d, g.data(), b.data(), eps);
            (Tensor::new(x.shape().to_vec(), r.y)?, r.mean, r.rstd)
        };
        Ok(self.tape.push(out, &[self.id, gamma.id, beta.id], || Op::LayerNorm {
            x: self.id,
            gamma: gamma.id,
            beta: beta.id,
            mean,
            rstd,
        }))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self) -> Var<'t, T> {
        let out = self.value().map(kernels::gelu);
        self.tape.push(out, &[self.id], || Op::Gelu(self.id))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        let out = self.value().clone().reshape(shape)?;
        Ok(self.tape.push(out, &[self.id], || Op::Reshape(self.id)))
    }

    /// Reorders axes so that output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t, T>> {
        let out = {
            let x = self.value();
            let mut sorted = perm.to_vec();
            sorted.sort_unstable();
            if sorted != (0..x.ndim()).collect::<Vec<_>>() {
                return Err(Error::InvalidShape {
                    shape: x.shape().to_vec(),
                    reason: format!("invalid permutation {perm:?}"),
                });
            }
            let (data, shape) = kernels::permute(x.data(), x.shape(), perm);
            Tensor::new(shape, data)?
        };
        let perm = perm.to_vec();
        Ok(self.tape.push(out, &[self.id], || Op::Permute(self.id, perm)))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let tape = first.tape;
        let out = {
            let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
            let base = values[0].shape().to_vec();
            if axis >= base.len() {
                return Err(Error::InvalidShape {
                    shape: base,
                    reason: format!("concat axis {axis} out of range"),
                });
            }
            let mut total = 0;
            for (p, v) in parts.iter().zip(&values) {
                first.same_tape(p)?;
                let s = v.shape();
                let compatible = s.len() == base.len()
                    && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        lhs: base.clone(),
                        rhs: s.to_vec(),
                    });
                }
                total += s[axis];
            }
            let (outer, _, inner) = kernels::axis_extents(&base, axis);
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for v in &values {
                    let len = v.shape()[axis] * inner;
                    data.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
                }
            }
            let mut shape = base;
            shape[axis] = total;
            Tensor::new(shape, data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(out, &ids.clone(), || Op::Concat(ids, axis)))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let out = {
            let x = self.value();
            if axis >= x.ndim() || len == 0 || start + len > x.shape()[axis] {
                return Err(Error::InvalidShape {
                    shape: x.shape().to_vec(),
                    reason: format!("narrow({axis}, {start}, {len}) out of range"),
                });
            }
            let (outer, total, inner) = kernels::axis_extents(x.shape(), axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let s = (o * total + start) * inner;
                data.extend_from_slice(&x.data()[s..s + len * inner]);
            }
            let mut shape = x.shape().to_vec();
            shape[axis] = len;
            Tensor::new(shape, data)?
        };
        Ok(self.tape.push(out, &[self.id], || Op::Narrow {
            x: self.id,
            axis,
            start,
        }))
    }

    /// Repeats the tensor along a new leading axis of size `n`.
    pub fn expand_leading(&self, n: usize) -> Result<Var<'t, T>> {
        let out = {
            let x = self.value();
            let mut shape = vec![n];
            shape.extend_from_slice(x.shape());
            let mut data = Vec::with_capacity(n * x.numel());
            for _ in 0..n {
                data.extend_from_slice(x.data());
            }
            Tensor::new(shape, data)?
        };
        Ok(self.tape.push(out, &[self.id], || Op::Expand(self.id)))
    }

    pub fn sum(&self) -> Var<'t, T> {
        let out = Tensor::scalar(self.value().data().iter().copied().sum());
        self.tape.push(out, &[self.id], || Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t, T> {
        let out = {
            let x = self.value();
            Tensor::scalar(x.data().iter().copied().sum::<T>() / T::of(x.numel() as f64))
        };
        self.tape.push(out, &[self.id], || Op::Mean(self.id))
    }

    /// Mean cross-entropy of `[batch, classes]` logits against `labels`,
    /// computed through log-sum-exp.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Var<'t, T>> {
        let (out, probs) = {
            let x = self.value();
            let s = x.shape();
            if s.len() != 2 || s[0] != labels.len() {
                return Err(Error::ShapeMismatch {
                    op: "cross_entropy",
                    lhs: s.to_vec(),
                    rhs: vec![labels.len()],
                });
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= s[1]) {
                return Err(Error::LabelOverflow {
                    label: bad,
                    classes: s[1],
                });
            }
            let (loss, probs) = kernels::cross_entropy_forward(x.data(), s[1], labels);
            (Tensor::scalar(loss), probs)
        };
        let labels = labels.to_vec();
        Ok(self.tape.push(out, &[self.id], || Op::CrossEntropy {
            logits: self.id,
            labels,
            probs,
        }))
    }
}
