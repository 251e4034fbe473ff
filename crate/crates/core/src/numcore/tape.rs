//! Tensor-level reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Parameters
//! enter through [`Tape::param`], which copies the current value out of a
//! [`ParamStore`]; [`Tape::backward`] walks the record in reverse and writes
//! `∂loss/∂param` back into the store. Only first-order derivatives.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use super::tensor::{gemm_nt, gemm_tn, MatmulPlan};
use super::{NumError, ParamId, ParamStore, Tensor};
use crate::Scalar;

enum Op<T> {
    Leaf,
    /// `b` broadcasts into `a` (equal shape, scalar, or trailing suffix).
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Shift(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    SwapAxes12(usize),
    Softmax(usize),
    Gelu(usize),
    Sigmoid(usize),
    LayerNorm(usize, T),
    Sum(usize),
    Mean(usize),
    MeanAxis(usize, usize),
    Concat(Vec<usize>, usize),
    Frames { input: usize, patch: usize, stride: usize },
    GatherRows(usize, Vec<usize>),
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Operation record for one forward pass.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    bound: RefCell<BTreeMap<ParamId, usize>>,
    track_params: bool,
}

/// A value recorded on a [`Tape`].
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    /// Starts a recording in which trainable parameters receive gradients.
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            bound: RefCell::new(BTreeMap::new()),
            track_params: true,
        }
    }

    /// Starts a recording where nothing requires a gradient.
    pub fn inference() -> Self {
        Tape {
            track_params: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a parameter. Binding the same id twice returns the same node, so
    /// a shared parameter accumulates gradient from every use.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.bound.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let p = store.get(id);
        let var = self.push(p.value.clone(), Op::Leaf, self.track_params && p.trainable);
        self.bound.borrow_mut().insert(id, var.id);
        var
    }

    /// Populates `store` grads with `∂loss/∂param` for every trainable
    /// parameter. Trainable parameters not reached by `loss` get zero grads;
    /// frozen parameters are left untouched.
    pub fn backward(&self, loss: Var<'_, T>, store: &mut ParamStore<T>) -> Result<(), NumError> {
        let grads = self.gradients(loss)?;
        store.zero_grads();
        for (&pid, &node) in self.bound.borrow().iter() {
            let p = store.get_mut(pid);
            if !p.trainable {
                continue;
            }
            if let Some(g) = &grads[node] {
                p.grad = g.clone();
            }
        }
        Ok(())
    }

    fn gradients(&self, loss: Var<'_, T>) -> Result<Vec<Option<Tensor<T>>>, NumError> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.shape() != [1] {
            return Err(NumError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(&[1]));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let val = |i: usize| -> &Tensor<T> { &nodes[i].value };
            let need = |i: usize| nodes[i].requires_grad;
            let mut push = |i: usize, t: Tensor<T>| accumulate(&mut grads, i, t);
            match &node.op {
                Op::Leaf => {}
                &Op::Add(a, b) => {
                    if need(b) {
                        push(b, reduce_broadcast(&g, val(b).shape()));
                    }
                    if need(a) {
                        push(a, g);
                    }
                }
                &Op::Sub(a, b) => {
                    if need(b) {
                        push(b, reduce_broadcast(&g, val(b).shape()).scale(-T::one()));
                    }
                    if need(a) {
                        push(a, g);
                    }
                }
                &Op::Mul(a, b) => {
                    let (av, bv) = (val(a), val(b));
                    let nb = bv.len();
                    if need(a) {
                        let d = Tensor::from_fn(av.shape(), |i| g.data()[i] * bv.data()[i % nb]);
                        push(a, d);
                    }
                    if need(b) {
                        let prod = Tensor::from_fn(av.shape(), |i| g.data()[i] * av.data()[i]);
                        push(b, reduce_broadcast(&prod, bv.shape()));
                    }
                }
                &Op::Scale(a, c) => push(a, g.scale(c)),
                &Op::Shift(a) => push(a, g),
                &Op::MatMul(a, b) => {
                    let (av, bv) = (val(a), val(b));
                    let plan = MatmulPlan::new(av.shape(), bv.shape())?;
                    let (m, k, n) = (plan.m, plan.k, plan.n);
                    if need(a) {
                        let mut da = vec![T::zero(); av.len()];
                        for bi in 0..plan.batch {
                            gemm_nt(
                                &g.data()[bi * m * n..(bi + 1) * m * n],
                                plan.rhs_block(bv.data(), bi),
                                m,
                                n,
                                k,
                                &mut da[bi * m * k..(bi + 1) * m * k],
                            );
                        }
                        push(a, Tensor::new(av.shape().to_vec(), da)?);
                    }
                    if need(b) {
                        let mut db = vec![T::zero(); bv.len()];
                        for bi in 0..plan.batch {
                            let off = if plan.shared_rhs { 0 } else { bi * k * n };
                            gemm_tn(
                                &av.data()[bi * m * k..(bi + 1) * m * k],
                                &g.data()[bi * m * n..(bi + 1) * m * n],
                                m,
                                k,
                                n,
                                &mut db[off..off + k * n],
                            );
                        }
                        push(b, Tensor::new(bv.shape().to_vec(), db)?);
                    }
                }
                &Op::Transpose(a) => push(a, g.transpose()?),
                &Op::Reshape(a) => push(a, g.reshape(val(a).shape())?),
                &Op::SwapAxes12(a) => push(a, swap_axes12(&g)),
                &Op::Softmax(a) => {
                    let y = &node.value;
                    let n = y.last_dim();
                    let mut d = vec![T::zero(); y.len()];
                    for ((dr, yr), gr) in d.chunks_mut(n).zip(y.data().chunks(n)).zip(g.data().chunks(n)) {
                        let dot: T = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                        for ((dv, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *dv = yv * (gv - dot);
                        }
                    }
                    push(a, Tensor::new(y.shape().to_vec(), d)?);
                }
                &Op::Gelu(a) => {
                    let x = val(a);
                    push(a, Tensor::from_fn(x.shape(), |i| g.data()[i] * gelu_grad(x.data()[i])));
                }
                &Op::Sigmoid(a) => {
                    let s = &node.value;
                    push(
                        a,
                        Tensor::from_fn(s.shape(), |i| {
                            let sv = s.data()[i];
                            g.data()[i] * sv * (T::one() - sv)
                        }),
                    );
                }
                &Op::LayerNorm(a, eps) => {
                    let x = val(a);
                    let n = x.last_dim();
                    let nf = T::from_usize_lossy(n);
                    let mut d = vec![T::zero(); x.len()];
                    for ((dr, xr), gr) in d.chunks_mut(n).zip(x.data().chunks(n)).zip(g.data().chunks(n)) {
                        let (mean, inv_std) = row_moments(xr, eps);
                        let g_mean = gr.iter().copied().sum::<T>() / nf;
                        let gy_mean = xr
                            .iter()
                            .zip(gr)
                            .map(|(&xv, &gv)| gv * (xv - mean) * inv_std)
                            .sum::<T>()
                            / nf;
                        for ((dv, &xv), &gv) in dr.iter_mut().zip(xr).zip(gr) {
                            let y = (xv - mean) * inv_std;
                            *dv = inv_std * (gv - g_mean - y * gy_mean);
                        }
                    }
                    push(a, Tensor::new(x.shape().to_vec(), d)?);
                }
                &Op::Sum(a) => push(a, Tensor::full(val(a).shape(), g.item())),
                &Op::Mean(a) => {
                    let x = val(a);
                    push(a, Tensor::full(x.shape(), g.item() / T::from_usize_lossy(x.len())));
                }
                &Op::MeanAxis(a, axis) => {
                    let x = val(a);
                    let (outer, len, inner) = split_axis(x.shape(), axis);
                    let inv = T::one() / T::from_usize_lossy(len);
                    let d = Tensor::from_fn(x.shape(), |i| {
                        let o = i / (len * inner);
                        let r = i % inner;
                        g.data()[o * inner + r] * inv
                    });
                    let _ = outer;
                    push(a, d);
                }
                Op::Concat(inputs, axis) => {
                    let axis = *axis;
                    let out_shape = node.value.shape();
                    let (outer, total, inner) = split_axis(out_shape, axis);
                    let mut offset = 0;
                    for &inp in inputs {
                        let len = val(inp).shape()[axis];
                        if need(inp) {
                            let mut d = Vec::with_capacity(outer * len * inner);
                            for o in 0..outer {
                                let start = (o * total + offset) * inner;
                                d.extend_from_slice(&g.data()[start..start + len * inner]);
                            }
                            push(inp, Tensor::new(val(inp).shape().to_vec(), d)?);
                        }
                        offset += len;
                    }
                }
                &Op::Frames { input, patch, stride } => {
                    let x = val(input);
                    let t = x.last_dim();
                    let frames = (t - patch) / stride + 1;
                    let rows = x.len() / t;
                    let mut d = vec![T::zero(); x.len()];
                    for r in 0..rows {
                        for f in 0..frames {
                            for p in 0..patch {
                                d[r * t + f * stride + p] += g.data()[(r * frames + f) * patch + p];
                            }
                        }
                    }
                    push(input, Tensor::new(x.shape().to_vec(), d)?);
                }
                Op::GatherRows(src, ids) => {
                    let src = *src;
                    let table = val(src);
                    let width = table.last_dim();
                    let mut d = vec![T::zero(); table.len()];
                    for (row, &id) in ids.iter().enumerate() {
                        for c in 0..width {
                            d[id * width + c] += g.data()[row * width + c];
                        }
                    }
                    push(src, Tensor::new(table.shape().to_vec(), d)?);
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: usize, g: Tensor<T>) {
    match &mut grads[id] {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += *v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Sums `g` down to the broadcast operand's shape.
fn reduce_broadcast<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let nb: usize = shape.iter().product();
    let mut d = vec![T::zero(); nb];
    for (i, &v) in g.data().iter().enumerate() {
        d[i % nb] += v;
    }
    Tensor::new(shape.to_vec(), d).expect("broadcast shape")
}

fn broadcastable(big: &[usize], small: &[usize]) -> bool {
    big == small
        || small == [1]
        || (small.len() <= big.len() && big[big.len() - small.len()..] == *small)
}

/// `(outer, axis_len, inner)` for a row-major shape.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn swap_axes12<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (a, b, c, d) = (s[0], s[1], s[2], s[3]);
    let mut out = vec![T::zero(); x.len()];
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                let src = ((i * b + j) * c + k) * d;
                let dst = ((i * c + k) * b + j) * d;
                out[dst..dst + d].copy_from_slice(&x.data()[src..src + d]);
            }
        }
    }
    Tensor::new(vec![a, c, b, d], out).expect("permuted shape")
}

fn row_moments<T: Scalar>(row: &[T], eps: T) -> (T, T) {
    let n = T::from_usize_lossy(row.len());
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + eps).sqrt())
}

fn gelu_consts<T: Scalar>() -> (T, T) {
    (T::lit((2.0 / std::f64::consts::PI).sqrt()), T::lit(0.044715))
}

/// Tanh approximation of GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let (c, k) = gelu_consts::<T>();
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let (c, k) = gelu_consts::<T>();
    let half = T::lit(0.5);
    let th = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + T::lit(3.0) * k * x * x)
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Value of a single-element var.
    pub fn item(&self) -> T {
        self.value().item()
    }

    fn requires(&self) -> bool {
        self.tape.requires(self.id)
    }

    fn unary(self, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        let rg = self.requires();
        self.tape.push(value, op, rg)
    }

    fn binary(self, other: Var<'t, T>, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        let rg = self.requires() || other.requires();
        self.tape.push(value, op, rg)
    }

    /// `f` must be symmetric when `commutative` is set, since the operands
    /// may be swapped so that the smaller one broadcasts.
    fn elementwise(
        self,
        other: Var<'t, T>,
        op: &'static str,
        commutative: bool,
        f: impl Fn(T, T) -> T,
        make: impl Fn(usize, usize) -> Op<T>,
    ) -> Result<Var<'t, T>, NumError> {
        let (a, b) = (self.value(), other.value());
        let (big, small, bv, sv) = if broadcastable(a.shape(), b.shape()) {
            (self, other, a, b)
        } else if commutative && broadcastable(b.shape(), a.shape()) {
            (other, self, b, a)
        } else {
            return Err(NumError::shape(op, a.shape(), b.shape()));
        };
        let ns = sv.len();
        let v = Tensor::from_fn(bv.shape(), |i| f(bv.data()[i], sv.data()[i % ns]));
        Ok(big.binary(small, v, make(big.id, small.id)))
    }

    /// Element-wise sum; either side may broadcast as a scalar or a trailing suffix.
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>, NumError> {
        self.elementwise(other, "add", true, |x, y| x + y, Op::Add)
    }

    /// Element-wise difference; only `other` may broadcast.
    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>, NumError> {
        self.elementwise(other, "sub", false, |x, y| x - y, Op::Sub)
    }

    /// Element-wise (Hadamard) product with broadcasting as in [`Var::add`].
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>, NumError> {
        self.elementwise(other, "mul", true, |x, y| x * y, Op::Mul)
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        let v = self.value().scale(c);
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn shift(self, c: T) -> Var<'t, T> {
        let v = self.value().map(|x| x + c);
        self.unary(v, Op::Shift(self.id))
    }

    pub fn neg(self) -> Var<'t, T> {
        self.scale(-T::one())
    }

    /// See [`Tensor::matmul`] for the accepted shapes.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>, NumError> {
        let v = self.value().matmul(&other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    pub fn transpose(self) -> Result<Var<'t, T>, NumError> {
        let v = self.value().transpose()?;
        Ok(self.unary(v, Op::Transpose(self.id)))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>, NumError> {
        let v = self.value().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    /// `[a, b, c, d] -> [a, c, b, d]`.
    pub fn swap_axes12(self) -> Result<Var<'t, T>, NumError> {
        let x = self.value();
        if x.rank() != 4 {
            return Err(NumError::Contract(format!("swap_axes12 needs rank 4, got {:?}", x.shape())));
        }
        let v = swap_axes12(&x);
        Ok(self.unary(v, Op::SwapAxes12(self.id)))
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Result<Var<'t, T>, NumError> {
        let v = self.value().softmax_rows()?;
        Ok(self.unary(v, Op::Softmax(self.id)))
    }

    pub fn gelu(self) -> Var<'t, T> {
        let v = self.value().map(gelu);
        self.unary(v, Op::Gelu(self.id))
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        let v = self.value().map(|x| T::one() / (T::one() + (-x).exp()));
        self.unary(v, Op::Sigmoid(self.id))
    }

    /// Normalizes each row of the last axis to zero mean and unit variance.
    pub fn layer_norm(self, eps: T) -> Var<'t, T> {
        let x = self.value();
        let n = x.last_dim();
        let mut out = Vec::with_capacity(x.len());
        for row in x.data().chunks(n) {
            let (mean, inv_std) = row_moments(row, eps);
            out.extend(row.iter().map(|&v| (v - mean) * inv_std));
        }
        let v = Tensor::new(x.shape().to_vec(), out).expect("same shape");
        self.unary(v, Op::LayerNorm(self.id, eps))
    }

    pub fn sum(self) -> Var<'t, T> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t, T> {
        let x = self.value();
        let v = Tensor::scalar(x.sum() / T::from_usize_lossy(x.len()));
        self.unary(v, Op::Mean(self.id))
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(self, axis: usize) -> Result<Var<'t, T>, NumError> {
        let x = self.value();
        if axis >= x.rank() || x.rank() < 2 {
            return Err(NumError::Contract(format!("mean_axis({axis}) on shape {:?}", x.shape())));
        }
        let (outer, len, inner) = split_axis(x.shape(), axis);
        let inv = T::one() / T::from_usize_lossy(len);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &x.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        let v = Tensor::new(shape, out)?;
        Ok(self.unary(v, Op::MeanAxis(self.id, axis)))
    }

    /// Concatenates along `axis`; every other dimension must agree.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>, NumError> {
        let first = parts
            .first()
            .ok_or_else(|| NumError::Contract("concat of zero tensors".into()))?;
        let values: Vec<_> = parts.iter().map(Var::value).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(NumError::Contract(format!("concat axis {axis} on shape {base:?}")));
        }
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            let same_rest = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same_rest {
                return Err(NumError::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in &values {
                let len = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let rg = parts.iter().any(Var::requires);
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(first.tape.push(Tensor::new(shape, out)?, Op::Concat(ids, axis), rg))
    }

    /// Overlapping windows over the last axis: `[.., t] -> [.., frames, patch]`
    /// with `frames = (t - patch) / stride + 1`.
    pub fn frames(self, patch: usize, stride: usize) -> Result<Var<'t, T>, NumError> {
        let x = self.value();
        let t = x.last_dim();
        if patch == 0 || stride == 0 || patch > t {
            return Err(NumError::Contract(format!(
                "frames(patch={patch}, stride={stride}) on length {t}"
            )));
        }
        let frames = (t - patch) / stride + 1;
        let rows = x.len() / t;
        let mut out = Vec::with_capacity(rows * frames * patch);
        for r in 0..rows {
            for f in 0..frames {
                let start = r * t + f * stride;
                out.extend_from_slice(&x.data()[start..start + patch]);
            }
        }
        let mut shape = x.shape().to_vec();
        shape.pop();
        shape.extend([frames, patch]);
        let v = Tensor::new(shape, out)?;
        Ok(self.unary(
            v,
            Op::Frames {
                input: self.id,
                patch,
                stride,
            },
        ))
    }

    /// Row lookup into a `[rows, width]` table.
    pub fn gather_rows(self, ids: &[usize]) -> Result<Var<'t, T>, NumError> {
        let table = self.value();
        if table.rank() != 2 || ids.is_empty() {
            return Err(NumError::Contract(format!(
                "gather_rows needs a 2-D table and at least one id, got {:?}",
                table.shape()
            )));
        }
        let (rows, width) = (table.shape()[0], table.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            if id >= rows {
                return Err(NumError::Contract(format!("row id {id} out of range 0..{rows}")));
            }
            out.extend_from_slice(&table.data()[id * width..(id + 1) * width]);
        }
        let v = Tensor::new(vec![ids.len(), width], out)?;
        Ok(self.unary(v, Op::GatherRows(self.id, ids.to_vec())))
    }
}
