//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation on a [`Var`] evaluates eagerly and, when at least one
//! input requires a gradient, records how to push adjoints back to its
//! inputs. The recorded graph is rebuilt on every forward pass. Values that
//! do not depend on any leaf keep no parents, so inference graphs release
//! intermediates as soon as they go out of scope.
//!
//! ```
//! use naepro::autodiff::Var;
//! use naepro::tensor::Tensor;
//!
//! let x = Var::leaf(Tensor::scalar(3.0));
//! let y = x.mul(&x).unwrap();
//! let grads = y.backward().unwrap();
//! assert_eq!(grads.get(&x).unwrap().item(), Some(6.0));
//! ```

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

/// A node in the differentiation graph.
#[derive(Clone)]
pub struct Var(Rc<Node>);

struct Node {
    id: usize,
    value: Tensor,
    requires_grad: bool,
    op: Option<Op>,
}

enum Op {
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Silu(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Norm2(Var),
    SumAxis(Var, usize),
    Reshape(Var),
    GatherRows(Var, Rc<[usize]>),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Gather(Var, Rc<[usize]>),
    LnClamped(Var, f64),
}

impl Op {
    fn parents(&self) -> Vec<&Var> {
        match self {
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
                vec![a, b]
            }
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Silu(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Softmax(a, _)
            | Op::Norm2(a)
            | Op::SumAxis(a, _)
            | Op::Reshape(a)
            | Op::GatherRows(a, _)
            | Op::Gather(a, _)
            | Op::LnClamped(a, _) => vec![a],
            Op::Slice { x, .. } => vec![x],
            Op::LayerNorm { x, gain, bias, .. } => vec![x, gain, bias],
            Op::Concat(parts, _) => parts.iter().collect(),
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl Var {
    fn make(value: Tensor, requires_grad: bool, op: Option<Op>) -> Var {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            op,
        }))
    }

    /// A trainable input whose gradient is reported by [`Var::backward`].
    pub fn leaf(value: Tensor) -> Var {
        Var::make(value, true, None)
    }

    pub fn constant(value: Tensor) -> Var {
        Var::make(value, false, None)
    }

    fn derived(value: Tensor, op: Op) -> Var {
        let requires_grad = op.parents().iter().any(|p| p.0.requires_grad);
        Var::make(value, requires_grad, requires_grad.then_some(op))
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        let v = self.value().add(other.value())?;
        Ok(Var::derived(v, Op::Add(self.clone(), other.clone())))
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        let v = self.value().sub(other.value())?;
        Ok(Var::derived(v, Op::Sub(self.clone(), other.clone())))
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        let v = self.value().mul(other.value())?;
        Ok(Var::derived(v, Op::Mul(self.clone(), other.clone())))
    }

    pub fn div(&self, other: &Var) -> Result<Var> {
        let v = self.value().zip_broadcast(other.value(), "div", |a, b| a / b)?;
        Ok(Var::derived(v, Op::Div(self.clone(), other.clone())))
    }

    pub fn scale(&self, c: f64) -> Var {
        Var::derived(self.value().map(|v| v * c), Op::Scale(self.clone(), c))
    }

    pub fn matmul(&self, other: &Var) -> Result<Var> {
        let v = self.value().matmul(other.value())?;
        Ok(Var::derived(v, Op::MatMul(self.clone(), other.clone())))
    }

    pub fn transpose(&self) -> Result<Var> {
        let v = self.value().transpose()?;
        Ok(Var::derived(v, Op::Transpose(self.clone())))
    }

    pub fn silu(&self) -> Var {
        Var::derived(self.value().map(|v| v * sigmoid(v)), Op::Silu(self.clone()))
    }

    pub fn relu(&self) -> Var {
        Var::derived(self.value().map(|v| v.max(0.0)), Op::Relu(self.clone()))
    }

    pub fn sigmoid(&self) -> Var {
        Var::derived(self.value().map(sigmoid), Op::Sigmoid(self.clone()))
    }

    pub fn softmax(&self, axis: usize) -> Result<Var> {
        let v = self.value().softmax(axis)?;
        Ok(Var::derived(v, Op::Softmax(self.clone(), axis)))
    }

    pub fn layer_norm(&self, gain: &Var, bias: &Var, eps: f64) -> Result<Var> {
        let (v, xhat, inv_std) = self.value().layer_norm(gain.value(), bias.value(), eps)?;
        Ok(Var::derived(
            v,
            Op::LayerNorm {
                x: self.clone(),
                gain: gain.clone(),
                bias: bias.clone(),
                xhat,
                inv_std,
            },
        ))
    }

    /// Euclidean norm over the last axis. The gradient at the zero vector is
    /// taken to be zero.
    pub fn norm2(&self) -> Result<Var> {
        let v = self.value().norm_last()?;
        Ok(Var::derived(v, Op::Norm2(self.clone())))
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Var> {
        let v = self.value().sum_axis(axis)?;
        Ok(Var::derived(v, Op::SumAxis(self.clone(), axis)))
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&self) -> Result<Var> {
        self.reshape(&[self.value().numel()])?.sum_axis(0)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let v = self.value().reshape(shape)?;
        Ok(Var::derived(v, Op::Reshape(self.clone())))
    }

    /// Selects rows of a matrix; indices may repeat.
    pub fn gather_rows(&self, idx: &Rc<[usize]>) -> Result<Var> {
        let x = self.value();
        if x.rank() != 2 {
            return Err(Error::invalid(
                "gather_rows",
                format!("expected a matrix, got {:?}", x.shape()),
            ));
        }
        let (rows, cols) = (x.shape()[0], x.shape()[1]);
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx.iter() {
            if i >= rows {
                return Err(Error::invalid(
                    "gather_rows",
                    format!("row {i} out of range for {rows} rows"),
                ));
            }
            data.extend_from_slice(x.row(i));
        }
        let v = Tensor::new(vec![idx.len(), cols], data)?;
        Ok(Var::derived(v, Op::GatherRows(self.clone(), idx.clone())))
    }

    /// Selects entries of the flattened tensor into a vector.
    pub fn gather(&self, idx: &Rc<[usize]>) -> Result<Var> {
        let x = self.value().data();
        let mut data = Vec::with_capacity(idx.len());
        for &i in idx.iter() {
            data.push(*x.get(i).ok_or_else(|| {
                Error::invalid("gather", format!("index {i} out of range for {}", x.len()))
            })?);
        }
        Ok(Var::derived(
            Tensor::vector(data),
            Op::Gather(self.clone(), idx.clone()),
        ))
    }

    pub fn concat(parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range")));
        }
        for p in parts {
            let s = p.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base.to_vec(),
                    rhs: s.to_vec(),
                });
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let block = p.shape()[axis] * inner;
                data.extend_from_slice(&p.value().data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base.to_vec();
        shape[axis] = total;
        let v = Tensor::new(shape, data)?;
        Ok(Var::derived(v, Op::Concat(parts.to_vec(), axis)))
    }

    /// The half-open range `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var> {
        let (outer, n, inner) = self.value().split_axis("slice", axis)?;
        if start > end || end > n {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{end} out of bounds for length {n}"),
            ));
        }
        let src = self.value().data();
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            data.extend_from_slice(&src[(o * n + start) * inner..(o * n + end) * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = end - start;
        let v = Tensor::new(shape, data)?;
        Ok(Var::derived(
            v,
            Op::Slice {
                x: self.clone(),
                axis,
                start,
            },
        ))
    }

    /// `ln(max(x, floor))` elementwise; entries below the floor get zero
    /// gradient.
    pub fn ln_clamped(&self, floor: f64) -> Var {
        Var::derived(
            self.value().map(|v| v.max(floor).ln()),
            Op::LnClamped(self.clone(), floor),
        )
    }

    /// Reverse sweep from a scalar root. Returns the adjoints of every leaf
    /// reachable from it.
    pub fn backward(&self) -> Result<Gradients> {
        if self.value().numel() != 1 {
            return Err(Error::NonScalarRoot(self.shape().to_vec()));
        }
        let mut grads = Gradients::default();
        if !self.requires_grad() {
            return Ok(grads);
        }
        let order = self.topological_order();
        let mut adj: HashMap<usize, Tensor> = HashMap::new();
        adj.insert(self.0.id, Tensor::full(self.shape(), 1.0));
        for node in order.iter().rev() {
            let Some(g) = adj.remove(&node.0.id) else {
                continue;
            };
            match &node.0.op {
                None => {
                    grads.0.insert(node.0.id, g);
                }
                Some(op) => {
                    for (parent, pg) in node.propagate(op, &g) {
                        if !parent.requires_grad() {
                            continue;
                        }
                        match adj.get_mut(&parent.0.id) {
                            Some(acc) => acc.add_assign(&pg),
                            None => {
                                adj.insert(parent.0.id, pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(grads)
    }

    /// Post-order over nodes that require gradients (parents before
    /// children).
    fn topological_order(&self) -> Vec<Var> {
        let mut order = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack: Vec<(Var, bool)> = vec![(self.clone(), false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded {
                order.push(v);
                continue;
            }
            if !seen.insert(v.0.id) {
                continue;
            }
            stack.push((v.clone(), true));
            if let Some(op) = &v.0.op {
                for p in op.parents().into_iter().rev() {
                    if p.requires_grad() && !seen.contains(&p.0.id) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }

    fn propagate<'a>(&self, op: &'a Op, g: &Tensor) -> Vec<(&'a Var, Tensor)> {
        let out = self.value();
        match op {
            Op::Add(a, b) => vec![
                (a, g.sum_to_shape(a.shape())),
                (b, g.sum_to_shape(b.shape())),
            ],
            Op::Sub(a, b) => vec![
                (a, g.sum_to_shape(a.shape())),
                (b, g.map(|v| -v).sum_to_shape(b.shape())),
            ],
            Op::Mul(a, b) => {
                let mut res = Vec::with_capacity(2);
                if a.requires_grad() {
                    let ga = g.mul(b.value()).expect("shapes checked in forward");
                    res.push((a, ga.sum_to_shape(a.shape())));
                }
                if b.requires_grad() {
                    let gb = g.mul(a.value()).expect("shapes checked in forward");
                    res.push((b, gb.sum_to_shape(b.shape())));
                }
                res
            }
            Op::Div(a, b) => {
                let mut res = Vec::with_capacity(2);
                if a.requires_grad() {
                    let ga = g
                        .zip_broadcast(b.value(), "div", |g, b| g / b)
                        .expect("shapes checked in forward");
                    res.push((a, ga.sum_to_shape(a.shape())));
                }
                if b.requires_grad() {
                    // d(a/b)/db = -out / b
                    let gb = g
                        .mul(out)
                        .and_then(|t| t.zip_broadcast(b.value(), "div", |v, b| -v / b))
                        .expect("shapes checked in forward");
                    res.push((b, gb.sum_to_shape(b.shape())));
                }
                res
            }
            Op::Scale(a, c) => vec![(a, g.map(|v| v * c))],
            Op::MatMul(a, b) => {
                let mut res = Vec::with_capacity(2);
                if a.requires_grad() {
                    let bt = b.value().transpose().expect("matrix");
                    res.push((a, g.matmul(&bt).expect("shapes checked in forward")));
                }
                if b.requires_grad() {
                    let at = a.value().transpose().expect("matrix");
                    res.push((b, at.matmul(g).expect("shapes checked in forward")));
                }
                res
            }
            Op::Transpose(a) => vec![(a, g.transpose().expect("matrix"))],
            Op::Silu(a) => {
                let gx = zip(g, a.value(), |g, x| {
                    let s = sigmoid(x);
                    g * s * (1.0 + x * (1.0 - s))
                });
                vec![(a, gx)]
            }
            Op::Relu(a) => vec![(a, zip(g, a.value(), |g, x| if x > 0.0 { g } else { 0.0 }))],
            Op::Sigmoid(a) => vec![(a, zip(g, out, |g, y| g * y * (1.0 - y)))],
            Op::Softmax(a, axis) => {
                let (outer, n, inner) = out.split_axis("softmax", *axis).expect("checked");
                let y = out.data();
                let gd = g.data();
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for q in 0..inner {
                        let at = |j: usize| o * n * inner + j * inner + q;
                        let dot: f64 = (0..n).map(|j| gd[at(j)] * y[at(j)]).sum();
                        for j in 0..n {
                            gx[at(j)] = y[at(j)] * (gd[at(j)] - dot);
                        }
                    }
                }
                vec![(a, Tensor::new(out.shape().to_vec(), gx).expect("same shape"))]
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = *out.shape().last().expect("rank >= 1");
                let gamma = gain.value().data();
                let gd = g.data();
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                let mut dx = vec![0.0; gd.len()];
                let nf = d as f64;
                for (s, &r) in inv_std.iter().enumerate() {
                    let base = s * d;
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..d {
                        let gj = gd[base + j];
                        dgain[j] += gj * xhat[base + j];
                        dbias[j] += gj;
                        let dxh = gj * gamma[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xhat[base + j];
                    }
                    for j in 0..d {
                        let dxh = gd[base + j] * gamma[j];
                        dx[base + j] = r / nf * (nf * dxh - sum_dxh - xhat[base + j] * sum_dxh_xh);
                    }
                }
                vec![
                    (x, Tensor::new(out.shape().to_vec(), dx).expect("same shape")),
                    (gain, Tensor::vector(dgain)),
                    (bias, Tensor::vector(dbias)),
                ]
            }
            Op::Norm2(a) => {
                let w = *a.shape().last().expect("rank >= 1");
                let xd = a.value().data();
                let mut gx = vec![0.0; xd.len()];
                for (s, (&n, &gs)) in out.data().iter().zip(g.data()).enumerate() {
                    if n == 0.0 {
                        continue;
                    }
                    for j in 0..w {
                        gx[s * w + j] = gs * xd[s * w + j] / n;
                    }
                }
                vec![(a, Tensor::new(a.shape().to_vec(), gx).expect("same shape"))]
            }
            Op::SumAxis(a, axis) => {
                let (outer, n, inner) = a.value().split_axis("sum_axis", *axis).expect("checked");
                let gd = g.data();
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for j in 0..n {
                        gx[(o * n + j) * inner..(o * n + j + 1) * inner]
                            .copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                vec![(a, Tensor::new(a.shape().to_vec(), gx).expect("same shape"))]
            }
            Op::Reshape(a) => vec![(a, g.with_shape(a.shape().to_vec()))],
            Op::GatherRows(a, idx) => {
                let mut gx = Tensor::zeros(a.shape());
                let cols = a.shape()[1];
                let gd = g.data();
                let dst = gx.data_mut();
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..cols {
                        dst[i * cols + j] += gd[r * cols + j];
                    }
                }
                vec![(a, gx)]
            }
            Op::Gather(a, idx) => {
                let mut gx = Tensor::zeros(a.shape());
                let dst = gx.data_mut();
                for (&i, &gv) in idx.iter().zip(g.data()) {
                    dst[i] += gv;
                }
                vec![(a, gx)]
            }
            Op::Concat(parts, axis) => {
                let shape = out.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis];
                let gd = g.data();
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for p in parts {
                    let len = p.shape()[*axis];
                    if p.requires_grad() {
                        let mut data = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let from = (o * total + offset) * inner;
                            data.extend_from_slice(&gd[from..from + len * inner]);
                        }
                        res.push((p, Tensor::new(p.shape().to_vec(), data).expect("same shape")));
                    }
                    offset += len;
                }
                res
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = x.value().split_axis("slice", *axis).expect("checked");
                let len = out.shape()[*axis];
                let mut gx = Tensor::zeros(x.shape());
                let dst = gx.data_mut();
                let gd = g.data();
                for o in 0..outer {
                    let to = (o * n + start) * inner;
                    dst[to..to + len * inner]
                        .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(x, gx)]
            }
            Op::LnClamped(a, floor) => {
                vec![(a, zip(g, a.value(), |g, x| if x > *floor { g / x } else { 0.0 }))]
            }
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    a.zip_broadcast(b, "zip", f).expect("same shape")
}

/// Leaf adjoints produced by [`Var::backward`].
#[derive(Default)]
pub struct Gradients(HashMap<usize, Tensor>);

impl Gradients {
    /// Gradient for `leaf`, or `None` if it does not influence the root.
    pub fn get(&self, leaf: &Var) -> Option<&Tensor> {
        self.0.get(&leaf.0.id)
    }

    /// Gradient for `leaf`, with zeros when it does not influence the root.
    pub fn get_or_zeros(&self, leaf: &Var) -> Tensor {
        self.get(leaf)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(leaf.shape()))
    }
}
