//! Dense row-major `f64` tensors and the forward kernels used by the
//! autodiff graph.
//!
//! Binary elementwise operations follow NumPy broadcasting: shapes are
//! aligned from the trailing dimension and a size-1 dimension stretches to
//! match the other operand.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Stacks 3-vectors into an `N×3` matrix.
    pub fn from_points(points: &[[f64; 3]]) -> Self {
        Self {
            shape: vec![points.len(), 3],
            data: points.iter().flatten().copied().collect(),
        }
    }

    /// Inverse of [`Tensor::from_points`]; the tensor must be `N×3`.
    pub fn to_points(&self) -> Result<Vec<[f64; 3]>> {
        if self.rank() != 2 || self.shape[1] != 3 {
            return Err(Error::invalid(
                "to_points",
                format!("expected N×3, got {:?}", self.shape),
            ));
        }
        Ok(self
            .data
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = *self.shape.last().unwrap_or(&1);
        &self.data[i * w..(i + 1) * w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn with_shape(&self, shape: Vec<usize>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), self.data.len());
        Tensor {
            shape,
            data: self.data.clone(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(self.with_shape(shape.to_vec()))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(other, "mul", |a, b| a * b)
    }

    pub(crate) fn zip_broadcast(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape == other.shape {
            return Ok(Tensor {
                shape: self.shape.clone(),
                data: self
                    .data
                    .iter()
                    .zip(&other.data)
                    .map(|(&a, &b)| f(a, b))
                    .collect(),
            });
        }
        let out_shape = broadcast_shape(&self.shape, &other.shape).ok_or_else(|| Error::Shape {
            op,
            lhs: self.shape.clone(),
            rhs: other.shape.clone(),
        })?;
        let sa = broadcast_strides(&self.shape, &out_shape);
        let sb = broadcast_strides(&other.shape, &out_shape);
        let mut data = vec![0.0; out_shape.iter().product()];
        for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
            data[o] = f(self.data[ia], other.data[ib]);
        });
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }

    /// Sums a broadcast result back down to `shape` (the adjoint of
    /// broadcasting).
    pub(crate) fn sum_to_shape(&self, shape: &[usize]) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        let strides = broadcast_strides(shape, &self.shape);
        let zero = vec![0; self.shape.len()];
        let mut out = Tensor::zeros(shape);
        for_each_broadcast(&self.shape, &strides, &zero, |o, it, _| {
            out.data[it] += self.data[o];
        });
        out
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::invalid(
                "transpose",
                format!("expected a matrix, got {:?}", self.shape),
            ));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data,
        })
    }

    /// Softmax along `axis`, stabilized by subtracting the slice maximum.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, n, inner) = self.split_axis("softmax", axis)?;
        if n == 0 {
            return Err(Error::invalid("softmax", "empty axis"));
        }
        let mut out = self.clone();
        for o in 0..outer {
            for q in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + q;
                let max = (0..n).fold(f64::NEG_INFINITY, |m, j| m.max(self.data[at(j)]));
                let mut total = 0.0;
                for j in 0..n {
                    let e = (self.data[at(j)] - max).exp();
                    out.data[at(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    out.data[at(j)] /= total;
                }
            }
        }
        Ok(out)
    }

    /// Sum over `axis`, removing it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let (outer, n, inner) = self.split_axis("sum_axis", axis)?;
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let src = &self.data[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Ok(Tensor { shape, data })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Euclidean norm over the last axis, which is removed from the shape.
    pub fn norm_last(&self) -> Result<Tensor> {
        let w = *self
            .shape
            .last()
            .ok_or_else(|| Error::invalid("norm2", "scalar input has no axis"))?;
        let data = if w == 0 {
            vec![0.0; self.numel()]
        } else {
            self.data
                .chunks_exact(w)
                .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect()
        };
        let shape = self.shape[..self.rank() - 1].to_vec();
        Ok(Tensor { shape, data })
    }

    /// Layer normalization over the last axis. Also returns the normalized
    /// values and the per-slice inverse standard deviations for the
    /// backward pass.
    pub fn layer_norm(
        &self,
        gain: &Tensor,
        bias: &Tensor,
        eps: f64,
    ) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
        let d = *self
            .shape
            .last()
            .ok_or_else(|| Error::invalid("layer_norm", "scalar input has no axis"))?;
        if d == 0 {
            return Err(Error::invalid("layer_norm", "empty feature axis"));
        }
        if gain.shape != [d] || bias.shape != [d] {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: self.shape.clone(),
                rhs: if gain.shape != [d] {
                    gain.shape.clone()
                } else {
                    bias.shape.clone()
                },
            });
        }
        let mut xhat = vec![0.0; self.numel()];
        let mut inv_std = Vec::with_capacity(self.numel() / d);
        let mut out = vec![0.0; self.numel()];
        for (s, chunk) in self.data.chunks_exact(d).enumerate() {
            let mean = chunk.iter().sum::<f64>() / d as f64;
            let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            inv_std.push(r);
            for j in 0..d {
                let xh = (chunk[j] - mean) * r;
                xhat[s * d + j] = xh;
                out[s * d + j] = xh * gain.data[j] + bias.data[j];
            }
        }
        Ok((
            Tensor {
                shape: self.shape.clone(),
                data: out,
            },
            xhat,
            inv_std,
        ))
    }

    pub(crate) fn split_axis(&self, op: &'static str, axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= self.rank() {
            return Err(Error::invalid(
                op,
                format!("axis {axis} out of range for shape {:?}", self.shape),
            ));
        }
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        Ok((outer, self.shape[axis], inner))
    }
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let dim = |s: &[usize], i: usize| {
        if i + s.len() >= r {
            s[i + s.len() - r]
        } else {
            1
        }
    };
    (0..r)
        .map(|i| {
            let (da, db) = (dim(a, i), dim(b, i));
            if da == db || db == 1 {
                Some(da)
            } else if da == 1 {
                Some(db)
            } else {
                None
            }
        })
        .collect()
}

/// Strides of `shape` viewed inside the broadcast shape `out`; broadcast
/// dimensions get stride zero.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let r = out.len();
    let mut strides = vec![0; r];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let o = i + r - shape.len();
        strides[o] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    let r = out.len();
    if r == 0 {
        f(0, 0, 0);
        return;
    }
    let (last, la, lb) = (out[r - 1], sa[r - 1], sb[r - 1]);
    let mut idx = vec![0usize; r - 1];
    let (mut oa, mut ob, mut o) = (0usize, 0usize, 0usize);
    'outer: loop {
        for j in 0..last {
            f(o, oa + j * la, ob + j * lb);
            o += 1;
        }
        for d in (0..r - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                continue 'outer;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
        return;
    }
}
