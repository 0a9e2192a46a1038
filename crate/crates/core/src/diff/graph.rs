//! Tape of eagerly evaluated array operations with reverse-mode gradients.
//!
//! Nodes are appended in evaluation order, so the tape is always a
//! topological order of the computation graph and backward is a single
//! reverse sweep. Values are computed once when a node is created.

use std::sync::Arc;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    AddBias { x: Var, bias: Var, axis: usize },
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    SliceRows { x: Var, start: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Sum(Var),
    Mean(Var),
    MeanAxis { x: Var, axis: usize },
    L2Normalize { x: Var, eps: f64 },
    LogSumExp(Var),
    Softmax(Var),
    OffDiagonal(Var),
    Gather { x: Var, index: Vec<usize> },
    BceWithLogits { logits: Var, targets: Vec<f64> },
    GraphMix { x: Var, adjacency: Arc<Tensor> },
    ChannelMap { x: Var, weight: Var },
    TemporalConv { x: Var, weight: Var, stride: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A computation graph confined to one thread of execution.
///
/// Per-sample kernels inside a node may fan out over [`Exec`], but the
/// graph itself is built and differentiated sequentially.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    exec: Exec,
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn last_axis(shape: &[usize]) -> (usize, usize) {
    let len = *shape.last().unwrap_or(&1);
    let rows = if len == 0 {
        0
    } else {
        shape.iter().product::<usize>() / len
    };
    (rows, len)
}

fn conv_out_len(frames: usize, kernel: usize, stride: usize) -> usize {
    let pad = (kernel - 1) / 2;
    (frames + 2 * pad - kernel) / stride + 1
}

fn im2col(
    x: &[f64],
    channels: usize,
    frames: usize,
    joints: usize,
    kernel: usize,
    stride: usize,
    out_frames: usize,
    cols: &mut [f64],
) {
    let pad = (kernel - 1) / 2;
    let row_len = out_frames * joints;
    for c in 0..channels {
        for k in 0..kernel {
            let row = &mut cols[(c * kernel + k) * row_len..(c * kernel + k + 1) * row_len];
            for to in 0..out_frames {
                let dst = &mut row[to * joints..(to + 1) * joints];
                let ti = (to * stride + k) as isize - pad as isize;
                if ti >= 0 && (ti as usize) < frames {
                    let src = (c * frames + ti as usize) * joints;
                    dst.copy_from_slice(&x[src..src + joints]);
                } else {
                    dst.fill(0.0);
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    channels: usize,
    frames: usize,
    joints: usize,
    kernel: usize,
    stride: usize,
    out_frames: usize,
    dx: &mut [f64],
) {
    let pad = (kernel - 1) / 2;
    let row_len = out_frames * joints;
    for c in 0..channels {
        for k in 0..kernel {
            let row = &cols[(c * kernel + k) * row_len..(c * kernel + k + 1) * row_len];
            for to in 0..out_frames {
                let ti = (to * stride + k) as isize - pad as isize;
                if ti >= 0 && (ti as usize) < frames {
                    let dst = (c * frames + ti as usize) * joints;
                    for j in 0..joints {
                        dx[dst + j] += row[to * joints + j];
                    }
                }
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_exec(exec: Exec) -> Self {
        Graph {
            nodes: Vec::new(),
            exec,
        }
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf holding `value`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Moves a node's value out, leaving a scalar zero.
    pub(crate) fn take_value(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(0.0))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated on `v` by previous backward passes.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Clears every accumulated gradient.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: lhs {:?} vs rhs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn map_unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| f(a)).collect();
        let out = Tensor::new(v.shape(), data).expect("same shape");
        self.push(out, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(va.shape(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(va.shape(), data)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Adds a 1-D `bias` broadcast along `axis` of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(bias);
        if axis >= xs.len() || bs.len() != 1 || bs[0] != xs[axis] {
            return Err(Error::Shape(format!(
                "add_bias: input {xs:?} vs bias {bs:?} on axis {axis}"
            )));
        }
        let (outer, len, inner) = axis_extents(&xs, axis);
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for o in 0..outer {
            for (c, bc) in b.iter().enumerate().take(len) {
                let base = (o * len + c) * inner;
                data[base..base + inner].iter_mut().for_each(|v| *v += bc);
            }
        }
        let out = Tensor::new(&xs, data)?;
        Ok(self.push(out, Op::AddBias { x, bias, axis }, &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.map_unary(x, Op::Scale(x, factor), |a| a * factor)
    }

    /// Rectifier; the derivative at exactly zero is taken as zero.
    pub fn relu(&mut self, x: Var) -> Var {
        self.map_unary(x, Op::Relu(x), |a| if a > 0.0 { a } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map_unary(x, Op::Sigmoid(x), |a| {
            if a >= 0.0 {
                1.0 / (1.0 + (-a).exp())
            } else {
                let e = a.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map_unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Numeric("log of a non-positive value".into()));
        }
        Ok(self.map_unary(x, Op::Log(x), f64::ln))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul: lhs {sa:?} vs rhs {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            0.0,
        );
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::Shape(format!("transpose of non-matrix {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let v = self.value(x).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = v[i * c + j];
            }
        }
        let out = Tensor::new(&[c, r], data)?;
        Ok(self.push(out, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Rows `start..end` along axis 0.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || start > end || end > s[0] {
            return Err(Error::Shape(format!(
                "slice_rows {start}..{end} of {s:?}"
            )));
        }
        let row: usize = s[1..].iter().product();
        let data = self.value(x).data()[start * row..end * row].to_vec();
        let mut shape = s.clone();
        shape[0] = end - start;
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::SliceRows { x, start }, &[x]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Shape(format!("concat: {base:?} vs {s:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_extents(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let len = v.shape()[axis];
                data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || s[axis] == 0 {
            return Err(Error::Shape(format!("mean over axis {axis} of {s:?}")));
        }
        let (outer, len, inner) = axis_extents(&s, axis);
        let v = self.value(x).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &v[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, a) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += a;
                }
            }
        }
        data.iter_mut().for_each(|d| *d /= len as f64);
        let mut shape = s;
        shape.remove(axis);
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::MeanAxis { x, axis }, &[x]))
    }

    /// Divides each vector along the last axis by `max(‖v‖, eps)`.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Var {
        let v = self.value(x);
        let (rows, len) = last_axis(v.shape());
        let mut data = v.data().to_vec();
        for r in 0..rows {
            let row = &mut data[r * len..(r + 1) * len];
            let n = row.iter().map(|a| a * a).sum::<f64>().sqrt().max(eps);
            row.iter_mut().for_each(|a| *a /= n);
        }
        let out = Tensor::new(v.shape(), data).expect("same shape");
        self.push(out, Op::L2Normalize { x, eps }, &[x])
    }

    /// Numerically stable log-sum-exp over the last axis.
    pub fn log_sum_exp(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let (rows, len) = last_axis(v.shape());
        if len == 0 {
            return Err(Error::Shape("log_sum_exp over an empty axis".into()));
        }
        let data = (0..rows)
            .map(|r| {
                let row = &v.data()[r * len..(r + 1) * len];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                m + row.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
            })
            .collect();
        let shape = &v.shape()[..v.ndim().saturating_sub(1)];
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::LogSumExp(x), &[x]))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let (rows, len) = last_axis(v.shape());
        let mut data = v.data().to_vec();
        for r in 0..rows {
            let row = &mut data[r * len..(r + 1) * len];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|a| *a = (*a - m).exp());
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|a| *a /= s);
        }
        let out = Tensor::new(v.shape(), data).expect("same shape");
        self.push(out, Op::Softmax(x), &[x])
    }

    /// Drops the diagonal of a square matrix: `n × n → n × (n − 1)`.
    pub fn off_diagonal(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || s[0] != s[1] || s[0] < 2 {
            return Err(Error::Shape(format!("off_diagonal of {s:?}")));
        }
        let n = s[0];
        let v = self.value(x).data();
        let mut data = Vec::with_capacity(n * (n - 1));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    data.push(v[i * n + j]);
                }
            }
        }
        let out = Tensor::new(&[n, n - 1], data)?;
        Ok(self.push(out, Op::OffDiagonal(x), &[x]))
    }

    /// Picks flat elements of `x` into a 1-D tensor.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if let Some(bad) = index.iter().find(|&&i| i >= v.len()) {
            return Err(Error::Shape(format!(
                "gather index {bad} out of range for {:?}",
                v.shape()
            )));
        }
        let data = index.iter().map(|&i| v.data()[i]).collect();
        let out = Tensor::vector(data);
        Ok(self.push(
            out,
            Op::Gather {
                x,
                index: index.to_vec(),
            },
            &[x],
        ))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let v = self.value(logits);
        if v.len() != targets.len() || targets.is_empty() {
            return Err(Error::Shape(format!(
                "bce: {} logits vs {} targets",
                v.len(),
                targets.len()
            )));
        }
        let loss = v
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - y * z + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / targets.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }

    /// Mixes joints of a `(batch, channels, frames, joints)` input through a
    /// fixed `joints × joints` adjacency: `y[.., j'] = Σ_j x[.., j] A[j, j']`.
    pub fn graph_mix(&mut self, x: Var, adjacency: &Arc<Tensor>) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let a = adjacency.shape();
        if s.len() != 4 || a.len() != 2 || a[0] != s[3] || a[1] != s[3] {
            return Err(Error::Shape(format!(
                "graph_mix: input {s:?} vs adjacency {a:?}"
            )));
        }
        let j = s[3];
        let rows = s[0] * s[1] * s[2];
        let mut out = vec![0.0; rows * j];
        gemm(
            rows,
            j,
            j,
            self.value(x).data(),
            false,
            adjacency.data(),
            false,
            &mut out,
            0.0,
        );
        let out = Tensor::new(&s, out)?;
        Ok(self.push(
            out,
            Op::GraphMix {
                x,
                adjacency: Arc::clone(adjacency),
            },
            &[x],
        ))
    }

    /// Pointwise (1×1) channel map of a `(batch, c_in, frames, joints)` input
    /// with weight `(c_out, c_in)`.
    pub fn channel_map(&mut self, x: Var, weight: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let w = self.shape(weight).to_vec();
        if s.len() != 4 || w.len() != 2 || w[1] != s[1] {
            return Err(Error::Shape(format!(
                "channel_map: input {s:?} vs weight {w:?}"
            )));
        }
        let (b, c, t, j) = (s[0], s[1], s[2], s[3]);
        let o = w[0];
        let plane = t * j;
        let xv = self.value(x).data();
        let wv = self.value(weight).data();
        let mut out = vec![0.0; b * o * plane];
        self.exec.for_each_chunk(&mut out, o * plane, |bi, yb| {
            let xb = &xv[bi * c * plane..(bi + 1) * c * plane];
            gemm(o, c, plane, wv, false, xb, false, yb, 0.0);
        });
        let out = Tensor::new(&[b, o, t, j], out)?;
        Ok(self.push(out, Op::ChannelMap { x, weight }, &[x, weight]))
    }

    /// Convolution along the frame axis of a `(batch, c_in, frames, joints)`
    /// input with weight `(c_out, c_in, kernel)`, odd kernel, "same" zero
    /// padding and the given stride.
    pub fn temporal_conv(&mut self, x: Var, weight: Var, stride: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let w = self.shape(weight).to_vec();
        if s.len() != 4 || w.len() != 3 || w[1] != s[1] || w[2] % 2 == 0 || stride == 0 {
            return Err(Error::Shape(format!(
                "temporal_conv: input {s:?} vs weight {w:?} (stride {stride})"
            )));
        }
        let (b, c, t, j) = (s[0], s[1], s[2], s[3]);
        let (o, k) = (w[0], w[2]);
        let t_out = conv_out_len(t, k, stride);
        let xv = self.value(x).data();
        let wv = self.value(weight).data();
        let mut out = vec![0.0; b * o * t_out * j];
        self.exec.for_each_chunk(&mut out, o * t_out * j, |bi, yb| {
            let xb = &xv[bi * c * t * j..(bi + 1) * c * t * j];
            let mut cols = vec![0.0; c * k * t_out * j];
            im2col(xb, c, t, j, k, stride, t_out, &mut cols);
            gemm(o, c * k, t_out * j, wv, false, &cols, false, yb, 0.0);
        });
        let out = Tensor::new(&[b, o, t_out, j], out)?;
        Ok(self.push(
            out,
            Op::TemporalConv { x, weight, stride },
            &[x, weight],
        ))
    }

    /// Accumulates d(root)/d(leaf) into every leaf that requires gradients.
    ///
    /// Leaf gradients accumulate across repeated calls until
    /// [`Graph::zero_grad`]; intermediate gradients are consumed by the sweep.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        for n in &mut self.nodes[..=root.0] {
            if !matches!(n.op, Op::Leaf) {
                n.grad = None;
            }
        }
        let seed = Tensor::filled(self.shape(root), 1.0);
        self.accumulate(root, seed);
        for i in (0..=root.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_gradients(i, &g);
            for (v, t) in contributions {
                if self.nodes[v.0].requires_grad {
                    self.accumulate(v, t);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, t: Tensor) {
        let node = &mut self.nodes[v.0];
        match &mut node.grad {
            Some(g) => g.add_assign(&t),
            None => node.grad = Some(t),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_gradients(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let y = &node.value;
        let gd = g.data();
        let like = |v: Var, data: Vec<f64>| {
            Tensor::new(self.value(v).shape(), data).expect("gradient matches value shape")
        };
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, like(*b, gd.iter().map(|v| -v).collect()))],
            Op::AddBias { x, bias, axis } => {
                let (outer, len, inner) = axis_extents(y.shape(), *axis);
                let mut gb = vec![0.0; len];
                for o in 0..outer {
                    for (c, acc) in gb.iter_mut().enumerate() {
                        let base = (o * len + c) * inner;
                        *acc += gd[base..base + inner].iter().sum::<f64>();
                    }
                }
                vec![(*x, g.clone()), (*bias, Tensor::vector(gb))]
            }
            Op::Scale(x, f) => vec![(*x, like(*x, gd.iter().map(|v| v * f).collect()))],
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let d = xv
                    .iter()
                    .zip(gd)
                    .map(|(&a, &gi)| if a > 0.0 { gi } else { 0.0 })
                    .collect();
                vec![(*x, like(*x, d))]
            }
            Op::Sigmoid(x) => {
                let d = y
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(s, gi)| s * (1.0 - s) * gi)
                    .collect();
                vec![(*x, like(*x, d))]
            }
            Op::Exp(x) => {
                let d = y.data().iter().zip(gd).map(|(e, gi)| e * gi).collect();
                vec![(*x, like(*x, d))]
            }
            Op::Log(x) => {
                let xv = self.value(*x).data();
                let d = xv.iter().zip(gd).map(|(a, gi)| gi / a).collect();
                vec![(*x, like(*x, d))]
            }
            Op::MatMul(a, b) => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let mut out = Vec::new();
                if self.wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, self.value(*b).data(), true, &mut ga, 0.0);
                    out.push((*a, like(*a, ga)));
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, gd, false, &mut gb, 0.0);
                    out.push((*b, like(*b, gb)));
                }
                out
            }
            Op::Transpose(x) => {
                let s = y.shape();
                let (r, c) = (s[0], s[1]);
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[j * r + i] = gd[i * c + j];
                    }
                }
                vec![(*x, like(*x, d))]
            }
            Op::Reshape(x) => vec![(*x, like(*x, gd.to_vec()))],
            Op::SliceRows { x, start } => {
                let xs = self.value(*x);
                let row: usize = xs.shape()[1..].iter().product();
                let mut d = vec![0.0; xs.len()];
                d[start * row..start * row + gd.len()].copy_from_slice(gd);
                vec![(*x, like(*x, d))]
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_extents(y.shape(), *axis);
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for p in parts {
                    let len = self.shape(*p)[*axis];
                    let mut d = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        d.extend_from_slice(&gd[base..base + len * inner]);
                    }
                    offset += len;
                    out.push((*p, like(*p, d)));
                }
                out
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                vec![(*x, like(*x, vec![gd[0]; n]))]
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                vec![(*x, like(*x, vec![gd[0] / n as f64; n]))]
            }
            Op::MeanAxis { x, axis } => {
                let (outer, len, inner) = axis_extents(self.shape(*x), *axis);
                let mut d = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let src = &gd[o * inner..(o + 1) * inner];
                    for l in 0..len {
                        let dst = &mut d[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (a, b) in dst.iter_mut().zip(src) {
                            *a = b / len as f64;
                        }
                    }
                }
                vec![(*x, like(*x, d))]
            }
            Op::L2Normalize { x, eps } => {
                let xv = self.value(*x).data();
                let (rows, len) = last_axis(y.shape());
                let mut d = vec![0.0; xv.len()];
                for r in 0..rows {
                    let range = r * len..(r + 1) * len;
                    let xr = &xv[range.clone()];
                    let yr = &y.data()[range.clone()];
                    let gr = &gd[range.clone()];
                    let norm = xr.iter().map(|a| a * a).sum::<f64>().sqrt();
                    let dr = &mut d[range];
                    if norm > *eps {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for k in 0..len {
                            dr[k] = (gr[k] - yr[k] * dot) / norm;
                        }
                    } else {
                        for k in 0..len {
                            dr[k] = gr[k] / eps;
                        }
                    }
                }
                vec![(*x, like(*x, d))]
            }
            Op::LogSumExp(x) => {
                let xv = self.value(*x).data();
                let (rows, len) = last_axis(self.shape(*x));
                let mut d = vec![0.0; xv.len()];
                for r in 0..rows {
                    let lse = y.data()[r];
                    for k in 0..len {
                        d[r * len + k] = (xv[r * len + k] - lse).exp() * gd[r];
                    }
                }
                vec![(*x, like(*x, d))]
            }
            Op::Softmax(x) => {
                let (rows, len) = last_axis(y.shape());
                let mut d = vec![0.0; y.len()];
                for r in 0..rows {
                    let s = &y.data()[r * len..(r + 1) * len];
                    let gr = &gd[r * len..(r + 1) * len];
                    let dot: f64 = s.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for k in 0..len {
                        d[r * len + k] = s[k] * (gr[k] - dot);
                    }
                }
                vec![(*x, like(*x, d))]
            }
            Op::OffDiagonal(x) => {
                let n = self.shape(*x)[0];
                let mut d = vec![0.0; n * n];
                let mut src = 0;
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            d[i * n + j] = gd[src];
                            src += 1;
                        }
                    }
                }
                vec![(*x, like(*x, d))]
            }
            Op::Gather { x, index } => {
                let mut d = vec![0.0; self.value(*x).len()];
                for (k, &i) in index.iter().enumerate() {
                    d[i] += gd[k];
                }
                vec![(*x, like(*x, d))]
            }
            Op::BceWithLogits { logits, targets } => {
                let zv = self.value(*logits).data();
                let n = targets.len() as f64;
                let d = zv
                    .iter()
                    .zip(targets)
                    .map(|(&z, &t)| {
                        let s = if z >= 0.0 {
                            1.0 / (1.0 + (-z).exp())
                        } else {
                            let e = z.exp();
                            e / (1.0 + e)
                        };
                        (s - t) / n * gd[0]
                    })
                    .collect();
                vec![(*logits, like(*logits, d))]
            }
            Op::GraphMix { x, adjacency } => {
                let s = y.shape();
                let j = s[3];
                let rows = s[0] * s[1] * s[2];
                let mut d = vec![0.0; rows * j];
                gemm(rows, j, j, gd, false, adjacency.data(), true, &mut d, 0.0);
                vec![(*x, like(*x, d))]
            }
            Op::ChannelMap { x, weight } => self.channel_map_backward(*x, *weight, g),
            Op::TemporalConv { x, weight, stride } => {
                self.temporal_conv_backward(*x, *weight, *stride, g)
            }
        }
    }

    fn channel_map_backward(&self, x: Var, weight: Var, g: &Tensor) -> Vec<(Var, Tensor)> {
        let s = self.shape(x);
        let (b, c, t, j) = (s[0], s[1], s[2], s[3]);
        let o = self.shape(weight)[0];
        let plane = t * j;
        let xv = self.value(x).data();
        let wv = self.value(weight).data();
        let gd = g.data();
        let need_x = self.wants(x);
        let need_w = self.wants(weight);
        let per_sample = self.exec.map(b, |bi| {
            let gb = &gd[bi * o * plane..(bi + 1) * o * plane];
            let xb = &xv[bi * c * plane..(bi + 1) * c * plane];
            let dx = need_x.then(|| {
                let mut dx = vec![0.0; c * plane];
                gemm(c, o, plane, wv, true, gb, false, &mut dx, 0.0);
                dx
            });
            let dw = need_w.then(|| {
                let mut dw = vec![0.0; o * c];
                gemm(o, plane, c, gb, false, xb, true, &mut dw, 0.0);
                dw
            });
            (dx, dw)
        });
        self.collect_conv_grads(x, weight, per_sample)
    }

    fn temporal_conv_backward(
        &self,
        x: Var,
        weight: Var,
        stride: usize,
        g: &Tensor,
    ) -> Vec<(Var, Tensor)> {
        let s = self.shape(x);
        let (b, c, t, j) = (s[0], s[1], s[2], s[3]);
        let ws = self.shape(weight);
        let (o, k) = (ws[0], ws[2]);
        let t_out = conv_out_len(t, k, stride);
        let xv = self.value(x).data();
        let wv = self.value(weight).data();
        let gd = g.data();
        let need_x = self.wants(x);
        let need_w = self.wants(weight);
        let out_len = t_out * j;
        let per_sample = self.exec.map(b, |bi| {
            let gb = &gd[bi * o * out_len..(bi + 1) * o * out_len];
            let dw = need_w.then(|| {
                let xb = &xv[bi * c * t * j..(bi + 1) * c * t * j];
                let mut cols = vec![0.0; c * k * out_len];
                im2col(xb, c, t, j, k, stride, t_out, &mut cols);
                let mut dw = vec![0.0; o * c * k];
                gemm(o, out_len, c * k, gb, false, &cols, true, &mut dw, 0.0);
                dw
            });
            let dx = need_x.then(|| {
                let mut dcols = vec![0.0; c * k * out_len];
                gemm(c * k, o, out_len, wv, true, gb, false, &mut dcols, 0.0);
                let mut dx = vec![0.0; c * t * j];
                col2im(&dcols, c, t, j, k, stride, t_out, &mut dx);
                dx
            });
            (dx, dw)
        });
        self.collect_conv_grads(x, weight, per_sample)
    }

    fn collect_conv_grads(
        &self,
        x: Var,
        weight: Var,
        per_sample: Vec<(Option<Vec<f64>>, Option<Vec<f64>>)>,
    ) -> Vec<(Var, Tensor)> {
        let mut out = Vec::new();
        let mut dx_all = Vec::new();
        let mut dw_sum: Option<Vec<f64>> = None;
        for (dx, dw) in per_sample {
            if let Some(dx) = dx {
                dx_all.extend_from_slice(&dx);
            }
            if let Some(dw) = dw {
                match &mut dw_sum {
                    Some(acc) => acc.iter_mut().zip(&dw).for_each(|(a, b)| *a += b),
                    None => dw_sum = Some(dw),
                }
            }
        }
        if !dx_all.is_empty() {
            out.push((x, Tensor::new(self.shape(x), dx_all).expect("dx shape")));
        }
        if let Some(dw) = dw_sum {
            out.push((weight, Tensor::new(self.shape(weight), dw).expect("dw shape")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn relu_forward_and_kink() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![-1.0, 2.0, 0.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 2.0, 0.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn l2_normalize_three_four_five() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![3.0, 4.0]));
        let y = g.l2_normalize(x, 1e-12);
        assert!(close(g.value(y).data()[0], 0.6, 1e-15));
        assert!(close(g.value(y).data()[1], 0.8, 1e-15));
    }

    #[test]
    fn log_sum_exp_of_zeros() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![0.0, 0.0]));
        let y = g.log_sum_exp(x).unwrap();
        assert!(close(g.value(y).item().unwrap(), 2f64.ln(), 1e-15));
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
        let xt = g.transpose(x).unwrap();
        let sq = g.matmul(x, xt).unwrap();
        g.backward(sq).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.5]));
        let y = g.scale(x, 3.0);
        let s = g.sum(y);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
        g.zero_grad();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[3.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_errors_name_both_operands() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4, 5]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 5]"), "{err}");
    }

    #[test]
    fn temporal_conv_unit_kernel_is_channel_map() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..2 * 3 * 5 * 4).map(|v| (v as f64 * 0.37).sin()).collect();
        let x = g.constant(Tensor::new(&[2, 3, 5, 4], data).unwrap());
        let w2: Vec<f64> = (0..6).map(|v| v as f64 - 2.5).collect();
        let w_map = g.constant(Tensor::new(&[2, 3], w2.clone()).unwrap());
        let w_conv = g.constant(Tensor::new(&[2, 3, 1], w2).unwrap());
        let a = g.channel_map(x, w_map).unwrap();
        let b = g.temporal_conv(x, w_conv, 1).unwrap();
        assert_eq!(g.value(a), g.value(b));
    }

    #[test]
    fn temporal_conv_stride_output_length() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 25, 3]));
        let w = g.constant(Tensor::zeros(&[4, 2, 9]));
        let y = g.temporal_conv(x, w, 2).unwrap();
        assert_eq!(g.shape(y), &[1, 4, 13, 3]);
    }
}
