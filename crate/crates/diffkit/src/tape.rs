use rayon::prelude::*;

use crate::error::{DiffError, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul { a: NodeId, b: NodeId, trans_b: bool },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f32 },
    Relu(NodeId),
    Gelu(NodeId),
    Softmax(NodeId),
    LayerNorm(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumAxis { a: NodeId, axis: usize },
    Concat { inputs: Vec<NodeId>, axis: usize },
    Slice { a: NodeId, axis: usize, start: usize },
    Gather { a: NodeId, rows: Vec<usize> },
    Transpose(NodeId),
    Broadcast(NodeId),
    Reshape(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    // Per-row reciprocal standard deviations for layer norm.
    aux: Vec<f32>,
}

/// Define-by-run record of tensor operations.
///
/// Every op appends a node; [`Tape::backward`] walks the nodes in exact
/// reverse order and sums gradient contributions across fan-out.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const LAYER_NORM_EPS: f64 = 1e-5;

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> DiffError {
    DiffError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

/// Splits a shape around `axis` into (outer, mid, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// `b` either matches `a` or equals a trailing suffix of it.
fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

/// `a[m,k] · b[k,n]` with f64 accumulation; rows are independent so the
/// result does not depend on the thread count.
fn matmul_raw(a: &[f32], m: usize, k: usize, b: &[f32], n: usize) -> Vec<f32> {
    let mut out = vec![0f32; m * n];
    if n == 0 {
        return out;
    }
    out.par_chunks_mut(n)
        .enumerate()
        .for_each_init(
            || vec![0f64; n],
            |acc, (i, row)| {
                acc.iter_mut().for_each(|v| *v = 0.0);
                let arow = &a[i * k..(i + 1) * k];
                for (kk, &av) in arow.iter().enumerate() {
                    let av = av as f64;
                    let brow = &b[kk * n..(kk + 1) * n];
                    for (o, &bv) in acc.iter_mut().zip(brow) {
                        *o += av * bv as f64;
                    }
                }
                for (r, o) in row.iter_mut().zip(acc.iter()) {
                    *r = *o as f32;
                }
            },
        );
    out
}

fn transpose_raw(a: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0f32; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Sums `g` (shape `lead ++ tail`) over the leading axes into a `tail`-sized vector.
fn reduce_leading(g: &[f32], tail: usize) -> Vec<f32> {
    let mut acc = vec![0f64; tail];
    for chunk in g.chunks(tail.max(1)) {
        for (a, &v) in acc.iter_mut().zip(chunk) {
            *a += v as f64;
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x);
    (y, dy)
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            aux: Vec::new(),
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant input; receives a gradient but is not a trainable parameter.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// A trainable parameter identified by `index` in the caller's parameter store.
    /// The same index may be recorded more than once; gradients are summed.
    pub fn param(&mut self, index: usize, value: Tensor) -> NodeId {
        self.push(value, Op::Param(index))
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> Result<NodeId> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (br, bc) = self.value(b).dims2("matmul")?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let bdata = if trans_b {
            transpose_raw(self.value(b).data(), br, bc)
        } else {
            self.value(b).data().to_vec()
        };
        let out = matmul_raw(self.value(a).data(), m, k, &bdata, n);
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b, trans_b }))
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &'static str,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<(Tensor, usize)> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if !broadcast_ok(&sa, &sb) {
            return Err(mismatch(name, &sa, &sb));
        }
        let tail = self.value(b).len().max(1);
        let bd = self.value(b).data();
        let data = self
            .value(a)
            .data()
            .chunks(tail)
            .flat_map(|chunk| chunk.iter().zip(bd).map(|(&x, &y)| f(x, y)))
            .collect();
        Ok((Tensor::new(&sa, data)?, tail))
    }

    /// Elementwise sum; `b` may be broadcast over the leading axes of `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (v, _) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (v, _) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (v, _) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: NodeId, c: f32) -> NodeId {
        let src = self.value(a);
        let data = src.data().iter().map(|v| v * c).collect();
        let value = Tensor::new(src.shape(), data).expect("same shape");
        self.push(value, Op::Scale { a, c })
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let src = self.value(a);
        let data = src.data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(src.shape(), data).expect("same shape");
        self.push(value, Op::Relu(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let src = self.value(a);
        let data = src.data().iter().map(|&v| gelu(v as f64).0 as f32).collect();
        let value = Tensor::new(src.shape(), data).expect("same shape");
        self.push(value, Op::Gelu(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let src = self.value(a);
        let width = *src.shape().last().ok_or(DiffError::InvalidArgument {
            op: "softmax",
            msg: "scalar input".into(),
        })?;
        let mut data = vec![0f32; src.len()];
        let mut exps = vec![0f64; width];
        for (row, out) in src.data().chunks(width).zip(data.chunks_mut(width)) {
            let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
            let mut total = 0f64;
            for (e, &v) in exps.iter_mut().zip(row) {
                *e = (v as f64 - max).exp();
                total += *e;
            }
            for (o, e) in out.iter_mut().zip(&exps) {
                *o = (e / total) as f32;
            }
        }
        let value = Tensor::new(src.shape(), data)?;
        Ok(self.push(value, Op::Softmax(a)))
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: NodeId) -> Result<NodeId> {
        let src = self.value(a);
        let width = *src.shape().last().ok_or(DiffError::InvalidArgument {
            op: "layer_norm",
            msg: "scalar input".into(),
        })?;
        let mut data = vec![0f32; src.len()];
        let mut rstds = Vec::with_capacity(src.len() / width.max(1));
        for (row, out) in src.data().chunks(width).zip(data.chunks_mut(width)) {
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / width as f64;
            let var = row
                .iter()
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>()
                / width as f64;
            let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, &v) in out.iter_mut().zip(row) {
                *o = ((v as f64 - mean) * rstd) as f32;
            }
            rstds.push(rstd as f32);
        }
        let value = Tensor::new(src.shape(), data)?;
        let id = self.push(value, Op::LayerNorm(a));
        self.nodes[id.0].aux = rstds;
        Ok(id)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.value(a).data().iter().map(|&v| v as f64).sum();
        self.push(Tensor::scalar(total as f32), Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let src = self.value(a);
        let total: f64 = src.data().iter().map(|&v| v as f64).sum();
        let mean = total / src.len().max(1) as f64;
        self.push(Tensor::scalar(mean as f32), Op::Mean(a))
    }

    /// Sums over one axis, removing it.
    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(DiffError::InvalidArgument {
                op: "sum_axis",
                msg: format!("axis {axis} out of range for {shape:?}"),
            });
        }
        let (outer, mid, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0f32; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut acc = 0f64;
                for m in 0..mid {
                    acc += src[(o * mid + m) * inner + i] as f64;
                }
                out[o * inner + i] = acc as f32;
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(value, Op::SumAxis { a, axis }))
    }

    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let count = *self.shape(a).get(axis).unwrap_or(&1);
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / count.max(1) as f32))
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = inputs.first().ok_or(DiffError::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(DiffError::InvalidArgument {
                op: "concat",
                msg: format!("axis {axis} out of range for {base:?}"),
            });
        }
        let mut total_mid = 0;
        for &id in inputs {
            let s = self.shape(id);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(ax, (x, y))| ax == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total_mid += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total_mid * inner);
        for o in 0..outer {
            for &id in inputs {
                let v = self.value(id);
                let mid = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * mid * inner..(o + 1) * mid * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total_mid;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(DiffError::InvalidArgument {
                op: "slice",
                msg: format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            });
        }
        let (outer, mid, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * mid + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(value, Op::Slice { a, axis, start }))
    }

    /// Selects rows (axis 0) by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        let Some(&count) = shape.first() else {
            return Err(DiffError::InvalidArgument {
                op: "gather_rows",
                msg: "scalar input".into(),
            });
        };
        if let Some(bad) = rows.iter().find(|&&r| r >= count) {
            return Err(DiffError::InvalidArgument {
                op: "gather_rows",
                msg: format!("row {bad} out of range {count}"),
            });
        }
        let width: usize = shape[1..].iter().product();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            out.extend_from_slice(&src[r * width..(r + 1) * width]);
        }
        let mut out_shape = shape;
        out_shape[0] = rows.len();
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(
            value,
            Op::Gather {
                a,
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(a).dims2("transpose")?;
        let data = transpose_raw(self.value(a).data(), r, c);
        let value = Tensor::new(&[c, r], data)?;
        Ok(self.push(value, Op::Transpose(a)))
    }

    /// Repeats `a` along new leading axes.
    pub fn broadcast(&mut self, a: NodeId, lead: &[usize]) -> Result<NodeId> {
        let mut shape = lead.to_vec();
        shape.extend_from_slice(self.shape(a));
        let copies: usize = lead.iter().product();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(copies * src.len());
        for _ in 0..copies {
            out.extend_from_slice(src);
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Broadcast(a)))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(DiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(p) => Some((p, NodeId(i))),
                _ => None,
            })
            .collect();
        let nodes = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|g| Tensor::new(n.value.shape(), g).expect("grad shape")))
            .collect();
        Ok(Gradients { nodes, params })
    }

    fn propagate(&self, node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        fn acc(grads: &mut [Option<Vec<f32>>], id: NodeId, contrib: Vec<f32>) {
            match &mut grads[id.0] {
                Some(existing) => existing
                    .iter_mut()
                    .zip(contrib)
                    .for_each(|(e, c)| *e += c),
                slot @ None => *slot = Some(contrib),
            }
        }
        let val = |id: NodeId| self.nodes[id.0].value.data();

        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.value(*a).dims2("matmul").expect("checked");
                let n = node.value.shape()[1];
                // dA = dC · Bᵀ (or dC · B when B was used transposed).
                let bt = if *trans_b {
                    val(*b).to_vec()
                } else {
                    transpose_raw(val(*b), k, n)
                };
                acc(grads, *a, matmul_raw(g, m, n, &bt, k));
                let at = transpose_raw(val(*a), m, k);
                let db_kn = matmul_raw(&at, k, m, g, n);
                let db = if *trans_b {
                    transpose_raw(&db_kn, k, n)
                } else {
                    db_kn
                };
                acc(grads, *b, db);
            }
            Op::Add { a, b } => {
                acc(grads, *a, g.to_vec());
                acc(grads, *b, reduce_leading(g, self.value(*b).len()));
            }
            Op::Sub { a, b } => {
                acc(grads, *a, g.to_vec());
                let neg: Vec<f32> = g.iter().map(|v| -v).collect();
                acc(grads, *b, reduce_leading(&neg, self.value(*b).len()));
            }
            Op::Mul { a, b } => {
                let tail = self.value(*b).len().max(1);
                let bv = val(*b);
                let ga: Vec<f32> = g
                    .chunks(tail)
                    .flat_map(|c| c.iter().zip(bv).map(|(x, y)| x * y))
                    .collect();
                let gb_full: Vec<f32> = g.iter().zip(val(*a)).map(|(x, y)| x * y).collect();
                acc(grads, *a, ga);
                acc(grads, *b, reduce_leading(&gb_full, tail));
            }
            Op::Scale { a, c } => acc(grads, *a, g.iter().map(|v| v * c).collect()),
            Op::Relu(a) => acc(
                grads,
                *a,
                g.iter()
                    .zip(val(*a))
                    .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                    .collect(),
            ),
            Op::Gelu(a) => acc(
                grads,
                *a,
                g.iter()
                    .zip(val(*a))
                    .map(|(&gv, &x)| (gv as f64 * gelu(x as f64).1) as f32)
                    .collect(),
            ),
            Op::Softmax(a) => {
                let width = *node.value.shape().last().expect("rank >= 1");
                let mut out = vec![0f32; g.len()];
                for ((y, gy), o) in node
                    .value
                    .data()
                    .chunks(width)
                    .zip(g.chunks(width))
                    .zip(out.chunks_mut(width))
                {
                    let dot: f64 = y.iter().zip(gy).map(|(&a, &b)| a as f64 * b as f64).sum();
                    for ((o, &yv), &gv) in o.iter_mut().zip(y).zip(gy) {
                        *o = (yv as f64 * (gv as f64 - dot)) as f32;
                    }
                }
                acc(grads, *a, out);
            }
            Op::LayerNorm(a) => {
                let width = *node.value.shape().last().expect("rank >= 1");
                let mut out = vec![0f32; g.len()];
                for (((y, gy), o), &rstd) in node
                    .value
                    .data()
                    .chunks(width)
                    .zip(g.chunks(width))
                    .zip(out.chunks_mut(width))
                    .zip(&node.aux)
                {
                    let w = width as f64;
                    let mean_g: f64 = gy.iter().map(|&v| v as f64).sum::<f64>() / w;
                    let mean_gy: f64 =
                        y.iter().zip(gy).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() / w;
                    for ((o, &yv), &gv) in o.iter_mut().zip(y).zip(gy) {
                        *o = (rstd as f64 * (gv as f64 - mean_g - yv as f64 * mean_gy)) as f32;
                    }
                }
                acc(grads, *a, out);
            }
            Op::Sum(a) => acc(grads, *a, vec![g[0]; self.value(*a).len()]),
            Op::Mean(a) => {
                let n = self.value(*a).len().max(1);
                acc(grads, *a, vec![g[0] / n as f32; n]);
            }
            Op::SumAxis { a, axis } => {
                let (outer, mid, inner) = split_axis(self.value(*a).shape(), *axis);
                let mut out = vec![0f32; outer * mid * inner];
                for o in 0..outer {
                    for m in 0..mid {
                        let dst = (o * mid + m) * inner;
                        out[dst..dst + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                acc(grads, *a, out);
            }
            Op::Concat { inputs, axis } => {
                let out_shape = node.value.shape();
                let (outer, total_mid, inner) = split_axis(out_shape, *axis);
                let mut offset = 0;
                for &id in inputs {
                    let mid = self.value(id).shape()[*axis];
                    let mut part = Vec::with_capacity(outer * mid * inner);
                    for o in 0..outer {
                        let base = (o * total_mid + offset) * inner;
                        part.extend_from_slice(&g[base..base + mid * inner]);
                    }
                    acc(grads, id, part);
                    offset += mid;
                }
            }
            Op::Slice { a, axis, start } => {
                let (outer, mid, inner) = split_axis(self.value(*a).shape(), *axis);
                let len = node.value.shape()[*axis];
                let mut out = vec![0f32; outer * mid * inner];
                for o in 0..outer {
                    let dst = (o * mid + start) * inner;
                    out[dst..dst + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                acc(grads, *a, out);
            }
            Op::Gather { a, rows } => {
                let src = self.value(*a);
                let width: usize = src.shape()[1..].iter().product();
                let mut out = vec![0f32; src.len()];
                for (r, &row) in rows.iter().enumerate() {
                    for (o, &gv) in out[row * width..(row + 1) * width]
                        .iter_mut()
                        .zip(&g[r * width..(r + 1) * width])
                    {
                        *o += gv;
                    }
                }
                acc(grads, *a, out);
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2("transpose").expect("checked");
                acc(grads, *a, transpose_raw(g, c, r));
            }
            Op::Broadcast(a) => acc(grads, *a, reduce_leading(g, self.value(*a).len())),
            Op::Reshape(a) => acc(grads, *a, g.to_vec()),
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<(usize, NodeId)>,
}

impl Gradients {
    /// Gradient with respect to a recorded node, if the loss depends on it.
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].as_ref()
    }

    /// Gradients per parameter index, summed over every node recording that
    /// parameter. Unreached parameters get zeros of the given shape.
    pub fn param_grads(&self, shapes: &[&[usize]]) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        for &(p, id) in &self.params {
            if let (Some(g), Some(dst)) = (self.wrt(id), out.get_mut(p)) {
                dst.data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(d, s)| *d += s);
            }
        }
        out
    }
}
