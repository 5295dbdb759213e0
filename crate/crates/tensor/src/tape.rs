use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::shape::{broadcast_shapes, broadcast_strides, numel, Shape, MAX_RANK};

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {a:?} and {b:?}")]
    ShapeMismatch { op: &'static str, a: Vec<usize>, b: Vec<usize> },
    #[error("rank {0} exceeds the supported maximum of 4")]
    RankTooHigh(usize),
    #[error("{op}: invalid argument: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

impl TensorId {
    /// Position of this node on its tape (usable as an index into the
    /// vector returned by [`Tape::forward_f64`]).
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Neg,
    Silu,
    Tanh,
    Exp,
    Abs,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Detach { a: TensorId },
    Bin { kind: BinKind, a: TensorId, b: TensorId },
    Unary { kind: UnaryKind, a: TensorId },
    Affine { a: TensorId, mul: f64, add: f64 },
    Clamp { a: TensorId, lo: f32, hi: f32 },
    MatMul { a: TensorId, b: TensorId },
    SwapLast2 { a: TensorId },
    SwapAxes12 { a: TensorId },
    Reshape { a: TensorId },
    Concat { a: TensorId, b: TensorId, axis: usize },
    Softmax { a: TensorId },
    LayerNorm { x: TensorId, gain: TensorId, bias: TensorId, eps: f64 },
    Embedding { table: TensorId, indices: Vec<u32> },
    MeanPoolMasked { x: TensorId, mask: TensorId },
    MaskedMean { x: TensorId, mask: TensorId },
    SumAll { a: TensorId },
    MaskedCe { logits: TensorId, targets: Vec<u32>, mask: Vec<f32> },
    Dropout { a: TensorId, keep: Vec<f32>, scale: f32 },
}

pub(crate) struct Node {
    pub op: Op,
    pub shape: Shape,
    pub data: Vec<f32>,
    pub grad: Option<Vec<f32>>,
}

/// Single-threaded computation tape: eager forward in f32 (f64 accumulation
/// inside reductions), reverse-mode backward, and an f64 replay used by
/// finite-difference oracles.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

const PAR_FLOPS_THRESHOLD: usize = 1 << 16;

fn matmul_kernel(a: &[f32], b64: &[f64], m: usize, k: usize, n: usize, out: &mut [f32]) {
    let body = |i: usize, row: &mut [f32]| {
        let mut acc = vec![0f64; n];
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &av) in arow.iter().enumerate() {
            let av = av as f64;
            let brow = &b64[kk * n..kk * n + n];
            for j in 0..n {
                acc[j] += av * brow[j];
            }
        }
        for j in 0..n {
            row[j] = acc[j] as f32;
        }
    };
    if m * k * n >= PAR_FLOPS_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| body(i, row));
    } else {
        for (i, row) in out.chunks_mut(n).enumerate() {
            body(i, row);
        }
    }
}

fn matmul_kernel_f64(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..kk * n + n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

fn to_f64(xs: &[f32]) -> Vec<f64> {
    xs.iter().map(|&v| v as f64).collect()
}

fn bin_apply(kind: BinKind, a: f64, b: f64) -> f64 {
    match kind {
        BinKind::Add => a + b,
        BinKind::Sub => a - b,
        BinKind::Mul => a * b,
        BinKind::Div => a / b,
    }
}

fn unary_apply(kind: UnaryKind, x: f64) -> f64 {
    match kind {
        UnaryKind::Neg => -x,
        UnaryKind::Silu => x / (1.0 + (-x).exp()),
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Abs => x.abs(),
    }
}

fn unary_grad(kind: UnaryKind, x: f64) -> f64 {
    match kind {
        UnaryKind::Neg => -1.0,
        UnaryKind::Silu => {
            let s = 1.0 / (1.0 + (-x).exp());
            s * (1.0 + x * (1.0 - s))
        }
        UnaryKind::Tanh => {
            let t = x.tanh();
            1.0 - t * t
        }
        UnaryKind::Exp => x.exp(),
        UnaryKind::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
    }
}

/// Iterate an out-shaped index space, calling `f(out_idx, a_idx, b_idx)`.
fn for_each_broadcast(
    out_shape: &[usize],
    sa: &[usize; MAX_RANK],
    sb: &[usize; MAX_RANK],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out_shape.len();
    let total = numel(out_shape);
    let mut idx = [0usize; MAX_RANK];
    let mut ia = 0usize;
    let mut ib = 0usize;
    for o in 0..total {
        f(o, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            ia -= idx[d] * sa[d];
            ib -= idx[d] * sb[d];
            idx[d] = 0;
        }
    }
}

/// Sum `src` (shaped `src_shape`) down to `dst_shape` over broadcast axes.
fn reduce_to_shape(src: &[f32], src_shape: &[usize], dst_shape: &[usize]) -> Vec<f32> {
    if src_shape == dst_shape {
        return src.to_vec();
    }
    let mut acc = vec![0f64; numel(dst_shape)];
    let sd = broadcast_strides(dst_shape, src_shape);
    let zero = [0usize; MAX_RANK];
    for_each_broadcast(src_shape, &sd, &zero, |o, id, _| {
        acc[id] += src[o] as f64;
    });
    acc.iter().map(|&v| v as f32).collect()
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, shape: Shape, data: Vec<f32>) -> TensorId {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(Node { op, shape, data, grad: None });
        TensorId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: TensorId) -> &[f32] {
        &self.nodes[id.0].data
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f32]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn leaf(&mut self, shape: &[usize], data: Vec<f32>) -> Result<TensorId> {
        if shape.len() > MAX_RANK {
            return Err(TensorError::RankTooHigh(shape.len()));
        }
        if numel(shape) != data.len() {
            return Err(TensorError::Invalid {
                op: "leaf",
                msg: format!("shape {:?} does not match data length {}", shape, data.len()),
            });
        }
        Ok(self.push(Op::Leaf, shape.to_vec(), data))
    }

    pub fn scalar(&mut self, v: f32) -> TensorId {
        self.push(Op::Leaf, vec![1], vec![v])
    }

    pub(crate) fn param_leaf(&mut self, _name: &str, shape: &[usize], data: Vec<f32>) -> TensorId {
        self.push(Op::Leaf, shape.to_vec(), data)
    }

    /// Value pass-through that blocks gradient flow (stop-gradient).
    pub fn detach(&mut self, a: TensorId) -> TensorId {
        let shape = self.nodes[a.0].shape.clone();
        let data = self.nodes[a.0].data.clone();
        self.push(Op::Detach { a }, shape, data)
    }

    fn bin(&mut self, kind: BinKind, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        let out_shape = broadcast_shapes(sa, sb)?;
        let stra = broadcast_strides(sa, &out_shape);
        let strb = broadcast_strides(sb, &out_shape);
        let (da, db) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        let mut out = vec![0f32; numel(&out_shape)];
        if sa == sb {
            // fast path: same shapes
            match kind {
                BinKind::Add => {
                    for i in 0..out.len() {
                        out[i] = da[i] + db[i];
                    }
                }
                BinKind::Sub => {
                    for i in 0..out.len() {
                        out[i] = da[i] - db[i];
                    }
                }
                BinKind::Mul => {
                    for i in 0..out.len() {
                        out[i] = da[i] * db[i];
                    }
                }
                BinKind::Div => {
                    for i in 0..out.len() {
                        out[i] = da[i] / db[i];
                    }
                }
            }
        } else {
            for_each_broadcast(&out_shape, &stra, &strb, |o, ia, ib| {
                out[o] = bin_apply(kind, da[ia] as f64, db[ib] as f64) as f32;
            });
        }
        Ok(self.push(Op::Bin { kind, a, b }, out_shape, out))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.bin(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.bin(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.bin(BinKind::Mul, a, b)
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.bin(BinKind::Div, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, a: TensorId) -> TensorId {
        let shape = self.nodes[a.0].shape.clone();
        let data: Vec<f32> = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| unary_apply(kind, x as f64) as f32)
            .collect();
        self.push(Op::Unary { kind, a }, shape, data)
    }

    pub fn neg(&mut self, a: TensorId) -> TensorId {
        self.unary(UnaryKind::Neg, a)
    }

    pub fn silu(&mut self, a: TensorId) -> TensorId {
        self.unary(UnaryKind::Silu, a)
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn abs(&mut self, a: TensorId) -> TensorId {
        self.unary(UnaryKind::Abs, a)
    }

    /// Elementwise `x * mul + add` with f64 constants.
    pub fn affine(&mut self, a: TensorId, mul: f64, add: f64) -> TensorId {
        let shape = self.nodes[a.0].shape.clone();
        let data: Vec<f32> = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| (x as f64 * mul + add) as f32)
            .collect();
        self.push(Op::Affine { a, mul, add }, shape, data)
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        self.affine(a, c, 0.0)
    }

    pub fn clamp(&mut self, a: TensorId, lo: f32, hi: f32) -> TensorId {
        let shape = self.nodes[a.0].shape.clone();
        let data: Vec<f32> = self.nodes[a.0].data.iter().map(|&x| x.clamp(lo, hi)).collect();
        self.push(Op::Clamp { a, lo, hi }, shape, data)
    }

    pub fn square(&mut self, a: TensorId) -> Result<TensorId> {
        self.mul(a, a)
    }

    /// Batched matrix product `[.., M, K] x [.., K, N]`; the right side may be
    /// rank-2, in which case it is shared across the batch.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(TensorError::ShapeMismatch { op: "matmul", a: sa, b: sb });
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let batch_a: usize = sa[..sa.len() - 2].iter().product();
        let batch_b: usize = sb[..sb.len() - 2].iter().product();
        let shared_rhs = sb.len() == 2;
        if k != kb || (!shared_rhs && (batch_a != batch_b || sa.len() != sb.len())) {
            return Err(TensorError::ShapeMismatch { op: "matmul", a: sa, b: sb });
        }
        let mut out_shape: Vec<usize> = sa[..sa.len() - 2].to_vec();
        out_shape.push(m);
        out_shape.push(n);
        let da = &self.nodes[a.0].data;
        let db = &self.nodes[b.0].data;
        let mut out = vec![0f32; batch_a * m * n];
        if shared_rhs {
            // collapse the batch into rows: [batch*M, K] x [K, N]
            let b64 = to_f64(db);
            matmul_kernel(da, &b64, batch_a * m, k, n, &mut out);
        } else {
            let b64 = to_f64(db);
            let body = |bi: usize, chunk: &mut [f32]| {
                matmul_kernel(
                    &da[bi * m * k..(bi + 1) * m * k],
                    &b64[bi * k * n..(bi + 1) * k * n],
                    m,
                    k,
                    n,
                    chunk,
                );
            };
            if batch_a * m * k * n >= PAR_FLOPS_THRESHOLD && batch_a > 1 {
                out.par_chunks_mut(m * n).enumerate().for_each(|(bi, c)| body(bi, c));
            } else {
                for (bi, c) in out.chunks_mut(m * n).enumerate() {
                    body(bi, c);
                }
            }
        }
        Ok(self.push(Op::MatMul { a, b }, out_shape, out))
    }

    /// Swap the last two axes.
    pub fn swap_last2(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.nodes[a.0].shape.clone();
        if sa.len() < 2 {
            return Err(TensorError::Invalid { op: "swap_last2", msg: format!("rank {} < 2", sa.len()) });
        }
        let (r, c) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let da = &self.nodes[a.0].data;
        let mut out = vec![0f32; da.len()];
        for bi in 0..batch {
            let src = &da[bi * r * c..(bi + 1) * r * c];
            let dst = &mut out[bi * r * c..(bi + 1) * r * c];
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        let mut out_shape = sa;
        let l = out_shape.len();
        out_shape.swap(l - 2, l - 1);
        Ok(self.push(Op::SwapLast2 { a }, out_shape, out))
    }

    /// Swap axes 1 and 2 of a rank-4 tensor: `[A,B,C,D] -> [A,C,B,D]`.
    /// This is the head/sequence transpose used by multi-head attention.
    pub fn swap_axes_12(&mut self, a: TensorId) -> Result<TensorId> {
        let sa = self.nodes[a.0].shape.clone();
        if sa.len() != 4 {
            return Err(TensorError::Invalid { op: "swap_axes_12", msg: format!("rank {} != 4", sa.len()) });
        }
        let (n0, n1, n2, n3) = (sa[0], sa[1], sa[2], sa[3]);
        let da = &self.nodes[a.0].data;
        let mut out = vec![0f32; da.len()];
        for i0 in 0..n0 {
            for i1 in 0..n1 {
                for i2 in 0..n2 {
                    let src = ((i0 * n1 + i1) * n2 + i2) * n3;
                    let dst = ((i0 * n2 + i2) * n1 + i1) * n3;
                    out[dst..dst + n3].copy_from_slice(&da[src..src + n3]);
                }
            }
        }
        Ok(self.push(Op::SwapAxes12 { a }, vec![n0, n2, n1, n3], out))
    }

    pub fn reshape(&mut self, a: TensorId, shape: &[usize]) -> Result<TensorId> {
        if shape.len() > MAX_RANK {
            return Err(TensorError::RankTooHigh(shape.len()));
        }
        if numel(shape) != self.nodes[a.0].data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                a: self.nodes[a.0].shape.clone(),
                b: shape.to_vec(),
            });
        }
        let data = self.nodes[a.0].data.clone();
        Ok(self.push(Op::Reshape { a }, shape.to_vec(), data))
    }

    /// Concatenate along `axis`; all other dims must match.
    pub fn concat(&mut self, a: TensorId, b: TensorId, axis: usize) -> Result<TensorId> {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        if sa.len() != sb.len() || axis >= sa.len() {
            return Err(TensorError::ShapeMismatch { op: "concat", a: sa, b: sb });
        }
        for (d, (&x, &y)) in sa.iter().zip(sb.iter()).enumerate() {
            if d != axis && x != y {
                return Err(TensorError::ShapeMismatch { op: "concat", a: sa, b: sb });
            }
        }
        let mut out_shape = sa.clone();
        out_shape[axis] = sa[axis] + sb[axis];
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let (ca, cb) = (sa[axis] * inner, sb[axis] * inner);
        let da = &self.nodes[a.0].data;
        let db = &self.nodes[b.0].data;
        let mut out = Vec::with_capacity(da.len() + db.len());
        for o in 0..outer {
            out.extend_from_slice(&da[o * ca..(o + 1) * ca]);
            out.extend_from_slice(&db[o * cb..(o + 1) * cb]);
        }
        Ok(self.push(Op::Concat { a, b, axis }, out_shape, out))
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax(&mut self, a: TensorId) -> Result<TensorId> {
        let shape = self.nodes[a.0].shape.clone();
        if shape.is_empty() {
            return Err(TensorError::Invalid { op: "softmax", msg: "rank-0 input".into() });
        }
        let d = shape[shape.len() - 1];
        let rows = numel(&shape) / d;
        let da = &self.nodes[a.0].data;
        let mut out = vec![0f32; da.len()];
        for r in 0..rows {
            let src = &da[r * d..(r + 1) * d];
            let dst = &mut out[r * d..(r + 1) * d];
            let mx = src.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut z = 0f64;
            for j in 0..d {
                let e = ((src[j] - mx) as f64).exp();
                dst[j] = e as f32;
                z += e;
            }
            for v in dst.iter_mut() {
                *v = (*v as f64 / z) as f32;
            }
        }
        Ok(self.push(Op::Softmax { a }, shape, out))
    }

    /// Layer normalization over the last axis with learned gain/bias.
    pub fn layer_norm(&mut self, x: TensorId, gain: TensorId, bias: TensorId, eps: f64) -> Result<TensorId> {
        let shape = self.nodes[x.0].shape.clone();
        let d = *shape.last().ok_or(TensorError::Invalid { op: "layer_norm", msg: "rank-0 input".into() })?;
        if self.nodes[gain.0].shape != [d] || self.nodes[bias.0].shape != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                a: shape,
                b: self.nodes[gain.0].shape.clone(),
            });
        }
        let rows = numel(&shape) / d;
        let dx = &self.nodes[x.0].data;
        let dg = &self.nodes[gain.0].data;
        let db = &self.nodes[bias.0].data;
        let mut out = vec![0f32; dx.len()];
        for r in 0..rows {
            let src = &dx[r * d..(r + 1) * d];
            let dst = &mut out[r * d..(r + 1) * d];
            let mut mean = 0f64;
            for &v in src {
                mean += v as f64;
            }
            mean /= d as f64;
            let mut var = 0f64;
            for &v in src {
                let c = v as f64 - mean;
                var += c * c;
            }
            var /= d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                let xhat = (src[j] as f64 - mean) * inv;
                dst[j] = (xhat * dg[j] as f64 + db[j] as f64) as f32;
            }
        }
        Ok(self.push(Op::LayerNorm { x, gain, bias, eps }, shape, out))
    }

    /// Row lookup: `table[V, D]` gathered by `indices` -> `[len, D]`.
    pub fn embedding(&mut self, table: TensorId, indices: &[u32]) -> Result<TensorId> {
        let ts = self.nodes[table.0].shape.clone();
        if ts.len() != 2 {
            return Err(TensorError::Invalid { op: "embedding", msg: format!("table rank {} != 2", ts.len()) });
        }
        let (v, d) = (ts[0], ts[1]);
        let dt = &self.nodes[table.0].data;
        let mut out = Vec::with_capacity(indices.len() * d);
        for &ix in indices {
            let ix = ix as usize;
            if ix >= v {
                return Err(TensorError::Invalid { op: "embedding", msg: format!("index {ix} >= vocab {v}") });
            }
            out.extend_from_slice(&dt[ix * d..(ix + 1) * d]);
        }
        Ok(self.push(
            Op::Embedding { table, indices: indices.to_vec() },
            vec![indices.len(), d],
            out,
        ))
    }

    /// Mean over the sequence axis of positions where mask is nonzero:
    /// `x [B, T, D]`, `mask [B, T]` -> `[B, D]`.
    pub fn mean_pool_masked(&mut self, x: TensorId, mask: TensorId) -> Result<TensorId> {
        let sx = self.nodes[x.0].shape.clone();
        let sm = self.nodes[mask.0].shape.clone();
        if sx.len() != 3 || sm.len() != 2 || sx[0] != sm[0] || sx[1] != sm[1] {
            return Err(TensorError::ShapeMismatch { op: "mean_pool_masked", a: sx, b: sm });
        }
        let (b, t, d) = (sx[0], sx[1], sx[2]);
        let dx = &self.nodes[x.0].data;
        let dm = &self.nodes[mask.0].data;
        let mut out = vec![0f32; b * d];
        for bi in 0..b {
            let mut cnt = 0f64;
            let mut acc = vec![0f64; d];
            for ti in 0..t {
                let w = dm[bi * t + ti] as f64;
                if w != 0.0 {
                    cnt += w;
                    let row = &dx[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                    for j in 0..d {
                        acc[j] += w * row[j] as f64;
                    }
                }
            }
            if cnt == 0.0 {
                return Err(TensorError::Invalid {
                    op: "mean_pool_masked",
                    msg: format!("batch row {bi} has an empty mask"),
                });
            }
            for j in 0..d {
                out[bi * d + j] = (acc[j] / cnt) as f32;
            }
        }
        Ok(self.push(Op::MeanPoolMasked { x, mask }, vec![b, d], out))
    }

    /// Scalar `sum(x * mask) / sum(mask)`; mask must have the same shape.
    pub fn masked_mean(&mut self, x: TensorId, mask: TensorId) -> Result<TensorId> {
        let sx = self.nodes[x.0].shape.clone();
        let sm = self.nodes[mask.0].shape.clone();
        if sx != sm {
            return Err(TensorError::ShapeMismatch { op: "masked_mean", a: sx, b: sm });
        }
        let dx = &self.nodes[x.0].data;
        let dm = &self.nodes[mask.0].data;
        let mut num = 0f64;
        let mut den = 0f64;
        for i in 0..dx.len() {
            num += dx[i] as f64 * dm[i] as f64;
            den += dm[i] as f64;
        }
        if den == 0.0 {
            return Err(TensorError::Invalid { op: "masked_mean", msg: "empty mask".into() });
        }
        Ok(self.push(Op::MaskedMean { x, mask }, vec![1], vec![(num / den) as f32]))
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let mut acc = 0f64;
        for &v in &self.nodes[a.0].data {
            acc += v as f64;
        }
        self.push(Op::SumAll { a }, vec![1], vec![acc as f32])
    }

    /// Mean token cross-entropy over masked positions.
    /// `logits [.., T, V]` flattened to rows; `targets`/`mask` length = rows.
    pub fn masked_cross_entropy(&mut self, logits: TensorId, targets: &[u32], mask: &[f32]) -> Result<TensorId> {
        let sl = self.nodes[logits.0].shape.clone();
        let v = *sl.last().ok_or(TensorError::Invalid { op: "masked_ce", msg: "rank-0 logits".into() })?;
        let rows = numel(&sl) / v;
        if targets.len() != rows || mask.len() != rows {
            return Err(TensorError::Invalid {
                op: "masked_ce",
                msg: format!("{} logit rows vs {} targets / {} mask entries", rows, targets.len(), mask.len()),
            });
        }
        let cnt: f64 = mask.iter().map(|&m| m as f64).sum();
        if cnt == 0.0 {
            return Err(TensorError::Invalid { op: "masked_ce", msg: "all positions masked out".into() });
        }
        let dl = &self.nodes[logits.0].data;
        let mut nll = 0f64;
        for r in 0..rows {
            if mask[r] == 0.0 {
                continue;
            }
            let row = &dl[r * v..(r + 1) * v];
            let mx = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let mut z = 0f64;
            for &x in row {
                z += ((x as f64) - mx).exp();
            }
            let t = targets[r] as usize;
            if t >= v {
                return Err(TensorError::Invalid { op: "masked_ce", msg: format!("target {t} >= vocab {v}") });
            }
            nll += (mask[r] as f64) * (mx + z.ln() - row[t] as f64);
        }
        Ok(self.push(
            Op::MaskedCe { logits, targets: targets.to_vec(), mask: mask.to_vec() },
            vec![1],
            vec![(nll / cnt) as f32],
        ))
    }

    /// Inverted-dropout with a caller-supplied 0/1 keep mask.
    pub fn dropout(&mut self, a: TensorId, keep: Vec<f32>, p: f32) -> Result<TensorId> {
        if keep.len() != self.nodes[a.0].data.len() {
            return Err(TensorError::Invalid {
                op: "dropout",
                msg: format!("mask length {} != data length {}", keep.len(), self.nodes[a.0].data.len()),
            });
        }
        let scale = 1.0 / (1.0 - p);
        let shape = self.nodes[a.0].shape.clone();
        let data: Vec<f32> = self.nodes[a.0]
            .data
            .iter()
            .zip(keep.iter())
            .map(|(&x, &k)| x * k * scale)
            .collect();
        Ok(self.push(Op::Dropout { a, keep, scale }, shape, data))
    }

    fn accum_grad(&mut self, id: TensorId, delta: &[f32]) {
        let node = &mut self.nodes[id.0];
        match node.grad.as_mut() {
            Some(g) => {
                for (gi, &d) in g.iter_mut().zip(delta.iter()) {
                    *gi += d;
                }
            }
            None => node.grad = Some(delta.to_vec()),
        }
    }

    /// Reverse-mode backward from a scalar loss. Gradients accumulate into
    /// every reachable node's grad slot.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].shape != [1] {
            return Err(TensorError::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        // reachability pass so unrelated subgraphs are skipped
        let mut reach = vec![false; self.nodes.len()];
        reach[loss.0] = true;
        for i in (0..=loss.0).rev() {
            if !reach[i] {
                continue;
            }
            for inp in op_inputs(&self.nodes[i].op) {
                reach[inp.0] = true;
            }
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !reach[i] || self.nodes[i].grad.is_none() {
                continue;
            }
            self.backprop_node(i)?;
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize) -> Result<()> {
        let op = self.nodes[i].op.clone();
        let dout = match self.nodes[i].grad.clone() {
            Some(g) => g,
            None => return Ok(()),
        };
        match op {
            Op::Leaf => {}
            Op::Detach { .. } => {}
            Op::Bin { kind, a, b } => {
                let sa = self.nodes[a.0].shape.clone();
                let sb = self.nodes[b.0].shape.clone();
                let out_shape = self.nodes[i].shape.clone();
                let da = &self.nodes[a.0].data;
                let db = &self.nodes[b.0].data;
                let mut ga = vec![0f32; numel(&out_shape)];
                let mut gb = vec![0f32; numel(&out_shape)];
                if sa == sb {
                    for o in 0..ga.len() {
                        let g = dout[o];
                        match kind {
                            BinKind::Add => {
                                ga[o] = g;
                                gb[o] = g;
                            }
                            BinKind::Sub => {
                                ga[o] = g;
                                gb[o] = -g;
                            }
                            BinKind::Mul => {
                                ga[o] = g * db[o];
                                gb[o] = g * da[o];
                            }
                            BinKind::Div => {
                                ga[o] = g / db[o];
                                gb[o] = -g * da[o] / (db[o] * db[o]);
                            }
                        }
                    }
                } else {
                    let stra = broadcast_strides(&sa, &out_shape);
                    let strb = broadcast_strides(&sb, &out_shape);
                    for_each_broadcast(&out_shape, &stra, &strb, |o, ia, ib| {
                        let g = dout[o] as f64;
                        match kind {
                            BinKind::Add => {
                                ga[o] = g as f32;
                                gb[o] = g as f32;
                            }
                            BinKind::Sub => {
                                ga[o] = g as f32;
                                gb[o] = -g as f32;
                            }
                            BinKind::Mul => {
                                ga[o] = (g * db[ib] as f64) as f32;
                                gb[o] = (g * da[ia] as f64) as f32;
                            }
                            BinKind::Div => {
                                let bv = db[ib] as f64;
                                ga[o] = (g / bv) as f32;
                                gb[o] = (-g * da[ia] as f64 / (bv * bv)) as f32;
                            }
                        }
                    });
                }
                let ra = reduce_to_shape(&ga, &out_shape, &sa);
                let rb = reduce_to_shape(&gb, &out_shape, &sb);
                self.accum_grad(a, &ra);
                self.accum_grad(b, &rb);
            }
            Op::Unary { kind, a } => {
                let delta: Vec<f32> = self.nodes[a.0]
                    .data
                    .iter()
                    .zip(dout.iter())
                    .map(|(&x, &g)| (g as f64 * unary_grad(kind, x as f64)) as f32)
                    .collect();
                self.accum_grad(a, &delta);
            }
            Op::Affine { a, mul, .. } => {
                let delta: Vec<f32> = dout.iter().map(|&g| (g as f64 * mul) as f32).collect();
                self.accum_grad(a, &delta);
            }
            Op::Clamp { a, lo, hi } => {
                let delta: Vec<f32> = self.nodes[a.0]
                    .data
                    .iter()
                    .zip(dout.iter())
                    .map(|(&x, &g)| if x > lo && x < hi { g } else { 0.0 })
                    .collect();
                self.accum_grad(a, &delta);
            }
            Op::MatMul { a, b } => {
                let sa = self.nodes[a.0].shape.clone();
                let sb = self.nodes[b.0].shape.clone();
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = sb[sb.len() - 1];
                let batch: usize = sa[..sa.len() - 2].iter().product();
                let da = self.nodes[a.0].data.clone();
                let db = self.nodes[b.0].data.clone();
                // dA = dC * B^T
                let mut ga = vec![0f32; da.len()];
                {
                    let bt64 = {
                        // B^T per batch (or shared)
                        let bt_batches = if sb.len() == 2 { 1 } else { batch };
                        let mut bt = vec![0f64; db.len()];
                        for bi in 0..bt_batches {
                            let src = &db[bi * k * n..(bi + 1) * k * n];
                            let dst = &mut bt[bi * k * n..(bi + 1) * k * n];
                            for r in 0..k {
                                for c in 0..n {
                                    dst[c * k + r] = src[r * n + c] as f64;
                                }
                            }
                        }
                        bt
                    };
                    if sb.len() == 2 {
                        matmul_kernel(&dout, &bt64, batch * m, n, k, &mut ga);
                    } else {
                        for bi in 0..batch {
                            matmul_kernel(
                                &dout[bi * m * n..(bi + 1) * m * n],
                                &bt64[bi * n * k..(bi + 1) * n * k],
                                m,
                                n,
                                k,
                                &mut ga[bi * m * k..(bi + 1) * m * k],
                            );
                        }
                    }
                }
                // dB = A^T * dC (accumulated over the batch when B is shared)
                let mut gb = vec![0f32; db.len()];
                if sb.len() == 2 {
                    // flatten batch into rows: A [batch*m, k], dC [batch*m, n]
                    let mut at64 = vec![0f64; da.len()];
                    let rows = batch * m;
                    for r in 0..rows {
                        for c in 0..k {
                            at64[c * rows + r] = da[r * k + c] as f64;
                        }
                    }
                    let d64 = to_f64(&dout);
                    let mut acc = vec![0f64; k * n];
                    matmul_kernel_f64(&at64, &d64, k, rows, n, &mut acc);
                    for (g, &v) in gb.iter_mut().zip(acc.iter()) {
                        *g = v as f32;
                    }
                } else {
                    for bi in 0..batch {
                        let mut at64 = vec![0f64; m * k];
                        let asrc = &da[bi * m * k..(bi + 1) * m * k];
                        for r in 0..m {
                            for c in 0..k {
                                at64[c * m + r] = asrc[r * k + c] as f64;
                            }
                        }
                        let d64 = to_f64(&dout[bi * m * n..(bi + 1) * m * n]);
                        let mut acc = vec![0f64; k * n];
                        matmul_kernel_f64(&at64, &d64, k, m, n, &mut acc);
                        let dst = &mut gb[bi * k * n..(bi + 1) * k * n];
                        for (g, &v) in dst.iter_mut().zip(acc.iter()) {
                            *g = v as f32;
                        }
                    }
                }
                self.accum_grad(a, &ga);
                self.accum_grad(b, &gb);
            }
            Op::SwapLast2 { a } => {
                let so = self.nodes[i].shape.clone();
                let (r, c) = (so[so.len() - 2], so[so.len() - 1]);
                let batch: usize = so[..so.len() - 2].iter().product();
                let mut delta = vec![0f32; dout.len()];
                for bi in 0..batch {
                    let src = &dout[bi * r * c..(bi + 1) * r * c];
                    let dst = &mut delta[bi * r * c..(bi + 1) * r * c];
                    for x in 0..r {
                        for y in 0..c {
                            dst[y * r + x] = src[x * c + y];
                        }
                    }
                }
                self.accum_grad(a, &delta);
            }
            Op::SwapAxes12 { a } => {
                // involution: transpose the gradient back
                let so = self.nodes[i].shape.clone();
                let (n0, n1, n2, n3) = (so[0], so[1], so[2], so[3]);
                let mut delta = vec![0f32; dout.len()];
                for i0 in 0..n0 {
                    for i1 in 0..n1 {
                        for i2 in 0..n2 {
                            let src = ((i0 * n1 + i1) * n2 + i2) * n3;
                            let dst = ((i0 * n2 + i2) * n1 + i1) * n3;
                            delta[dst..dst + n3].copy_from_slice(&dout[src..src + n3]);
                        }
                    }
                }
                self.accum_grad(a, &delta);
            }
            Op::Reshape { a } => {
                self.accum_grad(a, &dout);
            }
            Op::Concat { a, b, axis } => {
                let sa = self.nodes[a.0].shape.clone();
                let sb = self.nodes[b.0].shape.clone();
                let outer: usize = sa[..axis].iter().product();
                let inner: usize = sa[axis + 1..].iter().product();
                let (ca, cb) = (sa[axis] * inner, sb[axis] * inner);
                let mut ga = vec![0f32; numel(&sa)];
                let mut gb = vec![0f32; numel(&sb)];
                for o in 0..outer {
                    let base = o * (ca + cb);
                    ga[o * ca..(o + 1) * ca].copy_from_slice(&dout[base..base + ca]);
                    gb[o * cb..(o + 1) * cb].copy_from_slice(&dout[base + ca..base + ca + cb]);
                }
                self.accum_grad(a, &ga);
                self.accum_grad(b, &gb);
            }
            Op::Softmax { a } => {
                let shape = self.nodes[i].shape.clone();
                let d = shape[shape.len() - 1];
                let rows = numel(&shape) / d;
                let y = self.nodes[i].data.clone();
                let mut delta = vec![0f32; y.len()];
                for r in 0..rows {
                    let yy = &y[r * d..(r + 1) * d];
                    let gg = &dout[r * d..(r + 1) * d];
                    let mut dot = 0f64;
                    for j in 0..d {
                        dot += yy[j] as f64 * gg[j] as f64;
                    }
                    for j in 0..d {
                        delta[r * d + j] = (yy[j] as f64 * (gg[j] as f64 - dot)) as f32;
                    }
                }
                self.accum_grad(a, &delta);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let shape = self.nodes[x.0].shape.clone();
                let d = shape[shape.len() - 1];
                let rows = numel(&shape) / d;
                let dx_in = self.nodes[x.0].data.clone();
                let dg_in = self.nodes[gain.0].data.clone();
                let mut gx = vec![0f32; dx_in.len()];
                let mut ggain = vec![0f64; d];
                let mut gbias = vec![0f64; d];
                for r in 0..rows {
                    let src = &dx_in[r * d..(r + 1) * d];
                    let gout = &dout[r * d..(r + 1) * d];
                    let mut mean = 0f64;
                    for &v in src {
                        mean += v as f64;
                    }
                    mean /= d as f64;
                    let mut var = 0f64;
                    for &v in src {
                        let c = v as f64 - mean;
                        var += c * c;
                    }
                    var /= d as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    // accumulate param grads and the two row sums
                    let mut sum_dxhat = 0f64;
                    let mut sum_dxhat_xhat = 0f64;
                    for j in 0..d {
                        let xhat = (src[j] as f64 - mean) * inv;
                        let g = gout[j] as f64;
                        ggain[j] += g * xhat;
                        gbias[j] += g;
                        let dxhat = g * dg_in[j] as f64;
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    for j in 0..d {
                        let xhat = (src[j] as f64 - mean) * inv;
                        let dxhat = gout[j] as f64 * dg_in[j] as f64;
                        gx[r * d + j] = (inv * (dxhat - sum_dxhat / d as f64 - xhat * sum_dxhat_xhat / d as f64)) as f32;
                    }
                }
                let ggain: Vec<f32> = ggain.iter().map(|&v| v as f32).collect();
                let gbias: Vec<f32> = gbias.iter().map(|&v| v as f32).collect();
                self.accum_grad(x, &gx);
                self.accum_grad(gain, &ggain);
                self.accum_grad(bias, &gbias);
            }
            Op::Embedding { table, ref indices } => {
                let d = self.nodes[table.0].shape[1];
                let mut gt = vec![0f64; self.nodes[table.0].data.len()];
                for (r, &ix) in indices.iter().enumerate() {
                    let dst = &mut gt[ix as usize * d..(ix as usize + 1) * d];
                    let src = &dout[r * d..(r + 1) * d];
                    for j in 0..d {
                        dst[j] += src[j] as f64;
                    }
                }
                let gt: Vec<f32> = gt.iter().map(|&v| v as f32).collect();
                self.accum_grad(table, &gt);
            }
            Op::MeanPoolMasked { x, mask } => {
                let sx = self.nodes[x.0].shape.clone();
                let (b, t, d) = (sx[0], sx[1], sx[2]);
                let dm = self.nodes[mask.0].data.clone();
                let mut gx = vec![0f32; b * t * d];
                for bi in 0..b {
                    let mut cnt = 0f64;
                    for ti in 0..t {
                        cnt += dm[bi * t + ti] as f64;
                    }
                    for ti in 0..t {
                        let w = dm[bi * t + ti] as f64;
                        if w == 0.0 {
                            continue;
                        }
                        for j in 0..d {
                            gx[(bi * t + ti) * d + j] = (w / cnt * dout[bi * d + j] as f64) as f32;
                        }
                    }
                }
                self.accum_grad(x, &gx);
            }
            Op::MaskedMean { x, mask } => {
                let dm = self.nodes[mask.0].data.clone();
                let den: f64 = dm.iter().map(|&m| m as f64).sum();
                let g = dout[0] as f64;
                let gx: Vec<f32> = dm.iter().map(|&m| (g * m as f64 / den) as f32).collect();
                self.accum_grad(x, &gx);
            }
            Op::SumAll { a } => {
                let g = dout[0];
                let delta = vec![g; self.nodes[a.0].data.len()];
                self.accum_grad(a, &delta);
            }
            Op::MaskedCe { logits, ref targets, ref mask } => {
                let sl = self.nodes[logits.0].shape.clone();
                let v = sl[sl.len() - 1];
                let rows = numel(&sl) / v;
                let cnt: f64 = mask.iter().map(|&m| m as f64).sum();
                let g = dout[0] as f64;
                let dl = self.nodes[logits.0].data.clone();
                let mut gl = vec![0f32; dl.len()];
                for r in 0..rows {
                    if mask[r] == 0.0 {
                        continue;
                    }
                    let row = &dl[r * v..(r + 1) * v];
                    let mx = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
                    let mut z = 0f64;
                    for &x in row {
                        z += ((x as f64) - mx).exp();
                    }
                    let w = g * mask[r] as f64 / cnt;
                    let t = targets[r] as usize;
                    for j in 0..v {
                        let p = ((row[j] as f64) - mx).exp() / z;
                        let ind = if j == t { 1.0 } else { 0.0 };
                        gl[r * v + j] = (w * (p - ind)) as f32;
                    }
                }
                self.accum_grad(logits, &gl);
            }
            Op::Dropout { a, ref keep, scale } => {
                let delta: Vec<f32> = dout
                    .iter()
                    .zip(keep.iter())
                    .map(|(&g, &k)| g * k * scale)
                    .collect();
                self.accum_grad(a, &delta);
            }
        }
        Ok(())
    }

    /// Recompute every node value in f64, with selected leaves overridden.
    /// This is the forward path used by finite-difference gradient oracles.
    pub fn forward_f64(&self, overrides: &HashMap<TensorId, Vec<f64>>) -> Vec<Vec<f64>> {
        let mut vals: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let v = match &node.op {
                Op::Leaf => overrides
                    .get(&TensorId(i))
                    .cloned()
                    .unwrap_or_else(|| to_f64(&node.data)),
                Op::Detach { a } => vals[a.0].clone(),
                Op::Bin { kind, a, b } => {
                    let sa = &self.nodes[a.0].shape;
                    let sb = &self.nodes[b.0].shape;
                    let out_shape = &node.shape;
                    let stra = broadcast_strides(sa, out_shape);
                    let strb = broadcast_strides(sb, out_shape);
                    let mut out = vec![0f64; numel(out_shape)];
                    let (da, db) = (&vals[a.0], &vals[b.0]);
                    for_each_broadcast(out_shape, &stra, &strb, |o, ia, ib| {
                        out[o] = bin_apply(*kind, da[ia], db[ib]);
                    });
                    out
                }
                Op::Unary { kind, a } => vals[a.0].iter().map(|&x| unary_apply(*kind, x)).collect(),
                Op::Affine { a, mul, add } => vals[a.0].iter().map(|&x| x * mul + add).collect(),
                Op::Clamp { a, lo, hi } => vals[a.0]
                    .iter()
                    .map(|&x| x.clamp(*lo as f64, *hi as f64))
                    .collect(),
                Op::MatMul { a, b } => {
                    let sa = &self.nodes[a.0].shape;
                    let sb = &self.nodes[b.0].shape;
                    let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                    let n = sb[sb.len() - 1];
                    let batch: usize = sa[..sa.len() - 2].iter().product();
                    let mut out = vec![0f64; batch * m * n];
                    if sb.len() == 2 {
                        matmul_kernel_f64(&vals[a.0], &vals[b.0], batch * m, k, n, &mut out);
                    } else {
                        for bi in 0..batch {
                            matmul_kernel_f64(
                                &vals[a.0][bi * m * k..(bi + 1) * m * k],
                                &vals[b.0][bi * k * n..(bi + 1) * k * n],
                                m,
                                k,
                                n,
                                &mut out[bi * m * n..(bi + 1) * m * n],
                            );
                        }
                    }
                    out
                }
                Op::SwapLast2 { a } => {
                    let so = &node.shape;
                    let (r, c) = (so[so.len() - 2], so[so.len() - 1]);
                    let batch: usize = so[..so.len() - 2].iter().product();
                    let src = &vals[a.0];
                    let mut out = vec![0f64; src.len()];
                    for bi in 0..batch {
                        for x in 0..c {
                            for y in 0..r {
                                out[bi * r * c + y * c + x] = src[bi * r * c + x * r + y];
                            }
                        }
                    }
                    out
                }
                Op::SwapAxes12 { a } => {
                    let sa = &self.nodes[a.0].shape;
                    let (n0, n1, n2, n3) = (sa[0], sa[1], sa[2], sa[3]);
                    let src = &vals[a.0];
                    let mut out = vec![0f64; src.len()];
                    for i0 in 0..n0 {
                        for i1 in 0..n1 {
                            for i2 in 0..n2 {
                                let s = ((i0 * n1 + i1) * n2 + i2) * n3;
                                let d = ((i0 * n2 + i2) * n1 + i1) * n3;
                                out[d..d + n3].copy_from_slice(&src[s..s + n3]);
                            }
                        }
                    }
                    out
                }
                Op::Reshape { a } => vals[a.0].clone(),
                Op::Concat { a, b, axis } => {
                    let sa = &self.nodes[a.0].shape;
                    let sb = &self.nodes[b.0].shape;
                    let outer: usize = sa[..*axis].iter().product();
                    let inner: usize = sa[axis + 1..].iter().product();
                    let (ca, cb) = (sa[*axis] * inner, sb[*axis] * inner);
                    let mut out = Vec::with_capacity(vals[a.0].len() + vals[b.0].len());
                    for o in 0..outer {
                        out.extend_from_slice(&vals[a.0][o * ca..(o + 1) * ca]);
                        out.extend_from_slice(&vals[b.0][o * cb..(o + 1) * cb]);
                    }
                    out
                }
                Op::Softmax { a } => {
                    let d = node.shape[node.shape.len() - 1];
                    let rows = numel(&node.shape) / d;
                    let src = &vals[a.0];
                    let mut out = vec![0f64; src.len()];
                    for r in 0..rows {
                        let row = &src[r * d..(r + 1) * d];
                        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut z = 0f64;
                        for j in 0..d {
                            out[r * d + j] = (row[j] - mx).exp();
                            z += out[r * d + j];
                        }
                        for j in 0..d {
                            out[r * d + j] /= z;
                        }
                    }
                    out
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let d = node.shape[node.shape.len() - 1];
                    let rows = numel(&node.shape) / d;
                    let src = &vals[x.0];
                    let g = &vals[gain.0];
                    let b = &vals[bias.0];
                    let mut out = vec![0f64; src.len()];
                    for r in 0..rows {
                        let row = &src[r * d..(r + 1) * d];
                        let mean = row.iter().sum::<f64>() / d as f64;
                        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        for j in 0..d {
                            out[r * d + j] = (row[j] - mean) * inv * g[j] + b[j];
                        }
                    }
                    out
                }
                Op::Embedding { table, indices } => {
                    let d = self.nodes[table.0].shape[1];
                    let src = &vals[table.0];
                    let mut out = Vec::with_capacity(indices.len() * d);
                    for &ix in indices {
                        out.extend_from_slice(&src[ix as usize * d..(ix as usize + 1) * d]);
                    }
                    out
                }
                Op::MeanPoolMasked { x, mask } => {
                    let sx = &self.nodes[x.0].shape;
                    let (b, t, d) = (sx[0], sx[1], sx[2]);
                    let dx = &vals[x.0];
                    let dm = &vals[mask.0];
                    let mut out = vec![0f64; b * d];
                    for bi in 0..b {
                        let mut cnt = 0f64;
                        for ti in 0..t {
                            cnt += dm[bi * t + ti];
                        }
                        for ti in 0..t {
                            let w = dm[bi * t + ti];
                            if w == 0.0 {
                                continue;
                            }
                            for j in 0..d {
                                out[bi * d + j] += w * dx[(bi * t + ti) * d + j] / cnt;
                            }
                        }
                    }
                    out
                }
                Op::MaskedMean { x, mask } => {
                    let dx = &vals[x.0];
                    let dm = &vals[mask.0];
                    let num: f64 = dx.iter().zip(dm.iter()).map(|(&a, &m)| a * m).sum();
                    let den: f64 = dm.iter().sum();
                    vec![num / den]
                }
                Op::SumAll { a } => vec![vals[a.0].iter().sum()],
                Op::MaskedCe { logits, targets, mask } => {
                    let v = node_vocab(&self.nodes[logits.0].shape);
                    let rows = vals[logits.0].len() / v;
                    let cnt: f64 = mask.iter().map(|&m| m as f64).sum();
                    let mut nll = 0f64;
                    for r in 0..rows {
                        if mask[r] == 0.0 {
                            continue;
                        }
                        let row = &vals[logits.0][r * v..(r + 1) * v];
                        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = row.iter().map(|&x| (x - mx).exp()).sum();
                        nll += mask[r] as f64 * (mx + z.ln() - row[targets[r] as usize]);
                    }
                    vec![nll / cnt]
                }
                Op::Dropout { a, keep, scale } => vals[a.0]
                    .iter()
                    .zip(keep.iter())
                    .map(|(&x, &k)| x * k as f64 * *scale as f64)
                    .collect(),
            };
            vals.push(v);
        }
        vals
    }
}

fn node_vocab(shape: &[usize]) -> usize {
    shape[shape.len() - 1]
}

fn op_inputs(op: &Op) -> Vec<TensorId> {
    match op {
        Op::Leaf => vec![],
        // detach intentionally hides its source from reachability
        Op::Detach { .. } => vec![],
        Op::Bin { a, b, .. } | Op::MatMul { a, b } | Op::Concat { a, b, .. } => vec![*a, *b],
        Op::Unary { a, .. }
        | Op::Affine { a, .. }
        | Op::Clamp { a, .. }
        | Op::SwapLast2 { a }
        | Op::SwapAxes12 { a }
        | Op::Reshape { a }
        | Op::Softmax { a }
        | Op::SumAll { a }
        | Op::Dropout { a, .. } => vec![*a],
        Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
        Op::Embedding { table, .. } => vec![*table],
        Op::MeanPoolMasked { x, mask } | Op::MaskedMean { x, mask } => vec![*x, *mask],
        Op::MaskedCe { logits, .. } => vec![*logits],
    }
}
