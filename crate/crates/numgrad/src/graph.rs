use std::sync::Arc;

use crate::array::Array;
use crate::error::{Error, Result};
use crate::scan::{scan_dims, scan_forward, ScanInputs};
use crate::shape::{broadcast_map, broadcast_shape, numel, permute_map};
use crate::{sigmoid, silu, softplus};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Boolean `(rows, cols)` attention mask; `true` marks an attendable entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Arc<[bool]>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(Error::InvalidShape {
                shape: vec![rows, cols],
                len: allowed.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            allowed: allowed.into(),
        })
    }

    /// Lower-triangular mask: row `i` may attend to columns `0..=i`.
    pub fn causal(n: usize) -> Self {
        let allowed = (0..n * n).map(|k| k % n <= k / n).collect::<Vec<_>>();
        Self {
            rows: n,
            cols: n,
            allowed: allowed.into(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allows(&self, row: usize, col: usize) -> bool {
        self.allowed[row * self.cols + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Unary {
    Neg,
    Exp,
    Log,
    Softplus,
    Sigmoid,
    Silu,
    Tanh,
    Relu,
    Square,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Softplus => "softplus",
            Unary::Sigmoid => "sigmoid",
            Unary::Silu => "silu",
            Unary::Tanh => "tanh",
            Unary::Relu => "relu",
            Unary::Square => "square",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Softplus => softplus(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Silu => silu(x),
            Unary::Tanh => x.tanh(),
            Unary::Relu => x.max(0.0),
            Unary::Square => x * x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Softmax { x: Var },
    CausalConv { x: Var, w: Var, b: Var },
    RmsNorm { x: Var, eps: f64 },
    LayerNorm { x: Var, eps: f64 },
    Reshape(Var),
    Permute { x: Var, axes: Vec<usize> },
    Slice { x: Var, axis: usize, start: usize },
    Concat { parts: Vec<Var>, axis: usize },
    BroadcastTo(Var),
    Sum(Var),
    Mean(Var),
    SumAxis { x: Var, axis: usize },
    SsmScan { inputs: [Var; 6], states: Vec<f64> },
}

pub(crate) struct Node {
    pub value: Array,
    pub op: Op,
    pub requires_grad: bool,
}

/// Define-by-run computation record. Build a fresh graph for every forward
/// pass; nodes are appended in evaluation order, so the record is always
/// topologically sorted.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, op: Op, value: Array, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable input.
    pub fn param(&mut self, value: Array) -> Result<Var> {
        self.push("param", Op::Leaf, value, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Array) -> Result<Var> {
        self.push("constant", Op::Leaf, value, false)
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| kind.apply(v));
        let rg = self.any_grad(&[x]);
        self.push(kind.name(), Op::Unary(kind, x), value, rg)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Neg, x)
    }
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Softplus, x)
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Silu, x)
    }
    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }
    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Square, x)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(kind.name(), va.shape(), vb.shape())?;
        let ma = broadcast_map(&out_shape, va.shape());
        let mb = broadcast_map(&out_shape, vb.shape());
        let n = numel(&out_shape);
        let (da, db) = (va.data(), vb.data());
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let data: Vec<f64> = (0..n)
            .map(|i| {
                let x = da[ma.as_ref().map_or(i, |m| m[i])];
                let y = db[mb.as_ref().map_or(i, |m| m[i])];
                f(x, y)
            })
            .collect();
        let rg = self.any_grad(&[a, b]);
        self.push(
            kind.name(),
            Op::Binary(kind, a, b),
            Array::from_parts(out_shape, data),
            rg,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.any_grad(&[x]);
        self.push("scale", Op::Scale(x, factor), value, rg)
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v + offset);
        let rg = self.any_grad(&[x]);
        self.push("add_scalar", Op::AddScalar(x), value, rg)
    }

    /// `(..., k) x (k, n) -> (..., n)`: every leading index is a row.
    pub fn matmul(&mut self, a: Var, w: Var) -> Result<Var> {
        let (va, vw) = (self.value(a), self.value(w));
        let (sa, sw) = (va.shape(), vw.shape());
        if sa.is_empty() || sw.len() != 2 || sa[sa.len() - 1] != sw[0] {
            return Err(mismatch("matmul", sa, sw));
        }
        let (k, n) = (sw[0], sw[1]);
        let rows = va.len() / k;
        let mut out = vec![0.0; rows * n];
        mm_acc(va.data(), vw.data(), &mut out, rows, k, n);
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = n;
        let rg = self.any_grad(&[a, w]);
        self.push("matmul", Op::MatMul(a, w), Array::from_parts(shape, out), rg)
    }

    /// Batched product `(B, m, k) x (B, k, n)`, or `(B, m, k) x (B, n, k)^T`
    /// when `trans_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        let ok = sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0];
        let (batch, m, k) = if ok { (sa[0], sa[1], sa[2]) } else { (0, 0, 0) };
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if !ok || kb != k {
            return Err(mismatch("bmm", sa, sb));
        }
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let ab = &va.data()[bi * m * k..(bi + 1) * m * k];
            let bb = &vb.data()[bi * k * n..(bi + 1) * k * n];
            let ob = &mut out[bi * m * n..(bi + 1) * m * n];
            if trans_b {
                mm_bt_acc(ab, bb, ob, m, k, n);
            } else {
                mm_acc(ab, bb, ob, m, k, n);
            }
        }
        let rg = self.any_grad(&[a, b]);
        self.push(
            "bmm",
            Op::BatchMatMul { a, b, trans_b },
            Array::from_parts(vec![batch, m, n], out),
            rg,
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, None)
    }

    /// Softmax over the last axis restricted to entries the mask allows.
    /// `x` must end in `(mask.rows, mask.cols)`; the mask is shared by every
    /// leading index. Fully-masked rows produce all zeros.
    pub fn masked_softmax(&mut self, x: Var, mask: &Mask) -> Result<Var> {
        let s = self.shape(x);
        if s.len() < 2 || s[s.len() - 2] != mask.rows || s[s.len() - 1] != mask.cols {
            return Err(mismatch("masked_softmax", s, &[mask.rows, mask.cols]));
        }
        self.softmax_impl(x, Some(mask.clone()))
    }

    fn softmax_impl(&mut self, x: Var, mask: Option<Mask>) -> Result<Var> {
        let vx = self.value(x);
        let s = vx.shape();
        if s.is_empty() {
            return Err(Error::InvalidAxis {
                op: "softmax",
                axis: 0,
                rank: 0,
            });
        }
        let cols = s[s.len() - 1];
        let rows = vx.len() / cols;
        let mut out = vec![0.0; vx.len()];
        for r in 0..rows {
            let xr = &vx.data()[r * cols..(r + 1) * cols];
            let or = &mut out[r * cols..(r + 1) * cols];
            let allowed = |j: usize| match &mask {
                Some(m) => m.allows(r % m.rows, j),
                None => true,
            };
            let mut mx = f64::NEG_INFINITY;
            for (j, &v) in xr.iter().enumerate() {
                if allowed(j) && v > mx {
                    mx = v;
                }
            }
            if mx == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for (j, &v) in xr.iter().enumerate() {
                if allowed(j) {
                    let e = (v - mx).exp();
                    or[j] = e;
                    z += e;
                }
            }
            or.iter_mut().for_each(|v| *v /= z);
        }
        let rg = self.any_grad(&[x]);
        let name = if mask.is_some() { "masked_softmax" } else { "softmax" };
        self.push(
            name,
            Op::Softmax { x },
            Array::from_parts(s.to_vec(), out),
            rg,
        )
    }

    /// Depthwise causal 1-D convolution over `(S, P, C)` with kernel `(C, K)`
    /// and bias `(C)`: `y[t] = b + sum_k w[k] * x[t - K + 1 + k]`, zero
    /// padded on the left.
    pub fn causal_conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let (sx, sw) = (vx.shape(), vw.shape());
        if sx.len() != 3 || sw.len() != 2 || sw[0] != sx[2] {
            return Err(mismatch("causal_conv1d", sx, sw));
        }
        if vb.shape() != [sx[2]] {
            return Err(mismatch("causal_conv1d", sx, vb.shape()));
        }
        let (seqs, steps, ch) = (sx[0], sx[1], sx[2]);
        let kw = sw[1];
        let (xd, wd, bd) = (vx.data(), vw.data(), vb.data());
        let mut out = vec![0.0; vx.len()];
        for s in 0..seqs {
            for t in 0..steps {
                for c in 0..ch {
                    let mut acc = bd[c];
                    for k in 0..kw {
                        let src = t as isize - (kw - 1) as isize + k as isize;
                        if src >= 0 {
                            acc += wd[c * kw + k] * xd[(s * steps + src as usize) * ch + c];
                        }
                    }
                    out[(s * steps + t) * ch + c] = acc;
                }
            }
        }
        let rg = self.any_grad(&[x, w, b]);
        self.push(
            "causal_conv1d",
            Op::CausalConv { x, w, b },
            Array::from_parts(sx.to_vec(), out),
            rg,
        )
    }

    /// `x / sqrt(mean(x^2) + eps)` over the last axis.
    pub fn rms_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let vx = self.value(x);
        let cols = *vx.shape().last().ok_or(Error::InvalidAxis {
            op: "rms_norm",
            axis: 0,
            rank: 0,
        })?;
        let mut out = vx.data().to_vec();
        for row in out.chunks_mut(cols) {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / cols as f64;
            let r = (ms + eps).sqrt();
            row.iter_mut().for_each(|v| *v /= r);
        }
        let shape = vx.shape().to_vec();
        let rg = self.any_grad(&[x]);
        self.push("rms_norm", Op::RmsNorm { x, eps }, Array::from_parts(shape, out), rg)
    }

    /// `(x - mean) / sqrt(var + eps)` over the last axis.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let vx = self.value(x);
        let cols = *vx.shape().last().ok_or(Error::InvalidAxis {
            op: "layer_norm",
            axis: 0,
            rank: 0,
        })?;
        let mut out = vx.data().to_vec();
        for row in out.chunks_mut(cols) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let sd = (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        }
        let shape = vx.shape().to_vec();
        let rg = self.any_grad(&[x]);
        self.push("layer_norm", Op::LayerNorm { x, eps }, Array::from_parts(shape, out), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        if numel(shape) != vx.len() || shape.contains(&0) {
            return Err(mismatch("reshape", vx.shape(), shape));
        }
        let value = Array::from_parts(shape.to_vec(), vx.data().to_vec());
        let rg = self.any_grad(&[x]);
        self.push("reshape", Op::Reshape(x), value, rg)
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let rank = vx.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank
            || axes
                .iter()
                .any(|&a| a >= rank || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::Invalid(format!(
                "permute: axes {axes:?} invalid for rank {rank}"
            )));
        }
        let map = permute_map(vx.shape(), axes);
        let mut out = vec![0.0; vx.len()];
        for (i, &dst) in map.iter().enumerate() {
            out[dst] = vx.data()[i];
        }
        let shape = axes.iter().map(|&a| vx.shape()[a]).collect();
        let rg = self.any_grad(&[x]);
        self.push(
            "permute",
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            Array::from_parts(shape, out),
            rg,
        )
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        let s = vx.shape();
        if axis >= s.len() {
            return Err(Error::InvalidAxis {
                op: "slice",
                axis,
                rank: s.len(),
            });
        }
        if len == 0 || start + len > s[axis] {
            return Err(Error::Invalid(format!(
                "slice: range {start}..{} out of bounds for axis {axis} of {s:?}",
                start + len
            )));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            out.extend_from_slice(&vx.data()[base..base + len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        let rg = self.any_grad(&[x]);
        self.push(
            "slice",
            Op::Slice { x, axis, start },
            Array::from_parts(shape, out),
            rg,
        )
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("concat: no inputs".into()))?;
        let s0 = self.shape(*first).to_vec();
        if axis >= s0.len() {
            return Err(Error::InvalidAxis {
                op: "concat",
                axis,
                rank: s0.len(),
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == s0.len()
                && s.iter()
                    .zip(&s0)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", &s0, s));
            }
            total += s[axis];
        }
        let outer: usize = s0[..axis].iter().product();
        let inner: usize = s0[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let vp = self.value(p);
                let w = vp.shape()[axis] * inner;
                out.extend_from_slice(&vp.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        let rg = self.any_grad(parts);
        self.push(
            "concat",
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            Array::from_parts(shape, out),
            rg,
        )
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let out = broadcast_shape("broadcast_to", vx.shape(), shape)?;
        if out != shape {
            return Err(mismatch("broadcast_to", vx.shape(), shape));
        }
        let data = match broadcast_map(shape, vx.shape()) {
            None => vx.data().to_vec(),
            Some(m) => m.iter().map(|&j| vx.data()[j]).collect(),
        };
        let rg = self.any_grad(&[x]);
        self.push(
            "broadcast_to",
            Op::BroadcastTo(x),
            Array::from_parts(shape.to_vec(), data),
            rg,
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).data().iter().sum::<f64>();
        let rg = self.any_grad(&[x]);
        self.push("sum", Op::Sum(x), Array::scalar(v), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let v = vx.data().iter().sum::<f64>() / vx.len() as f64;
        let rg = self.any_grad(&[x]);
        self.push("mean", Op::Mean(x), Array::scalar(v), rg)
    }

    /// Sums out `axis` (the axis is removed).
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let vx = self.value(x);
        let s = vx.shape();
        if axis >= s.len() {
            return Err(Error::InvalidAxis {
                op: "sum_axis",
                axis,
                rank: s.len(),
            });
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..s[axis] {
                let base = (o * s[axis] + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += vx.data()[base + i];
                }
            }
        }
        let mut shape = s.to_vec();
        shape.remove(axis);
        let rg = self.any_grad(&[x]);
        self.push(
            "sum_axis",
            Op::SumAxis { x, axis },
            Array::from_parts(shape, out),
            rg,
        )
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self.shape(x).get(axis).ok_or(Error::InvalidAxis {
            op: "mean_axis",
            axis,
            rank: self.shape(x).len(),
        })?;
        let s = self.sum_axis(x, axis)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Selective state-space scan; see [`crate::ssm_scan`] for the recurrence.
    pub fn ssm_scan(
        &mut self,
        u: Var,
        delta: Var,
        b: Var,
        c: Var,
        a: Var,
        d: Var,
    ) -> Result<Var> {
        let inputs = ScanInputs {
            u: self.value(u),
            delta: self.value(delta),
            b: self.value(b),
            c: self.value(c),
            a: self.value(a),
            d: self.value(d),
        };
        let dims = scan_dims(&inputs)?;
        let (y, states) = scan_forward(&inputs, dims);
        let shape = inputs.u.shape().to_vec();
        let rg = self.any_grad(&[u, delta, b, c, a, d]);
        self.push(
            "ssm_scan",
            Op::SsmScan {
                inputs: [u, delta, b, c, a, d],
                states,
            },
            Array::from_parts(shape, y),
            rg,
        )
    }
}

/// `out += a (m x k) * b (k x n)`.
pub(crate) fn mm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a (m x k) * b^T` where `b` is `(n x k)`.
pub(crate) fn mm_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out += a^T * b` where `a` is `(m x k)` and `b` is `(m x n)`; `out` is `(k x n)`.
pub(crate) fn mm_at_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}
