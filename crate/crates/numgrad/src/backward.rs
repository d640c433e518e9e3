use crate::array::Array;
use crate::error::{Error, Result};
use crate::graph::{mm_acc, mm_at_acc, mm_bt_acc, Binary, Graph, Op, Unary, Var};
use crate::scan::{scan_backward, scan_dims, ScanInputs};
use crate::shape::{broadcast_map, permute_map, reduce_to};
use crate::sigmoid;

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    /// Gradient of the seeded output with respect to `v`; `None` when `v`
    /// does not influence the output or does not require gradients.
    pub fn get(&self, v: Var) -> Option<&Array> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`], but zeros when no gradient flowed.
    pub fn get_or_zeros(&self, g: &Graph, v: Var) -> Array {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Array::zeros(g.shape(v).to_vec()))
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
        None => *slot = Some(delta),
    }
}

impl Graph {
    /// Reverse pass from a scalar output with seed 1.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let shape = self.shape(output);
        if self.value(output).len() != 1 {
            return Err(Error::NonScalarOutput(shape.to_vec()));
        }
        self.backward_with_seed(output, &Array::from_parts(shape.to_vec(), vec![1.0]))
    }

    /// Reverse pass with an explicit output cotangent.
    pub fn backward_with_seed(&self, output: Var, seed: &Array) -> Result<Gradients> {
        if seed.shape() != self.shape(output) {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: self.shape(output).to_vec(),
                rhs: seed.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.data().to_vec());
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| self.nodes[i].requires_grad)
                    .map(|d| Array::from_parts(self.nodes[i].value.shape().to_vec(), d))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let send = |v: Var, delta: Vec<f64>, grads: &mut [Option<Vec<f64>>]| {
            if self.nodes[v.0].requires_grad {
                accumulate(&mut grads[v.0], delta);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Unary(kind, x) => {
                let xv = self.value(*x).data();
                let y = out.data();
                let d: Vec<f64> = match kind {
                    Unary::Neg => g.iter().map(|v| -v).collect(),
                    Unary::Exp => g.iter().zip(y).map(|(g, y)| g * y).collect(),
                    Unary::Log => g.iter().zip(xv).map(|(g, x)| g / x).collect(),
                    Unary::Softplus => g.iter().zip(xv).map(|(g, &x)| g * sigmoid(x)).collect(),
                    Unary::Sigmoid => g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
                    Unary::Silu => g
                        .iter()
                        .zip(xv)
                        .map(|(g, &x)| {
                            let s = sigmoid(x);
                            g * s * (1.0 + x * (1.0 - s))
                        })
                        .collect(),
                    Unary::Tanh => g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    Unary::Relu => g
                        .iter()
                        .zip(xv)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                    Unary::Square => g.iter().zip(xv).map(|(g, x)| 2.0 * g * x).collect(),
                };
                send(*x, d, grads);
            }
            Op::Binary(kind, a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let os = out.shape();
                let ma = broadcast_map(os, va.shape());
                let mb = broadcast_map(os, vb.shape());
                let av = |i: usize| va.data()[ma.as_ref().map_or(i, |m| m[i])];
                let bv = |i: usize| vb.data()[mb.as_ref().map_or(i, |m| m[i])];
                let (ga, gb): (Vec<f64>, Vec<f64>) = match kind {
                    Binary::Add => (g.to_vec(), g.to_vec()),
                    Binary::Sub => (g.to_vec(), g.iter().map(|v| -v).collect()),
                    Binary::Mul => (
                        g.iter().enumerate().map(|(i, g)| g * bv(i)).collect(),
                        g.iter().enumerate().map(|(i, g)| g * av(i)).collect(),
                    ),
                    Binary::Div => (
                        g.iter().enumerate().map(|(i, g)| g / bv(i)).collect(),
                        g.iter()
                            .enumerate()
                            .map(|(i, g)| -g * av(i) / (bv(i) * bv(i)))
                            .collect(),
                    ),
                };
                send(*a, reduce_to(&ga, os, va.shape()), grads);
                send(*b, reduce_to(&gb, os, vb.shape()), grads);
            }
            Op::Scale(x, f) => send(*x, g.iter().map(|v| v * f).collect(), grads),
            Op::AddScalar(x) | Op::Reshape(x) => send(*x, g.to_vec(), grads),
            Op::MatMul(a, w) => {
                let (va, vw) = (self.value(*a), self.value(*w));
                let (k, n) = (vw.shape()[0], vw.shape()[1]);
                let rows = va.len() / k;
                if self.requires_grad(*a) {
                    let mut ga = vec![0.0; va.len()];
                    mm_bt_acc(g, vw.data(), &mut ga, rows, n, k);
                    send(*a, ga, grads);
                }
                if self.requires_grad(*w) {
                    let mut gw = vec![0.0; vw.len()];
                    mm_at_acc(va.data(), g, &mut gw, rows, k, n);
                    send(*w, gw, grads);
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (batch, m, k) = (va.shape()[0], va.shape()[1], va.shape()[2]);
                let n = out.shape()[2];
                let mut ga = vec![0.0; va.len()];
                let mut gb = vec![0.0; vb.len()];
                for bi in 0..batch {
                    let ab = &va.data()[bi * m * k..(bi + 1) * m * k];
                    let bb = &vb.data()[bi * k * n..(bi + 1) * k * n];
                    let gob = &g[bi * m * n..(bi + 1) * m * n];
                    let gab = &mut ga[bi * m * k..(bi + 1) * m * k];
                    let gbb = &mut gb[bi * k * n..(bi + 1) * k * n];
                    if *trans_b {
                        // out = a b^T, b: (n, k)
                        mm_acc(gob, bb, gab, m, n, k);
                        mm_at_acc(gob, ab, gbb, m, n, k);
                    } else {
                        mm_bt_acc(gob, bb, gab, m, n, k);
                        mm_at_acc(ab, gob, gbb, m, k, n);
                    }
                }
                send(*a, ga, grads);
                send(*b, gb, grads);
            }
            Op::Softmax { x } => {
                let y = out.data();
                let cols = *out.shape().last().unwrap();
                let mut d = vec![0.0; y.len()];
                for ((dr, yr), gr) in d.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ((dv, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *dv = yv * (gv - dot);
                    }
                }
                send(*x, d, grads);
            }
            Op::CausalConv { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (seqs, steps, ch) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
                let kw = vw.shape()[1];
                let (xd, wd) = (vx.data(), vw.data());
                let mut gx = vec![0.0; vx.len()];
                let mut gw = vec![0.0; vw.len()];
                let mut gb = vec![0.0; ch];
                for s in 0..seqs {
                    for t in 0..steps {
                        for c in 0..ch {
                            let go = g[(s * steps + t) * ch + c];
                            gb[c] += go;
                            for k in 0..kw {
                                let src = t as isize - (kw - 1) as isize + k as isize;
                                if src >= 0 {
                                    let xi = (s * steps + src as usize) * ch + c;
                                    gx[xi] += go * wd[c * kw + k];
                                    gw[c * kw + k] += go * xd[xi];
                                }
                            }
                        }
                    }
                }
                send(*x, gx, grads);
                send(*w, gw, grads);
                send(*b, gb, grads);
            }
            Op::RmsNorm { x, eps } => {
                let vx = self.value(*x);
                let cols = *vx.shape().last().unwrap();
                let mut d = vec![0.0; vx.len()];
                for ((dr, xr), (yr, gr)) in d
                    .chunks_mut(cols)
                    .zip(vx.data().chunks(cols))
                    .zip(out.data().chunks(cols).zip(g.chunks(cols)))
                {
                    let ms = xr.iter().map(|v| v * v).sum::<f64>() / cols as f64;
                    let r = (ms + eps).sqrt();
                    let gy: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / cols as f64;
                    for ((dv, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *dv = (gv - yv * gy) / r;
                    }
                }
                send(*x, d, grads);
            }
            Op::LayerNorm { x, eps } => {
                let vx = self.value(*x);
                let cols = *vx.shape().last().unwrap();
                let mut d = vec![0.0; vx.len()];
                for ((dr, xr), (yr, gr)) in d
                    .chunks_mut(cols)
                    .zip(vx.data().chunks(cols))
                    .zip(out.data().chunks(cols).zip(g.chunks(cols)))
                {
                    let mean = xr.iter().sum::<f64>() / cols as f64;
                    let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
                    let sd = (var + eps).sqrt();
                    let gm = gr.iter().sum::<f64>() / cols as f64;
                    let gy: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / cols as f64;
                    for ((dv, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *dv = (gv - gm - yv * gy) / sd;
                    }
                }
                send(*x, d, grads);
            }
            Op::Permute { x, axes } => {
                let map = permute_map(self.shape(*x), axes);
                let d = map.iter().map(|&dst| g[dst]).collect();
                send(*x, d, grads);
            }
            Op::Slice { x, axis, start } => {
                let s = self.shape(*x);
                let len = out.shape()[*axis];
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let mut d = vec![0.0; self.value(*x).len()];
                for o in 0..outer {
                    let base = (o * s[*axis] + start) * inner;
                    d[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                send(*x, d, grads);
            }
            Op::Concat { parts, axis } => {
                let total = out.shape()[*axis];
                let s0 = out.shape();
                let outer: usize = s0[..*axis].iter().product();
                let inner: usize = s0[axis + 1..].iter().product();
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[*axis] * inner;
                    let mut d = Vec::with_capacity(outer * w);
                    for o in 0..outer {
                        let base = o * total * inner + offset;
                        d.extend_from_slice(&g[base..base + w]);
                    }
                    offset += w;
                    send(p, d, grads);
                }
            }
            Op::BroadcastTo(x) => {
                let d = reduce_to(g, out.shape(), self.shape(*x));
                send(*x, d, grads);
            }
            Op::Sum(x) => send(*x, vec![g[0]; self.value(*x).len()], grads),
            Op::Mean(x) => {
                let n = self.value(*x).len();
                send(*x, vec![g[0] / n as f64; n], grads);
            }
            Op::SumAxis { x, axis } => {
                let s = self.shape(*x);
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let mut d = vec![0.0; self.value(*x).len()];
                for o in 0..outer {
                    for a in 0..s[*axis] {
                        let base = (o * s[*axis] + a) * inner;
                        d[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                send(*x, d, grads);
            }
            Op::SsmScan { inputs, states } => {
                let [u, delta, b, c, a, d] = *inputs;
                let si = ScanInputs {
                    u: self.value(u),
                    delta: self.value(delta),
                    b: self.value(b),
                    c: self.value(c),
                    a: self.value(a),
                    d: self.value(d),
                };
                let dims = scan_dims(&si)?;
                let sg = scan_backward(&si, dims, states, g);
                send(u, sg.u, grads);
                send(delta, sg.delta, grads);
                send(b, sg.b, grads);
                send(c, sg.c, grads);
                send(a, sg.a, grads);
                send(d, sg.d, grads);
            }
        }
        Ok(())
    }
}
