use numgrad::{Array, Graph, Mask, Var};

use super::params::Bound;
use super::ModelConfig;
use crate::apecg::{encode_graph, expected_state, rollout_graph};
use crate::data::{NormStats, StateWindow, D_IN, DT};
use crate::error::{Error, Result};

/// Inputs of a forward pass over `B` windows with the same `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub b: usize,
    pub n: usize,
    pub p: usize,
    pub f: usize,
    /// `(B, N, P, 3)`, normalised.
    pub history: Array,
    /// `(B, N)` state at the anchor step.
    pub v0: Array,
    pub s0: Array,
    pub dv0: Array,
    /// `(B, N)` expected state.
    pub v_star: Array,
    pub s_star: Array,
    /// `(B, F)`.
    pub lead_future: Array,
    /// `(B, N, F)`.
    pub target_v: Array,
    pub target_s: Array,
}

impl Batch {
    pub fn from_windows(windows: &[&StateWindow], norm: &NormStats) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| Error::Invalid("empty batch".into()))?;
        let (n, p, f) = (first.n, first.p, first.f);
        if n == 0 {
            return Err(Error::Invalid("windows need at least one follower".into()));
        }
        if windows.iter().any(|w| w.n != n || w.p != p || w.f != f) {
            return Err(Error::Invalid("a batch must share N, P and F".into()));
        }
        let b = windows.len();
        let mut history = Vec::with_capacity(b * n * p * D_IN);
        let (mut v0, mut s0, mut dv0, mut vs, mut ss) = (vec![], vec![], vec![], vec![], vec![]);
        let mut lead = Vec::with_capacity(b * f);
        let (mut tv, mut ts) = (Vec::with_capacity(b * n * f), Vec::with_capacity(b * n * f));
        for w in windows {
            history.extend(norm.normalize(&w.history));
            let x = expected_state(&w.history, n, p);
            for i in 0..n {
                let [v, s, dv] = w.current(i);
                v0.push(v);
                s0.push(s);
                dv0.push(dv);
                for k in 0..f {
                    tv.push(w.target_v(i, k));
                    ts.push(w.target_s(i, k));
                }
            }
            vs.extend(x.v_star);
            ss.extend(x.s_star);
            lead.extend_from_slice(&w.lead_future);
        }
        Ok(Self {
            b,
            n,
            p,
            f,
            history: Array::new([b, n, p, D_IN], history)?,
            v0: Array::new([b, n], v0)?,
            s0: Array::new([b, n], s0)?,
            dv0: Array::new([b, n], dv0)?,
            v_star: Array::new([b, n], vs)?,
            s_star: Array::new([b, n], ss)?,
            lead_future: Array::new([b, f], lead)?,
            target_v: Array::new([b, n, f], tv)?,
            target_s: Array::new([b, n, f], ts)?,
        })
    }
}

/// Graph nodes produced by [`forward`].
#[derive(Debug, Clone)]
pub struct Forward {
    /// `(B, N, F)`.
    pub v: Var,
    pub s: Var,
    /// `(B, N, F/m, 3)` encoded parameters and their raw pre-images.
    pub theta: Var,
    pub raw: Var,
    /// `(B*N, d_m)`.
    pub mu: Var,
    pub logvar: Var,
    /// `(B*N, P, d_m)`.
    pub h_tfl: Var,
    /// `(B, N, d_m)`.
    pub h_pfl: Var,
    /// Attention weights, PFL layers first, each `(groups*heads, Lq, Lk)`.
    pub attention: Vec<Var>,
}

fn linear(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{name}.w"))?;
    let b = p.get(&format!("{name}.b"))?;
    let y = g.matmul(x, w)?;
    Ok(g.add(y, b)?)
}

fn affine_norm(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let y = g.layer_norm(x, 1e-5)?;
    let y = g.mul(y, p.get(&format!("{name}.g"))?)?;
    Ok(g.add(y, p.get(&format!("{name}.b"))?)?)
}

/// Transformer sinusoidal encoding of `positions`, `(len, d)`.
pub fn sinusoidal(positions: impl IntoIterator<Item = usize>, d: usize) -> Array {
    let rows: Vec<f64> = positions
        .into_iter()
        .flat_map(|pos| {
            (0..d).map(move |c| {
                let freq = 10000f64.powf(-((c / 2 * 2) as f64) / d as f64);
                let x = pos as f64 * freq;
                if c % 2 == 0 {
                    x.sin()
                } else {
                    x.cos()
                }
            })
        })
        .collect();
    let len = rows.len() / d;
    Array::new([len, d], rows).expect("encoding shape")
}

/// Linear lift `(.., 3) -> (.., d_m)` of normalised features.
pub fn embed_inputs(g: &mut Graph, p: &Bound, history: Var) -> Result<Var> {
    if g.value(history).data().iter().any(|x| x.abs() > 100.0) {
        log::warn!("embedding input exceeds 100 in magnitude; features may be unnormalised");
    }
    linear(g, p, "embed", history)
}

/// One selective state-space block with a residual connection, applied to
/// `(S, P, d_m)`.
pub fn tfl_forward(g: &mut Graph, p: &Bound, cfg: &ModelConfig, x: Var) -> Result<Var> {
    if cfg.disable_tfl {
        return Ok(x);
    }
    let xn = g.rms_norm(x, 1e-5)?;
    let xn = g.mul(xn, p.get("tfl.norm.g")?)?;
    let u = g.matmul(xn, p.get("tfl.in_x.w")?)?;
    let u = g.causal_conv1d(u, p.get("tfl.conv.w")?, p.get("tfl.conv.b")?)?;
    let u = g.silu(u)?;
    let low = g.matmul(u, p.get("tfl.x_dt.w")?)?;
    let delta = linear(g, p, "tfl.dt", low)?;
    let delta = g.softplus(delta)?;
    let bm = g.matmul(u, p.get("tfl.x_b.w")?)?;
    let cm = g.matmul(u, p.get("tfl.x_c.w")?)?;
    let a = g.exp(p.get("tfl.a_log")?)?;
    let a = g.neg(a)?;
    let y = g.ssm_scan(u, delta, bm, cm, a, p.get("tfl.d")?)?;
    let z = g.matmul(xn, p.get("tfl.in_z.w")?)?;
    let z = g.silu(z)?;
    let gated = g.mul(y, z)?;
    let out = g.matmul(gated, p.get("tfl.out.w")?)?;
    Ok(g.add(out, x)?)
}

/// Variational encoder on `(S, d_m)`. Returns `(mu, logvar, h)` with
/// `h = mu + exp(logvar / 2) * noise`, or `h = mu` without noise.
pub fn ful_forward(
    g: &mut Graph,
    p: &Bound,
    cfg: &ModelConfig,
    h_last: Var,
    noise: Option<&Array>,
) -> Result<(Var, Var, Var)> {
    let mut h = h_last;
    for i in 0..cfg.ve_layers - 1 {
        h = linear(g, p, &format!("ful.hidden{i}"), h)?;
        h = g.relu(h)?;
    }
    let mu = linear(g, p, "ful.mu", h)?;
    let logvar = linear(g, p, "ful.logvar", h)?;
    let out = match noise {
        None => mu,
        Some(z) => {
            if z.shape() != g.shape(mu) {
                return Err(Error::Invalid(format!(
                    "noise shape {:?} does not match latent {:?}",
                    z.shape(),
                    g.shape(mu)
                )));
            }
            let z = g.constant(z.clone())?;
            let half = g.scale(logvar, 0.5)?;
            let sd = g.exp(half)?;
            let eps = g.mul(sd, z)?;
            g.add(mu, eps)?
        }
    };
    Ok((mu, logvar, out))
}

/// Multi-head attention of `q_in (G, Lq, d)` over `kv_in (G, Lk, d)`.
fn attention(
    g: &mut Graph,
    p: &Bound,
    name: &str,
    heads: usize,
    q_in: Var,
    kv_in: Var,
    mask: Option<&Mask>,
    weights: &mut Vec<Var>,
) -> Result<Var> {
    let (groups, lq, d) = match g.shape(q_in) {
        [a, b, c] => (*a, *b, *c),
        s => return Err(Error::Invalid(format!("attention query must be rank 3, got {s:?}"))),
    };
    let lk = g.shape(kv_in)[1];
    let dh = d / heads;
    let split = |g: &mut Graph, x: Var, len: usize| -> Result<Var> {
        let x = g.reshape(x, &[groups, len, heads, dh])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        Ok(g.reshape(x, &[groups * heads, len, dh])?)
    };
    let q = linear(g, p, &format!("{name}.q"), q_in)?;
    let k = linear(g, p, &format!("{name}.k"), kv_in)?;
    let v = linear(g, p, &format!("{name}.v"), kv_in)?;
    let (q, k, v) = (split(g, q, lq)?, split(g, k, lk)?, split(g, v, lk)?);
    let scores = g.bmm(q, k, true)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
    let w = match mask {
        Some(m) => g.masked_softmax(scores, m)?,
        None => g.softmax(scores)?,
    };
    weights.push(w);
    let o = g.bmm(w, v, false)?;
    let o = g.reshape(o, &[groups, heads, lq, dh])?;
    let o = g.permute(o, &[0, 2, 1, 3])?;
    let o = g.reshape(o, &[groups, lq, d])?;
    linear(g, p, &format!("{name}.o"), o)
}

/// Post-norm block: attention + residual + norm, feed-forward + residual +
/// norm.
#[allow(clippy::too_many_arguments)]
fn block(
    g: &mut Graph,
    p: &Bound,
    name: &str,
    heads: usize,
    x: Var,
    kv: Option<Var>,
    mask: Option<&Mask>,
    weights: &mut Vec<Var>,
) -> Result<Var> {
    let att = attention(g, p, &format!("{name}.attn"), heads, x, kv.unwrap_or(x), mask, weights)?;
    let x = g.add(x, att)?;
    let x = affine_norm(g, p, &format!("{name}.ln1"), x)?;
    let h = linear(g, p, &format!("{name}.ffn1"), x)?;
    let h = g.relu(h)?;
    let h = linear(g, p, &format!("{name}.ffn2"), h)?;
    let x = g.add(x, h)?;
    affine_norm(g, p, &format!("{name}.ln2"), x)
}

/// Vehicle-level self-attention over `(B, N, d_m)`; vehicle `n` attends to
/// vehicles `1..=n` only.
pub fn pfl_forward(g: &mut Graph, p: &Bound, cfg: &ModelConfig, h_ful: Var, weights: &mut Vec<Var>) -> Result<Var> {
    if cfg.disable_pfl {
        return Ok(h_ful);
    }
    let n = g.shape(h_ful)[1];
    let pe = g.constant(sinusoidal(1..=n, cfg.d_m))?;
    let mut x = g.add(h_ful, pe)?;
    let mask = Mask::causal(n);
    for l in 0..cfg.attn_layers {
        x = block(g, p, &format!("pfl.{l}"), cfg.attn_heads, x, None, Some(&mask), weights)?;
    }
    Ok(x)
}

/// Non-autoregressive decoder: `(S, d_m)` vehicle features and `(S, P, d_m)`
/// history features to `(S, F/m, 3)` raw parameters.
pub fn narp_decode(
    g: &mut Graph,
    p: &Bound,
    cfg: &ModelConfig,
    h_pfl: Var,
    h_tfl: Var,
    weights: &mut Vec<Var>,
) -> Result<Var> {
    let s = g.shape(h_pfl)[0];
    let steps = cfg.param_steps();
    let q = g.reshape(h_pfl, &[s, 1, cfg.d_m])?;
    let q = g.broadcast_to(q, &[s, steps, cfg.d_m])?;
    let te = g.constant(sinusoidal(0..steps, cfg.d_m))?;
    let mut x = g.add(q, te)?;
    for l in 0..cfg.attn_layers {
        x = block(g, p, &format!("dec.{l}"), cfg.attn_heads, x, Some(h_tfl), None, weights)?;
    }
    linear(g, p, "head", x)
}

/// Full forward pass: embedding, sequence block, variational encoder,
/// vehicle attention, decoder, parameter encoding and rollout.
pub fn forward(g: &mut Graph, p: &Bound, cfg: &ModelConfig, batch: &Batch, noise: Option<&Array>) -> Result<Forward> {
    let (b, n, pp) = (batch.b, batch.n, batch.p);
    if pp != cfg.p || batch.f != cfg.f {
        return Err(Error::Invalid(format!(
            "batch has P={}, F={} but the model expects P={}, F={}",
            pp, batch.f, cfg.p, cfg.f
        )));
    }
    let s = b * n;
    let d = cfg.d_m;
    let hist = g.constant(batch.history.reshape([s, pp, D_IN])?)?;
    let emb = embed_inputs(g, p, hist)?;
    let h_tfl = tfl_forward(g, p, cfg, emb)?;
    let last = g.slice(h_tfl, 1, pp - 1, 1)?;
    let last = g.reshape(last, &[s, d])?;
    let (mu, logvar, h_ful) = ful_forward(g, p, cfg, last, noise)?;
    let mut attention = Vec::new();
    let tokens = g.reshape(h_ful, &[b, n, d])?;
    let h_pfl = pfl_forward(g, p, cfg, tokens, &mut attention)?;
    let flat = g.reshape(h_pfl, &[s, d])?;
    let raw = narp_decode(g, p, cfg, flat, h_tfl, &mut attention)?;
    let raw = g.reshape(raw, &[b, n, cfg.param_steps(), 3])?;
    let theta = encode_graph(g, raw)?;
    let c = |g: &mut Graph, a: &Array| g.constant(a.clone());
    let (v0, s0, dv0) = (c(g, &batch.v0)?, c(g, &batch.s0)?, c(g, &batch.dv0)?);
    let (vs, ss, lead) = (c(g, &batch.v_star)?, c(g, &batch.s_star)?, c(g, &batch.lead_future)?);
    let roll = rollout_graph(g, v0, s0, dv0, lead, theta, vs, ss, cfg.m, DT)?;
    Ok(Forward {
        v: roll.v,
        s: roll.s,
        theta,
        raw,
        mu,
        logvar,
        h_tfl,
        h_pfl,
        attention,
    })
}
