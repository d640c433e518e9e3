use numgrad::{Array, Graph, Var};

use super::SIGNS;
use crate::error::{Error, Result};

/// Differentiable encoding of a `(..., 3)` raw block.
pub fn encode_graph(g: &mut Graph, raw: Var) -> Result<Var> {
    let shape = g.shape(raw).to_vec();
    if shape.last() != Some(&3) {
        return Err(Error::Invalid(format!("raw parameters must end in 3 columns, got {shape:?}")));
    }
    let sp = g.softplus(raw)?;
    let signs = g.constant(Array::new([3], SIGNS.to_vec())?)?;
    Ok(g.mul(sp, signs)?)
}

/// Predicted `(B, N, F)` speed and gap.
#[derive(Debug, Clone, Copy)]
pub struct GraphRollout {
    pub v: Var,
    pub s: Var,
}

/// Batched rollout on a graph. `v0`, `s0`, `dv0`, `v_star` and `s_star` are
/// `(B, N)`, `lead_future` is `(B, F)` and `theta` is `(B, N, F/m, 3)`.
/// Evaluates the same arithmetic, in the same order, as
/// [`super::rollout`].
#[allow(clippy::too_many_arguments)]
pub fn rollout_graph(
    g: &mut Graph,
    v0: Var,
    s0: Var,
    dv0: Var,
    lead_future: Var,
    theta: Var,
    v_star: Var,
    s_star: Var,
    m: usize,
    dt: f64,
) -> Result<GraphRollout> {
    let (b, n) = match g.shape(v0) {
        [b, n] => (*b, *n),
        other => return Err(Error::Invalid(format!("rollout state must be (B, N), got {other:?}"))),
    };
    let f = match g.shape(lead_future) {
        [bb, f] if *bb == b => *f,
        other => return Err(Error::Invalid(format!("lead future must be ({b}, F), got {other:?}"))),
    };
    let steps = super::check_horizon(f, m)?;
    if g.shape(theta) != [b, n, steps, 3] {
        return Err(Error::Invalid(format!(
            "theta must be ({b}, {n}, {steps}, 3), got {:?}",
            g.shape(theta)
        )));
    }
    let mut cols = Vec::with_capacity(steps);
    for j in 0..steps {
        let row = g.slice(theta, 2, j, 1)?;
        let mut c = [row; 3];
        for (col, slot) in c.iter_mut().enumerate() {
            let x = g.slice(row, 3, col, 1)?;
            *slot = g.reshape(x, &[b, n])?;
        }
        cols.push(c);
    }
    let (mut v, mut s, mut dv) = (v0, s0, dv0);
    let mut vs = Vec::with_capacity(f);
    let mut ss = Vec::with_capacity(f);
    for k in 0..f {
        let [fv, fs, fdv] = cols[k / m];
        let ev = g.sub(v, v_star)?;
        let es = g.sub(s, s_star)?;
        let t1 = g.mul(fv, ev)?;
        let t2 = g.mul(fs, es)?;
        let t3 = g.mul(fdv, dv)?;
        let t12 = g.add(t1, t2)?;
        let a = g.add(t12, t3)?;
        let da = g.scale(a, dt)?;
        let nv = g.add(v, da)?;
        let ds = g.scale(dv, dt)?;
        let ns = g.add(s, ds)?;
        let lead = g.slice(lead_future, 1, k, 1)?;
        let ahead = if n > 1 {
            let front = g.slice(nv, 1, 0, n - 1)?;
            g.concat(&[lead, front], 1)?
        } else {
            lead
        };
        dv = g.sub(ahead, nv)?;
        v = nv;
        s = ns;
        vs.push(g.reshape(v, &[b, n, 1])?);
        ss.push(g.reshape(s, &[b, n, 1])?);
    }
    Ok(GraphRollout {
        v: g.concat(&vs, 2)?,
        s: g.concat(&ss, 2)?,
    })
}
