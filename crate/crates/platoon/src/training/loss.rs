use numgrad::{Graph, Var};
use serde::{Deserialize, Serialize};

use crate::apecg::RolloutResult;
use crate::error::{Error, Result};
use crate::mtfln::{Batch, Forward, LatentDist};

/// Mean squared speed and gap errors over vehicles and horizon. `targets`
/// is `(N, F, 2)` of `[v, s]`.
pub fn prediction_loss(pred: &RolloutResult, targets: &[f64]) -> Result<(f64, f64)> {
    let count = pred.n * pred.f;
    if targets.len() != count * 2 {
        return Err(Error::Invalid(format!(
            "targets hold {} values but the prediction needs {}",
            targets.len(),
            count * 2
        )));
    }
    let (mut lv, mut ls) = (0.0, 0.0);
    for i in 0..count {
        lv += (pred.v[i] - targets[2 * i]).powi(2);
        ls += (pred.s[i] - targets[2 * i + 1]).powi(2);
    }
    Ok((lv / count as f64, ls / count as f64))
}

/// Mean over entries of `0.5 (mu^2 + sigma^2 - ln sigma^2 - 1)`.
pub fn kl_loss(dist: &LatentDist) -> f64 {
    let sum: f64 = dist
        .mu
        .iter()
        .zip(&dist.logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - lv - 1.0))
        .sum();
    sum / dist.mu.len() as f64
}

/// DWA task weights for the epoch following `history` (per-epoch
/// `[l_v, l_s]`). Ratios are 1 until two epochs exist and whenever the
/// older loss is below 1e-12. The weights sum to `k`.
pub fn dwa_weights(history: &[[f64; 2]], temperature: f64, k: f64) -> [f64; 2] {
    let ratios = match history {
        [.., older, last] => std::array::from_fn(|i| if older[i] < 1e-12 { 1.0 } else { last[i] / older[i] }),
        _ => [1.0, 1.0],
    };
    let e: [f64; 2] = ratios.map(|r: f64| (r / temperature).exp());
    let z = e[0] + e[1];
    [k * e[0] / z, k * e[1] / z]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_v: f64,
    pub l_s: f64,
    pub l_kl: f64,
    pub alpha_v: f64,
    pub alpha_s: f64,
    pub alpha_kl: f64,
    pub total: f64,
}

impl LossReport {
    pub fn compose(l_v: f64, l_s: f64, l_kl: f64, alphas: [f64; 2], alpha_kl: f64) -> Self {
        Self {
            l_v,
            l_s,
            l_kl,
            alpha_v: alphas[0],
            alpha_s: alphas[1],
            alpha_kl,
            total: alphas[0] * l_v + alphas[1] * l_s + alpha_kl * l_kl,
        }
    }
}

/// Loss nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l_v: Var,
    pub l_s: Var,
    pub l_kl: Var,
    pub total: Var,
}

pub fn loss_graph(g: &mut Graph, fwd: &Forward, batch: &Batch, alphas: [f64; 2], alpha_kl: f64) -> Result<LossVars> {
    let tv = g.constant(batch.target_v.clone())?;
    let ts = g.constant(batch.target_s.clone())?;
    let ev = g.sub(fwd.v, tv)?;
    let ev = g.square(ev)?;
    let l_v = g.mean(ev)?;
    let es = g.sub(fwd.s, ts)?;
    let es = g.square(es)?;
    let l_s = g.mean(es)?;
    let mu2 = g.square(fwd.mu)?;
    let var = g.exp(fwd.logvar)?;
    let k = g.add(mu2, var)?;
    let k = g.sub(k, fwd.logvar)?;
    let k = g.add_scalar(k, -1.0)?;
    let k = g.scale(k, 0.5)?;
    let l_kl = g.mean(k)?;
    let a = g.scale(l_v, alphas[0])?;
    let b = g.scale(l_s, alphas[1])?;
    let c = g.scale(l_kl, alpha_kl)?;
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    Ok(LossVars { l_v, l_s, l_kl, total })
}
