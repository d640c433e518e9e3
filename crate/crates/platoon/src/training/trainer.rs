use std::collections::BTreeMap;

use numgrad::{Array, Graph};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::loss::{dwa_weights, loss_graph, LossReport};
use crate::data::{NormStats, StateWindow};
use crate::error::{Error, Result};
use crate::mtfln::{forward, sample_noise, Batch, ModelConfig, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub alpha_kl: f64,
    pub dwa_temperature: f64,
    /// Sample latent noise during training; otherwise the latent mean is used.
    pub sample_noise: bool,
    /// Windows per independently evaluated gradient chunk. The batch
    /// gradient is the size-weighted sum of chunk gradients, reduced in
    /// chunk order, so results do not depend on the thread count.
    pub chunk_size: usize,
    /// Step between consecutive window anchors.
    pub window_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-5,
            batch_size: 32,
            alpha_kl: 0.0025,
            dwa_temperature: 2.0,
            sample_noise: true,
            chunk_size: 8,
            window_stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.chunk_size == 0 || self.window_stride == 0 {
            return Err(Error::Config("batch_size, chunk_size and window_stride must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.alpha_kl >= 0.0) || !(self.dwa_temperature > 0.0) {
            return Err(Error::Config(format!("invalid training settings {self:?}")));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train: LossReport,
    /// `l_v + l_s + alpha_kl * l_kl` on the validation windows, eval mode.
    pub val_loss: Option<f64>,
    /// Set when a non-finite loss aborted the epoch and the parameters were
    /// restored from its start.
    pub aborted: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best epoch by validation loss (training loss when
    /// there are no validation windows).
    pub best: ModelParams,
    pub best_epoch: usize,
    pub last: ModelParams,
    pub reports: Vec<EpochReport>,
}

pub(crate) fn mix(seed: u64, a: u64, b: u64, c: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F) ^ c.wrapping_mul(0x1656_67B1_9E37_79F9);
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Loss terms and gradient of one batch.
pub struct BatchGrad {
    pub l_v: f64,
    pub l_s: f64,
    pub l_kl: f64,
    pub total: f64,
    pub grads: BTreeMap<String, Array>,
}

/// Evaluates `windows` as one graph and returns its losses and parameter
/// gradients.
pub fn batch_gradient(
    params: &ModelParams,
    windows: &[&StateWindow],
    alphas: [f64; 2],
    alpha_kl: f64,
    noise_seed: Option<u64>,
) -> Result<BatchGrad> {
    let cfg = &params.config;
    let batch = Batch::from_windows(windows, &params.norm)?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g)?;
    let noise = noise_seed.map(|s| sample_noise([batch.b * batch.n, cfg.d_m], s));
    let fwd = forward(&mut g, &bound, cfg, &batch, noise.as_ref())?;
    let loss = loss_graph(&mut g, &fwd, &batch, alphas, alpha_kl)?;
    let grads = g.backward(loss.total)?;
    let mut out = BTreeMap::new();
    for (name, &v) in &bound.vars {
        out.insert(name.clone(), grads.get_or_zeros(&g, v));
    }
    Ok(BatchGrad {
        l_v: g.value(loss.l_v).item(),
        l_s: g.value(loss.l_s).item(),
        l_kl: g.value(loss.l_kl).item(),
        total: g.value(loss.total).item(),
        grads: out,
    })
}

fn accumulate(acc: &mut BTreeMap<String, Array>, part: &BTreeMap<String, Array>, w: f64) {
    for (name, g) in part {
        let merged = match acc.get(name) {
            Some(a) => Array::new(
                a.shape().to_vec(),
                a.data().iter().zip(g.data()).map(|(x, y)| x + w * y).collect(),
            )
            .expect("same shape"),
            None => g.map(|y| w * y),
        };
        acc.insert(name.clone(), merged);
    }
}

fn chunked_gradient(
    params: &ModelParams,
    windows: &[&StateWindow],
    cfg: &TrainConfig,
    alphas: [f64; 2],
    noise_base: Option<u64>,
) -> Result<BatchGrad> {
    let chunks: Vec<&[&StateWindow]> = windows.chunks(cfg.chunk_size).collect();
    let parts: Vec<BatchGrad> = chunks
        .par_iter()
        .enumerate()
        .map(|(c, ws)| batch_gradient(params, ws, alphas, cfg.alpha_kl, noise_base.map(|s| mix(s, 0, 0, c as u64))))
        .collect::<Result<_>>()?;
    let total = windows.len() as f64;
    let mut out = BatchGrad {
        l_v: 0.0,
        l_s: 0.0,
        l_kl: 0.0,
        total: 0.0,
        grads: BTreeMap::new(),
    };
    for (ws, part) in chunks.iter().zip(&parts) {
        let w = ws.len() as f64 / total;
        out.l_v += w * part.l_v;
        out.l_s += w * part.l_s;
        out.l_kl += w * part.l_kl;
        out.total += w * part.total;
        accumulate(&mut out.grads, &part.grads, w);
    }
    Ok(out)
}

/// Eval-mode `(l_v, l_s, l_kl)` means over `windows`.
pub fn evaluate_losses(params: &ModelParams, windows: &[StateWindow], chunk: usize) -> Result<[f64; 3]> {
    if windows.is_empty() {
        return Err(Error::Invalid("no windows to evaluate".into()));
    }
    let groups = group_by_n(windows);
    let chunks: Vec<Vec<usize>> = groups
        .into_values()
        .flat_map(|idx| idx.chunks(chunk.max(1)).map(<[usize]>::to_vec).collect::<Vec<_>>())
        .collect();
    let parts: Vec<(usize, [f64; 3])> = chunks
        .par_iter()
        .map(|idx| {
            let ws: Vec<&StateWindow> = idx.iter().map(|&i| &windows[i]).collect();
            let cfg = &params.config;
            let batch = Batch::from_windows(&ws, &params.norm)?;
            let mut g = Graph::new();
            let bound = params.bind_constants(&mut g)?;
            let fwd = forward(&mut g, &bound, cfg, &batch, None)?;
            let loss = loss_graph(&mut g, &fwd, &batch, [1.0, 1.0], 0.0)?;
            Ok((
                idx.len(),
                [g.value(loss.l_v).item(), g.value(loss.l_s).item(), g.value(loss.l_kl).item()],
            ))
        })
        .collect::<Result<_>>()?;
    let mut acc = [0.0; 3];
    for (count, l) in &parts {
        for j in 0..3 {
            acc[j] += *count as f64 * l[j];
        }
    }
    Ok(acc.map(|x| x / windows.len() as f64))
}

fn group_by_n(windows: &[StateWindow]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        groups.entry(w.n).or_default().push(i);
    }
    groups
}

fn all_finite(b: &BatchGrad) -> bool {
    b.total.is_finite() && b.grads.values().all(Array::is_finite)
}

/// Mini-batch training with Adam and DWA-weighted prediction losses.
/// `on_epoch` receives each epoch's report as soon as it is complete.
pub fn train(
    train_windows: &[StateWindow],
    val_windows: &[StateWindow],
    model: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_windows.is_empty() {
        return Err(Error::Invalid("the training split has no windows".into()));
    }
    let norm = NormStats::from_windows(train_windows);
    let mut params = ModelParams::init(model, norm, seed)?;
    let mut opt = Adam::new(cfg.lr);
    let groups = group_by_n(train_windows);
    let mut history: Vec<[f64; 2]> = Vec::new();
    let mut reports = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 0..cfg.epochs {
        let alphas = dwa_weights(&history, cfg.dwa_temperature, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 1, epoch as u64, 0));
        let mut batches: Vec<Vec<usize>> = Vec::new();
        for idx in groups.values() {
            let mut idx = idx.clone();
            idx.shuffle(&mut rng);
            batches.extend(idx.chunks(cfg.batch_size).map(<[usize]>::to_vec));
        }
        batches.shuffle(&mut rng);

        let snapshot = (params.clone(), opt.clone());
        let mut sums = [0.0; 4];
        let mut seen = 0usize;
        let mut aborted = false;
        for (bi, idx) in batches.iter().enumerate() {
            let ws: Vec<&StateWindow> = idx.iter().map(|&i| &train_windows[i]).collect();
            let noise = cfg.sample_noise.then(|| mix(seed, 2, epoch as u64, bi as u64));
            let step = match chunked_gradient(&params, &ws, cfg, alphas, noise) {
                Ok(s) if all_finite(&s) => s,
                Ok(_) | Err(Error::Graph(numgrad::Error::NonFinite { .. })) => {
                    log::warn!("epoch {epoch}: non-finite loss in batch {bi}; restoring parameters from the epoch start");
                    aborted = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            let w = ws.len() as f64;
            sums[0] += w * step.l_v;
            sums[1] += w * step.l_s;
            sums[2] += w * step.l_kl;
            sums[3] += w * step.total;
            seen += ws.len();
            opt.update(&mut params.tensors, &step.grads);
        }
        if aborted {
            (params, opt) = snapshot;
        }
        let denom = seen.max(1) as f64;
        let [l_v, l_s, l_kl, _] = sums.map(|s| s / denom);
        let mut train = LossReport::compose(l_v, l_s, l_kl, alphas, cfg.alpha_kl);
        if aborted {
            train.total = f64::NAN;
        }
        let val_loss = if val_windows.is_empty() {
            None
        } else {
            let [v, s, k] = evaluate_losses(&params, val_windows, cfg.chunk_size.max(32))?;
            Some(v + s + cfg.alpha_kl * k)
        };
        if !aborted {
            history.push([l_v, l_s]);
            let score = val_loss.unwrap_or(train.total);
            if score.is_finite() && best.as_ref().is_none_or(|(b, _, _)| score < *b) {
                best = Some((score, epoch, params.clone()));
            }
        }
        let report = EpochReport {
            epoch,
            train,
            val_loss,
            aborted,
        };
        on_epoch(&report);
        reports.push(report);
    }
    let (best_epoch, best_params) = match best {
        Some((_, e, p)) => (e, p),
        None => (0, params.clone()),
    };
    Ok(TrainOutcome {
        best: best_params,
        best_epoch,
        last: params,
        reports,
    })
}
