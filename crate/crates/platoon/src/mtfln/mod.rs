//! The parameter network: input embedding, a selective state-space block
//! over each vehicle's history, a variational encoder, vehicle-level causal
//! attention and a non-autoregressive decoder emitting the raw parameters
//! consumed by [`crate::apecg`].

mod config;
mod model;
mod params;

pub use config::ModelConfig;
pub use model::{
    embed_inputs, ful_forward, forward, narp_decode, pfl_forward, sinusoidal, tfl_forward, Batch, Forward,
};
pub use params::{inverse_softplus, param_shapes, to_f32_grid, Bound, ModelParams};

use numgrad::{Array, Graph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::apecg::{rollout_window, RolloutResult, Theta};
use crate::data::{StateWindow, DT};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Samples latent noise from the given seed.
    Train { seed: u64 },
    /// Uses the latent mean.
    Eval,
}

/// Latent mean and log-variance, each `(N, d_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDist {
    pub n: usize,
    pub d: usize,
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

/// Standard normal noise of the given shape.
pub fn sample_noise(shape: [usize; 2], seed: u64) -> Array {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array::from_fn(shape, |_| StandardNormal.sample(&mut rng))
}

impl ModelParams {
    /// Adds every array to `g` as a constant.
    pub fn bind_constants(&self, g: &mut Graph) -> Result<Bound> {
        let mut vars = std::collections::BTreeMap::new();
        for (name, a) in &self.tensors {
            vars.insert(name.clone(), g.constant(a.clone())?);
        }
        Ok(Bound { vars })
    }
}

/// Full forward pass on a single window, returning the rollout, the latent
/// distribution and the encoded parameters.
pub fn model_forward(window: &StateWindow, params: &ModelParams, mode: Mode) -> Result<(RolloutResult, LatentDist, Theta)> {
    let mut out = predict_batch(&[window], params, mode)?;
    Ok(out.remove(0))
}

/// Forward pass on windows sharing `N`, evaluated as one batch.
pub fn predict_batch(
    windows: &[&StateWindow],
    params: &ModelParams,
    mode: Mode,
) -> Result<Vec<(RolloutResult, LatentDist, Theta)>> {
    let cfg = &params.config;
    let batch = Batch::from_windows(windows, &params.norm)?;
    let mut g = Graph::new();
    let bound = params.bind_constants(&mut g)?;
    let noise = match mode {
        Mode::Train { seed } => Some(sample_noise([batch.b * batch.n, cfg.d_m], seed)),
        Mode::Eval => None,
    };
    let fwd = forward(&mut g, &bound, cfg, &batch, noise.as_ref())?;
    let steps = cfg.param_steps();
    let theta = g.value(fwd.theta).data();
    let (mu, logvar) = (g.value(fwd.mu).data(), g.value(fwd.logvar).data());
    let (n, d) = (batch.n, cfg.d_m);
    windows
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let per = n * steps * 3;
            let th = Theta::new(n, steps, theta[i * per..(i + 1) * per].to_vec())?;
            let roll = rollout_window(w, &th, cfg.m, DT)?;
            let latent = LatentDist {
                n,
                d,
                mu: mu[i * n * d..(i + 1) * n * d].to_vec(),
                logvar: logvar[i * n * d..(i + 1) * n * d].to_vec(),
            };
            Ok((roll, latent, th))
        })
        .collect()
}

/// Eval-mode predictions for many windows, grouped into chunks of equal `N`
/// and evaluated in parallel. Output order matches input order.
pub fn predict_all(windows: &[StateWindow], params: &ModelParams, chunk: usize) -> Result<Vec<(RolloutResult, Theta)>> {
    let mut chunks: Vec<Vec<usize>> = Vec::new();
    let mut by_n: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, w) in windows.iter().enumerate() {
        by_n.entry(w.n).or_default().push(i);
    }
    for idx in by_n.into_values() {
        chunks.extend(idx.chunks(chunk.max(1)).map(<[usize]>::to_vec));
    }
    let results: Vec<Vec<(usize, RolloutResult, Theta)>> = chunks
        .par_iter()
        .map(|idx| {
            let ws: Vec<&StateWindow> = idx.iter().map(|&i| &windows[i]).collect();
            let out = predict_batch(&ws, params, Mode::Eval)?;
            Ok(idx.iter().zip(out).map(|(&i, (r, _, t))| (i, r, t)).collect())
        })
        .collect::<Result<_>>()?;
    let mut slots: Vec<Option<(RolloutResult, Theta)>> = vec![None; windows.len()];
    for (i, r, t) in results.into_iter().flatten() {
        slots[i] = Some((r, t));
    }
    Ok(slots.into_iter().map(|s| s.expect("every window predicted")).collect())
}
