use numgrad::{finite_diff_check, Array, FiniteDiffReport};
use serde::{Deserialize, Serialize};

use super::loss::loss_graph;
use crate::data::{extract_windows, generate_synthetic_platoons, NormStats, SynthConfig};
use crate::error::{Error, Result};
use crate::mtfln::{forward, sample_noise, Batch, Bound, ModelConfig, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub model: ModelConfig,
    pub followers: usize,
    pub windows: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                d_m: 8,
                p: 6,
                f: 4,
                m: 2,
                ..ModelConfig::default()
            },
            followers: 2,
            windows: 2,
            step: 1e-6,
            seed: 7,
        }
    }
}

/// Finite-difference check of the training loss (all three terms, sampled
/// latent noise) with respect to every network parameter.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<FiniteDiffReport> {
    cfg.model.validate()?;
    let synth = SynthConfig {
        count: 1,
        followers: cfg.followers,
        duration_s: 6.0,
        ..SynthConfig::default()
    };
    let record = generate_synthetic_platoons(&synth, cfg.seed)?.records.remove(0);
    let all = extract_windows(&record, cfg.model.p, cfg.model.f, 7);
    if all.len() < cfg.windows || cfg.windows == 0 {
        return Err(Error::Config(format!("cannot draw {} windows for the gradient check", cfg.windows)));
    }
    let windows = &all[..cfg.windows];
    let norm = NormStats::from_windows(windows);
    let params = ModelParams::init(&cfg.model, norm, cfg.seed)?;
    let refs: Vec<_> = windows.iter().collect();
    let batch = Batch::from_windows(&refs, &params.norm)?;
    let noise = sample_noise([batch.b * batch.n, cfg.model.d_m], cfg.seed ^ 0x5eed);
    let names: Vec<String> = params.tensors.keys().cloned().collect();
    let inputs: Vec<Array> = params.tensors.values().cloned().collect();
    let report = finite_diff_check(&inputs, cfg.step, |g, vars| {
        let bound = Bound {
            vars: names.iter().cloned().zip(vars.iter().copied()).collect(),
        };
        let fwd = forward(g, &bound, &cfg.model, &batch, Some(&noise)).map_err(to_graph_error)?;
        let loss = loss_graph(g, &fwd, &batch, [0.8, 1.2], 0.5).map_err(to_graph_error)?;
        Ok(loss.total)
    })?;
    Ok(report)
}

fn to_graph_error(e: Error) -> numgrad::Error {
    match e {
        Error::Graph(g) => g,
        other => numgrad::Error::Invalid(other.to_string()),
    }
}
