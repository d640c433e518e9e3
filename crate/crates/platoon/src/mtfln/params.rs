use std::collections::BTreeMap;

use numgrad::{Array, Graph, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::data::NormStats;
use crate::error::{Error, Result};

/// Rounds to the nearest 32-bit value so that checkpoints are lossless.
pub fn to_f32_grid(x: f64) -> f64 {
    x as f32 as f64
}

/// `softplus^{-1}(y) = ln(e^y - 1)`.
pub fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Every learnable array of the network, by name, plus the input
/// normalisation statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub norm: NormStats,
    pub tensors: BTreeMap<String, Array>,
}

/// Parameter shapes implied by a configuration, in creation order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_m;
    let e = cfg.inner();
    let r = cfg.dt_rank();
    let n = cfg.n_ssm;
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    let mut add = |name: String, shape: Vec<usize>| out.push((name, shape));
    let linear = |add: &mut dyn FnMut(String, Vec<usize>), name: &str, i: usize, o: usize| {
        add(format!("{name}.w"), vec![i, o]);
        add(format!("{name}.b"), vec![o]);
    };
    linear(&mut add, "embed", cfg.d_in, d);
    if !cfg.disable_tfl {
        add("tfl.norm.g".into(), vec![d]);
        add("tfl.in_x.w".into(), vec![d, e]);
        add("tfl.in_z.w".into(), vec![d, e]);
        add("tfl.conv.w".into(), vec![e, cfg.conv_kernel]);
        add("tfl.conv.b".into(), vec![e]);
        add("tfl.x_dt.w".into(), vec![e, r]);
        add("tfl.x_b.w".into(), vec![e, n]);
        add("tfl.x_c.w".into(), vec![e, n]);
        linear(&mut add, "tfl.dt", r, e);
        add("tfl.a_log".into(), vec![e, n]);
        add("tfl.d".into(), vec![e]);
        add("tfl.out.w".into(), vec![e, d]);
    }
    for i in 0..cfg.ve_layers - 1 {
        linear(&mut add, &format!("ful.hidden{i}"), d, d);
    }
    linear(&mut add, "ful.mu", d, d);
    linear(&mut add, "ful.logvar", d, d);
    let block = |add: &mut dyn FnMut(String, Vec<usize>), p: &str| {
        for proj in ["q", "k", "v", "o"] {
            linear(add, &format!("{p}.attn.{proj}"), d, d);
        }
        add(format!("{p}.ln1.g"), vec![d]);
        add(format!("{p}.ln1.b"), vec![d]);
        linear(add, &format!("{p}.ffn1"), d, 4 * d);
        linear(add, &format!("{p}.ffn2"), 4 * d, d);
        add(format!("{p}.ln2.g"), vec![d]);
        add(format!("{p}.ln2.b"), vec![d]);
    };
    if !cfg.disable_pfl {
        for l in 0..cfg.attn_layers {
            block(&mut add, &format!("pfl.{l}"));
        }
    }
    for l in 0..cfg.attn_layers {
        block(&mut add, &format!("dec.{l}"));
    }
    linear(&mut add, "head", d, 3);
    out
}

impl ModelParams {
    /// Seeded initialisation. Linear layers draw from `U(-1/sqrt(fan_in),
    /// 1/sqrt(fan_in))`; norms start at unit gain; the state matrix starts
    /// at `A = -(1..n)` per channel; the output head bias encodes
    /// `config.theta_init`.
    pub fn init(config: &ModelConfig, norm: NormStats, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in param_shapes(config) {
            let value = init_tensor(config, &name, &shape, &mut rng);
            tensors.insert(name, value.map(to_f32_grid));
        }
        Ok(Self {
            config: config.clone(),
            norm,
            tensors,
        })
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Array::len).sum()
    }

    /// Checks that the arrays match the configuration exactly and are finite.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = param_shapes(&self.config);
        if expected.len() != self.tensors.len() {
            return Err(Error::Invalid(format!(
                "expected {} parameter arrays, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in expected {
            let a = self.get(&name)?;
            if a.shape() != shape.as_slice() {
                return Err(Error::Invalid(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    a.shape()
                )));
            }
            if !a.is_finite() {
                return Err(Error::Invalid(format!("parameter {name} is not finite")));
            }
        }
        Ok(())
    }

    /// Adds every array to `g` as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph) -> Result<Bound> {
        let mut vars = BTreeMap::new();
        for (name, a) in &self.tensors {
            vars.insert(name.clone(), g.param(a.clone())?);
        }
        Ok(Bound { vars })
    }
}

fn init_tensor(cfg: &ModelConfig, name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> Array {
    let uniform = |rng: &mut ChaCha8Rng, bound: f64| Array::from_fn(shape.to_vec(), |_| rng.gen_range(-bound..=bound));
    let leaf = name.rsplit('.').next().unwrap_or(name);
    match name {
        "tfl.a_log" => Array::from_fn(shape.to_vec(), |i| ((i % shape[1]) as f64 + 1.0).ln()),
        "tfl.d" => Array::full(shape.to_vec(), 1.0),
        "tfl.norm.g" => Array::full(shape.to_vec(), 1.0),
        "tfl.conv.w" | "tfl.conv.b" => uniform(rng, 1.0 / (cfg.conv_kernel as f64).sqrt()),
        "tfl.dt.w" => uniform(rng, 1.0 / (cfg.dt_rank() as f64).sqrt()),
        "tfl.dt.b" => {
            // Step sizes log-uniform in [1e-3, 1e-1].
            let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
            Array::from_fn(shape.to_vec(), |_| inverse_softplus(rng.gen_range(lo..hi).exp()))
        }
        "head.w" => {
            let bound = cfg.head_init_scale / (shape[0] as f64).sqrt();
            uniform(rng, bound)
        }
        "head.b" => Array::from_fn(shape.to_vec(), |i| inverse_softplus(cfg.theta_init[i])),
        _ if name.ends_with(".g") => Array::full(shape.to_vec(), 1.0),
        _ if name.contains(".ln") && leaf == "b" => Array::zeros(shape.to_vec()),
        _ => {
            let fan_in = if leaf == "w" {
                shape[0]
            } else {
                // Bias: the fan-in of the matching weight.
                let w = format!("{}.w", &name[..name.len() - 2]);
                param_shapes(cfg)
                    .into_iter()
                    .find(|(n, _)| *n == w)
                    .map_or(shape[0], |(_, s)| s[0])
            };
            uniform(rng, 1.0 / (fan_in as f64).sqrt())
        }
    }
}

/// Parameters bound to a graph.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))
    }
}
