//! Sign-constrained parameter encoding and the linear platoon rollout.
//!
//! For follower `n` and step `k`, with `theta = (f_v, f_s, f_dv)` taken from
//! parameter step `floor(k / m)`:
//!
//! ```text
//! a(k)    = f_v (v(k) - v*) + f_s (s(k) - s*) + f_dv dv(k)
//! v(k+1)  = v(k) + dt a(k)
//! s(k+1)  = s(k) + dt dv(k)
//! dv(k+1) = v_{n-1}(k+1) - v(k+1)
//! ```
//!
//! where `v_0` is the given leader speed.

mod graph;

pub use graph::{encode_graph, rollout_graph, GraphRollout};

use numgrad::softplus;

use crate::data::{StateWindow, D_IN};
use crate::error::{Error, Result};

/// Sign applied to each softplus-encoded column.
pub const SIGNS: [f64; 3] = [-1.0, 1.0, 1.0];

/// Physical parameters `(f_v, f_s, f_dv)` per follower and parameter step,
/// stored `(N, S, 3)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub n: usize,
    pub steps: usize,
    pub values: Vec<f64>,
}

impl Theta {
    pub fn new(n: usize, steps: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * steps * 3 {
            return Err(Error::Invalid(format!(
                "theta of {n} vehicles and {steps} steps needs {} values, got {}",
                n * steps * 3,
                values.len()
            )));
        }
        Ok(Self { n, steps, values })
    }

    /// The same row for every vehicle and step.
    pub fn constant(n: usize, steps: usize, row: [f64; 3]) -> Self {
        Self {
            n,
            steps,
            values: (0..n * steps).flat_map(|_| row).collect(),
        }
    }

    pub fn get(&self, vehicle: usize, step: usize) -> [f64; 3] {
        let o = (vehicle * self.steps + step) * 3;
        [self.values[o], self.values[o + 1], self.values[o + 2]]
    }

    /// True when every row has the `(-, +, +)` pattern and is finite.
    pub fn signs_hold(&self) -> bool {
        self.values
            .chunks_exact(3)
            .all(|r| r.iter().all(|x| x.is_finite()) && r[0] < 0.0 && r[1] > 0.0 && r[2] > 0.0)
    }

    /// Per-vehicle mean over parameter steps.
    pub fn step_mean(&self, vehicle: usize) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for j in 0..self.steps {
            let r = self.get(vehicle, j);
            for c in 0..3 {
                acc[c] += r[c];
            }
        }
        acc.map(|x| x / self.steps as f64)
    }
}

/// `theta = [-1, 1, 1] * softplus(raw)` row by row.
pub fn encode_parameters(raw: &[f64], n: usize, steps: usize) -> Result<Theta> {
    if let Some(i) = raw.iter().position(|x| !x.is_finite()) {
        return Err(Error::Invalid(format!("encode_parameters: non-finite raw value at index {i}")));
    }
    let values = raw
        .iter()
        .enumerate()
        .map(|(i, &x)| SIGNS[i % 3] * softplus(x))
        .collect();
    Theta::new(n, steps, values)
}

/// Per-vehicle mean speed and gap over the history; the expected relative
/// speed is always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedState {
    pub v_star: Vec<f64>,
    pub s_star: Vec<f64>,
}

impl ExpectedState {
    pub fn dv_star(&self, _vehicle: usize) -> f64 {
        0.0
    }
}

/// Expected state from an `(N, P, 3)` history of `[v, s, dv]`.
pub fn expected_state(history: &[f64], n: usize, p: usize) -> ExpectedState {
    assert!(p >= 1 && history.len() == n * p * D_IN, "history must be (N, P, 3)");
    let mut v_star = vec![0.0; n];
    let mut s_star = vec![0.0; n];
    for i in 0..n {
        for k in 0..p {
            let o = (i * p + k) * D_IN;
            v_star[i] += history[o];
            s_star[i] += history[o + 1];
        }
        v_star[i] /= p as f64;
        s_star[i] /= p as f64;
    }
    ExpectedState { v_star, s_star }
}

/// Predicted trajectories, each `(N, F)`. Index `k` of `v`, `s` and `dv`
/// is the state at `t + k + 1`; index `k` of `a` is the acceleration
/// applied over step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub n: usize,
    pub f: usize,
    pub v: Vec<f64>,
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub dv: Vec<f64>,
}

impl RolloutResult {
    pub fn at(&self, series: &[f64], vehicle: usize, k: usize) -> f64 {
        series[vehicle * self.f + k]
    }
}

pub fn check_horizon(f: usize, m: usize) -> Result<usize> {
    if m == 0 || f == 0 || !f.is_multiple_of(m) {
        return Err(Error::Config(format!(
            "prediction horizon F={f} must be a positive multiple of the parameter stride m={m}"
        )));
    }
    Ok(f / m)
}

/// Rolls the platoon forward `F = lead_future.len()` steps from
/// `initial[n] = [v, s, dv]`. No clamping is applied.
pub fn rollout(
    initial: &[[f64; 3]],
    lead_future: &[f64],
    theta: &Theta,
    xstar: &ExpectedState,
    m: usize,
    dt: f64,
) -> Result<RolloutResult> {
    let n = initial.len();
    let f = lead_future.len();
    let steps = check_horizon(f, m)?;
    if theta.n != n || theta.steps != steps {
        return Err(Error::Invalid(format!(
            "theta is ({}, {}) but the rollout needs ({n}, {steps})",
            theta.n, theta.steps
        )));
    }
    if xstar.v_star.len() != n || xstar.s_star.len() != n {
        return Err(Error::Invalid("expected state does not match the vehicle count".into()));
    }
    let mut out = RolloutResult {
        n,
        f,
        v: vec![0.0; n * f],
        s: vec![0.0; n * f],
        a: vec![0.0; n * f],
        dv: vec![0.0; n * f],
    };
    let mut state: Vec<[f64; 3]> = initial.to_vec();
    for k in 0..f {
        let j = k / m;
        for i in 0..n {
            let [v, s, dv] = state[i];
            let [fv, fs, fdv] = theta.get(i, j);
            let a = fv * (v - xstar.v_star[i]) + fs * (s - xstar.s_star[i]) + fdv * (dv - xstar.dv_star(i));
            let nv = v + dt * a;
            let ns = s + dt * dv;
            let lead = if i == 0 { lead_future[k] } else { state[i - 1][0] };
            state[i] = [nv, ns, lead - nv];
            let o = i * f + k;
            out.a[o] = a;
            out.v[o] = nv;
            out.s[o] = ns;
            out.dv[o] = lead - nv;
        }
    }
    Ok(out)
}

/// Rollout of a window with the given parameters.
pub fn rollout_window(window: &StateWindow, theta: &Theta, m: usize, dt: f64) -> Result<RolloutResult> {
    let initial: Vec<[f64; 3]> = (0..window.n).map(|i| window.current(i)).collect();
    let xstar = expected_state(&window.history, window.n, window.p);
    rollout(&initial, &window.lead_future, theta, &xstar, m, dt)
}
