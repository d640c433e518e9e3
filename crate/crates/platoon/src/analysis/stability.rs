use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apecg::Theta;

pub const GRID_LO: f64 = 0.05;
pub const GRID_HI: f64 = 5.0;
pub const GRID_POINTS: usize = 200;

/// `|G(jw)|` of the speed-perturbation transfer from vehicle `n-1` to `n`
/// under `dv/dt = f_v (v - v*) + f_s (s - s*) + f_dv dv`, `ds/dt = dv`:
///
/// ```text
/// G(jw) = (f_dv jw + f_s) / ((jw)^2 + (f_dv - f_v) jw + f_s)
/// ```
pub fn transfer_function_magnitude(theta: [f64; 3], omega: f64) -> f64 {
    let [f_v, f_s, f_dv] = theta;
    let num = (f_dv * omega).hypot(f_s);
    let den = (f_s - omega * omega).hypot((f_dv - f_v) * omega);
    num / den
}

/// Closed-form condition for `|G(jw)| <= 1` at every frequency.
pub fn string_stable(theta: [f64; 3]) -> bool {
    stability_margin(theta) >= 0.0
}

/// `(f_dv - f_v)^2 - 2 f_s - f_dv^2`, the `w^2` coefficient of
/// `|den|^2 - |num|^2`. Non-negative iff string stable.
pub fn stability_margin(theta: [f64; 3]) -> f64 {
    let [f_v, f_s, f_dv] = theta;
    (f_dv - f_v).powi(2) - 2.0 * f_s - f_dv * f_dv
}

/// `points` log-spaced frequencies from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && points >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

pub fn default_grid() -> Vec<f64> {
    log_grid(GRID_LO, GRID_HI, GRID_POINTS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySpectrum {
    pub frequencies: Vec<f64>,
    /// `per_vehicle[n][i]` is `|G_n(j w_i)|`.
    pub per_vehicle: Vec<Vec<f64>>,
    pub head_to_tail: Vec<f64>,
    /// Per-vehicle theta averaged over parameter steps.
    pub theta_used: Vec<[f64; 3]>,
    pub amplified: bool,
}

impl StabilitySpectrum {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("omega_rad_s");
        for n in 0..self.per_vehicle.len() {
            out.push_str(&format!(",vehicle_{}", n + 1));
        }
        out.push_str(",head_to_tail\n");
        for (i, w) in self.frequencies.iter().enumerate() {
            out.push_str(&format!("{w}"));
            for row in &self.per_vehicle {
                out.push_str(&format!(",{}", row[i]));
            }
            out.push_str(&format!(",{}\n", self.head_to_tail[i]));
        }
        out
    }
}

pub fn head_to_tail_gain(theta: &Theta, omega_grid: &[f64]) -> StabilitySpectrum {
    let theta_used: Vec<[f64; 3]> = (0..theta.n).map(|n| theta.step_mean(n)).collect();
    let per_vehicle: Vec<Vec<f64>> = theta_used
        .par_iter()
        .map(|&row| {
            omega_grid
                .iter()
                .map(|&w| transfer_function_magnitude(row, w))
                .collect()
        })
        .collect();
    let head_to_tail: Vec<f64> = (0..omega_grid.len())
        .map(|i| per_vehicle.iter().map(|r| r[i]).product())
        .collect();
    let amplified = head_to_tail.iter().any(|&g| g > 1.0);
    StabilitySpectrum {
        frequencies: omega_grid.to_vec(),
        per_vehicle,
        head_to_tail,
        theta_used,
        amplified,
    }
}
