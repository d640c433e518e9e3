use serde::{Deserialize, Serialize};

use super::PlatoonRecord;

/// Features per vehicle and step: `[v, s, dv]`.
pub const D_IN: usize = 3;

/// One sample: `N` followers observed over `P` steps ending at the anchor
/// step `t`, the leader's speeds over `t+1..=t+F` and the followers' true
/// `[v, s]` over the same future steps.
#[derive(Debug, Clone, PartialEq)]
pub struct StateWindow {
    pub n: usize,
    pub p: usize,
    pub f: usize,
    /// `(N, P, 3)` row-major, raw physical units.
    pub history: Vec<f64>,
    /// `(F)`.
    pub lead_future: Vec<f64>,
    /// `(N, F, 2)`.
    pub targets: Vec<f64>,
    pub platoon_id: String,
    /// Index of the anchor step within the record.
    pub t: usize,
}

impl StateWindow {
    /// `[v, s, dv]` of follower `i` (0-based) at history step `k`.
    pub fn hist(&self, i: usize, k: usize) -> [f64; 3] {
        let o = (i * self.p + k) * D_IN;
        [self.history[o], self.history[o + 1], self.history[o + 2]]
    }

    /// State at the anchor step.
    pub fn current(&self, i: usize) -> [f64; 3] {
        self.hist(i, self.p - 1)
    }

    pub fn target_v(&self, i: usize, k: usize) -> f64 {
        self.targets[(i * self.f + k) * 2]
    }

    pub fn target_s(&self, i: usize, k: usize) -> f64 {
        self.targets[(i * self.f + k) * 2 + 1]
    }

    /// Builds the window anchored at step `t` of `record`.
    pub fn at(record: &PlatoonRecord, t: usize, p: usize, f: usize) -> Self {
        assert!(t + 1 >= p && t + f < record.duration(), "window out of range");
        let n = record.followers();
        let mut history = Vec::with_capacity(n * p * D_IN);
        let mut targets = Vec::with_capacity(n * f * 2);
        for i in 1..=n {
            for k in t + 1 - p..=t {
                history.extend_from_slice(&record.state(i, k));
            }
            for k in t + 1..=t + f {
                targets.push(record.vehicles[i].speed[k]);
                targets.push(record.gap(i, k));
            }
        }
        Self {
            n,
            p,
            f,
            history,
            lead_future: record.vehicles[0].speed[t + 1..=t + f].to_vec(),
            targets,
            platoon_id: record.platoon_id.clone(),
            t,
        }
    }
}

pub fn window_count(duration: usize, p: usize, f: usize, stride: usize) -> usize {
    assert!(stride >= 1, "stride must be at least 1");
    if duration < p + f {
        0
    } else {
        (duration - (p + f)) / stride + 1
    }
}

/// Sliding windows with anchors `P-1, P-1+stride, ...`.
///
/// A window needs `P + F` steps, so a record of duration `P + F` yields one
/// window.
pub fn extract_windows(record: &PlatoonRecord, p: usize, f: usize, stride: usize) -> Vec<StateWindow> {
    assert!(p >= 1 && f >= 1, "P and F must be positive");
    let count = window_count(record.duration(), p, f, stride);
    (0..count)
        .map(|j| StateWindow::at(record, p - 1 + j * stride, p, f))
        .collect()
}

/// Per-feature mean and standard deviation of the history blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; D_IN],
    pub std: [f64; D_IN],
}

impl Default for NormStats {
    fn default() -> Self {
        Self {
            mean: [0.0; D_IN],
            std: [1.0; D_IN],
        }
    }
}

impl NormStats {
    /// Statistics over every history entry of `windows`. Standard deviations
    /// are floored at 1e-6.
    pub fn from_windows(windows: &[StateWindow]) -> Self {
        let mut sum = [0.0; D_IN];
        let mut count = 0usize;
        for w in windows {
            for row in w.history.chunks_exact(D_IN) {
                for j in 0..D_IN {
                    sum[j] += row[j];
                }
                count += 1;
            }
        }
        if count == 0 {
            return Self::default();
        }
        let mean = sum.map(|s| s / count as f64);
        let mut var = [0.0; D_IN];
        for w in windows {
            for row in w.history.chunks_exact(D_IN) {
                for j in 0..D_IN {
                    var[j] += (row[j] - mean[j]).powi(2);
                }
            }
        }
        let std = var.map(|v| (v / count as f64).sqrt().max(1e-6));
        Self { mean, std }
    }

    pub fn normalize(&self, history: &[f64]) -> Vec<f64> {
        history
            .iter()
            .enumerate()
            .map(|(i, x)| (x - self.mean[i % D_IN]) / self.std[i % D_IN])
            .collect()
    }
}
