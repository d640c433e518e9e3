use serde::{Deserialize, Serialize};

use crate::data::PlatoonRecord;
use crate::error::{Error, Result};

pub const REACTION_TIME: f64 = 1.0;
pub const DECEL: f64 = 3.4;
pub const SMOOTHING: f64 = 1e-9;

/// Post-encroachment time per follower and frame: the time until the
/// follower's front reaches where the leader's rear was at that frame.
/// Frames whose crossing lies beyond the record are omitted.
pub fn pet_series(record: &PlatoonRecord) -> Vec<f64> {
    let dt = record.dt;
    let steps = record.duration();
    let mut out = Vec::new();
    for n in 1..record.vehicles.len() {
        let lead = &record.vehicles[n - 1];
        let x = &record.vehicles[n].position;
        let mut k = 0;
        for t in 0..steps {
            let rear = lead.position[t] - lead.length;
            k = k.max(t);
            while k < steps && x[k] < rear {
                k += 1;
            }
            if k == steps {
                continue;
            }
            let tau = if k == t {
                0.0
            } else {
                let frac = (rear - x[k - 1]) / (x[k] - x[k - 1]);
                dt * ((k - 1 - t) as f64 + frac)
            };
            out.push(tau);
        }
    }
    out
}

/// Safe stopping distance difference per follower and frame.
pub fn ssdd(gap: f64, v_lead: f64, v: f64, reaction_time: f64, decel: f64) -> f64 {
    gap + v_lead * v_lead / (2.0 * decel) - (v * reaction_time + v * v / (2.0 * decel))
}

pub fn ssdd_series(record: &PlatoonRecord, reaction_time: f64, decel: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for n in 1..record.vehicles.len() {
        for t in 0..record.duration() {
            out.push(ssdd(
                record.gap(n, t),
                record.vehicles[n - 1].speed[t],
                record.vehicles[n].speed[t],
                reaction_time,
                decel,
            ));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Counts samples into `edges.len() - 1` bins; samples outside the
    /// range land in the first or last bin.
    pub fn build(samples: &[f64], edges: &[f64]) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("histogram edges must be strictly increasing".into()));
        }
        let bins = edges.len() - 1;
        let mut counts = vec![0u64; bins];
        for &x in samples.iter().filter(|x| !x.is_nan()) {
            let i = edges.partition_point(|&e| e <= x).saturating_sub(1).min(bins - 1);
            counts[i] += 1;
        }
        Ok(Self {
            edges: edges.to_vec(),
            counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Smoothed probabilities `(c + eps) / sum(c + eps)`.
    pub fn probabilities(&self, eps: f64) -> Result<Vec<f64>> {
        if self.total() == 0 {
            return Err(Error::Invalid("histogram has no samples".into()));
        }
        Ok(normalize(&self.counts.iter().map(|&c| c as f64).collect::<Vec<_>>(), eps))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        out
    }
}

fn normalize(weights: &[f64], eps: f64) -> Vec<f64> {
    let total: f64 = weights.iter().map(|w| w + eps).sum();
    weights.iter().map(|w| (w + eps) / total).collect()
}

/// Edges from `lo` to `hi` in steps of `width`.
pub fn uniform_edges(lo: f64, hi: f64, width: f64) -> Vec<f64> {
    let bins = ((hi - lo) / width).round() as usize;
    (0..=bins).map(|i| lo + width * i as f64).collect()
}

pub fn pet_edges() -> Vec<f64> {
    uniform_edges(0.0, 10.0, 0.5)
}

pub fn ssdd_edges() -> Vec<f64> {
    uniform_edges(-100.0, 100.0, 5.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergences {
    pub kl: f64,
    pub hellinger: f64,
}

/// KL(p || q) in nats and the Hellinger distance of two probability vectors.
pub fn divergences(p: &[f64], q: &[f64]) -> Result<Divergences> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::Invalid(format!(
            "divergences need equal non-empty supports, got {} and {}",
            p.len(),
            q.len()
        )));
    }
    let kl = p
        .iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum();
    let bc: f64 = p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum();
    Ok(Divergences {
        kl,
        hellinger: (1.0 - bc).max(0.0).sqrt(),
    })
}

pub fn histogram_divergences(p_samples: &[f64], q_samples: &[f64], edges: &[f64]) -> Result<Divergences> {
    if p_samples.is_empty() || q_samples.is_empty() {
        return Err(Error::Invalid("histogram_divergences: empty sample set".into()));
    }
    let p = Histogram::build(p_samples, edges)?.probabilities(SMOOTHING)?;
    let q = Histogram::build(q_samples, edges)?.probabilities(SMOOTHING)?;
    divergences(&p, &q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyDistributions {
    pub pet_hist: Histogram,
    pub ssdd_hist: Histogram,
    pub pet_reference_hist: Histogram,
    pub ssdd_reference_hist: Histogram,
    pub pet: Divergences,
    pub ssdd: Divergences,
}

/// PET and SSDD distributions of `generated` against `reference`.
pub fn safety_distributions(generated: &[PlatoonRecord], reference: &[PlatoonRecord]) -> Result<SafetyDistributions> {
    let collect = |recs: &[PlatoonRecord], f: &dyn Fn(&PlatoonRecord) -> Vec<f64>| -> Vec<f64> {
        recs.iter().flat_map(f).collect()
    };
    let ssdd_of = |r: &PlatoonRecord| ssdd_series(r, REACTION_TIME, DECEL);
    let (pet_g, pet_r) = (collect(generated, &pet_series), collect(reference, &pet_series));
    let (ssdd_g, ssdd_r) = (collect(generated, &ssdd_of), collect(reference, &ssdd_of));
    let (pe, se) = (pet_edges(), ssdd_edges());
    Ok(SafetyDistributions {
        pet_hist: Histogram::build(&pet_g, &pe)?,
        ssdd_hist: Histogram::build(&ssdd_g, &se)?,
        pet_reference_hist: Histogram::build(&pet_r, &pe)?,
        ssdd_reference_hist: Histogram::build(&ssdd_r, &se)?,
        pet: histogram_divergences(&pet_g, &pet_r, &pe)?,
        ssdd: histogram_divergences(&ssdd_g, &ssdd_r, &se)?,
    })
}
