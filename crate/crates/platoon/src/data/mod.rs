//! Platoon trajectories: the record type, CSV ingestion, sample windows,
//! dataset splits and a synthetic generator.

mod csv;
mod split;
mod synth;
mod window;

pub use self::csv::{format_sig9, load_trajectories, to_csv, write_record, write_trajectories, Loaded, Rejection, HEADER};
pub use split::{split_counts, split_dataset, DatasetSplit};
pub use synth::{
    generate_synthetic_platoons, sample_idm, synthesize_platoon, LeadProfile, ProfileMix, SynthConfig, Synthesis,
};
pub use window::{extract_windows, window_count, NormStats, StateWindow, D_IN};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling interval of every record, in seconds.
pub const DT: f64 = 0.1;

/// One vehicle's series. `position` is the front bumper, increasing in the
/// direction of travel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSeries {
    pub position: Vec<f64>,
    pub speed: Vec<f64>,
    pub length: f64,
}

/// Vehicle 0 is the leader; vehicles `1..=N` follow in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatoonRecord {
    pub platoon_id: String,
    pub dt: f64,
    /// Frame number of the first sample.
    pub start_frame: i64,
    pub vehicles: Vec<VehicleSeries>,
}

impl PlatoonRecord {
    pub fn duration(&self) -> usize {
        self.vehicles.first().map_or(0, |v| v.speed.len())
    }

    /// Number of followers `N`.
    pub fn followers(&self) -> usize {
        self.vehicles.len().saturating_sub(1)
    }

    /// Bumper-to-bumper gap of follower `n >= 1` at step `t`.
    pub fn gap(&self, n: usize, t: usize) -> f64 {
        let lead = &self.vehicles[n - 1];
        lead.position[t] - lead.length - self.vehicles[n].position[t]
    }

    /// Relative speed `v_{n-1} - v_n` of follower `n >= 1` at step `t`.
    pub fn rel_speed(&self, n: usize, t: usize) -> f64 {
        self.vehicles[n - 1].speed[t] - self.vehicles[n].speed[t]
    }

    /// `[v, s, dv]` of follower `n >= 1` at step `t`.
    pub fn state(&self, n: usize, t: usize) -> [f64; 3] {
        [self.vehicles[n].speed[t], self.gap(n, t), self.rel_speed(n, t)]
    }

    /// The first `len` steps of this record.
    pub fn truncated(&self, len: usize) -> Self {
        let mut out = self.clone();
        for v in &mut out.vehicles {
            v.position.truncate(len);
            v.speed.truncate(len);
        }
        out
    }

    /// Checks the record invariants: at least one follower, equal series
    /// lengths, finite values, non-negative speeds and positive gaps.
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidPlatoon {
            platoon_id: self.platoon_id.clone(),
            reason,
        };
        if self.vehicles.len() < 2 {
            return Err(bad("a platoon needs a leader and at least one follower".into()));
        }
        let len = self.duration();
        if len == 0 {
            return Err(bad("empty series".into()));
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            if v.position.len() != len || v.speed.len() != len {
                return Err(bad(format!("vehicle {i} has a series of different length")));
            }
            if !(v.length.is_finite() && v.length > 0.0) {
                return Err(bad(format!("vehicle {i} has invalid length {}", v.length)));
            }
            for t in 0..len {
                if !v.position[t].is_finite() || !v.speed[t].is_finite() {
                    return Err(bad(format!("vehicle {i} has a non-finite value at frame {}", self.frame(t))));
                }
                if v.speed[t] < 0.0 {
                    return Err(bad(format!("vehicle {i} has negative speed at frame {}", self.frame(t))));
                }
            }
        }
        for n in 1..self.vehicles.len() {
            for t in 0..len {
                let s = self.gap(n, t);
                if s <= 0.0 {
                    return Err(bad(format!(
                        "vehicle {n} overlaps vehicle {} at frame {} (gap {s} m)",
                        n - 1,
                        self.frame(t)
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn frame(&self, t: usize) -> i64 {
        self.start_frame + t as i64
    }
}
