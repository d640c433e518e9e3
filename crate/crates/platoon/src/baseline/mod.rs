//! Intelligent Driver Model simulation and genetic-algorithm calibration.

mod ga;

pub use ga::{calibrate_ga, fitness, observation, simulate_follower, Bounds, Calibration, GaConfig, Observation};

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{PlatoonRecord, VehicleSeries};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired speed, m/s.
    pub v0: f64,
    /// Time headway, s.
    #[serde(rename = "T")]
    pub t_headway: f64,
    /// Jam distance, m.
    pub s0: f64,
    /// Maximum acceleration, m/s^2.
    pub a_max: f64,
    /// Comfortable deceleration, m/s^2.
    pub b: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    4.0
}

impl IdmParams {
    pub fn new(v0: f64, t_headway: f64, s0: f64, a_max: f64, b: f64) -> Self {
        Self {
            v0,
            t_headway,
            s0,
            a_max,
            b,
            delta: 4.0,
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.v0, self.t_headway, self.s0, self.a_max, self.b]
    }

    pub fn from_array(x: [f64; 5]) -> Self {
        Self::new(x[0], x[1], x[2], x[3], x[4])
    }

    /// Desired dynamic gap `s*`.
    pub fn desired_gap(&self, v: f64, dv_approach: f64) -> f64 {
        let dynamic = v * self.t_headway + v * dv_approach / (2.0 * (self.a_max * self.b).sqrt());
        self.s0 + dynamic.max(0.0)
    }

    /// Gap at which a vehicle cruising at `v` behind a leader at the same
    /// speed has zero acceleration. Requires `0 <= v < v0`.
    pub fn equilibrium_gap(&self, v: f64) -> f64 {
        self.desired_gap(v, 0.0) / (1.0 - (v / self.v0).powf(self.delta)).sqrt()
    }
}

/// IDM acceleration. `dv_approach = v_follower - v_leader`, the negation of
/// the platoon relative speed used elsewhere in this crate.
pub fn idm_acceleration(v: f64, s: f64, dv_approach: f64, p: &IdmParams) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::Invalid(format!("idm: gap must be positive, got {s}")));
    }
    let ratio = p.desired_gap(v, dv_approach) / s;
    Ok(p.a_max * (1.0 - (v / p.v0).powf(p.delta) - ratio * ratio))
}

/// IDM acceleration from the platoon state `[v, s, dv]` with
/// `dv = v_leader - v_follower`.
pub fn idm_from_state(state: [f64; 3], p: &IdmParams) -> Result<f64> {
    idm_acceleration(state[0], state[1], -state[2], p)
}

/// Initial position and speed of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleInit {
    pub position: f64,
    pub speed: f64,
}

#[derive(Debug)]
pub struct IdmSimulation {
    /// Full record, or the steps before the first collision.
    pub record: PlatoonRecord,
    pub collision: Option<Error>,
}

/// Simulates followers behind a leader that drives `lead_speeds` (one value
/// per step; `initial[0].speed` is ignored). Euler integration:
/// `v(t+1) = max(0, v + dt*a)`, `x(t+1) = x + dt*v(t)`.
pub fn simulate_idm_platoon(
    platoon_id: &str,
    lead_speeds: &[f64],
    initial: &[VehicleInit],
    lengths: &[f64],
    params: &[IdmParams],
    dt: f64,
) -> Result<IdmSimulation> {
    simulate_noisy(platoon_id, lead_speeds, initial, lengths, params, dt, None)
}

pub(crate) fn simulate_noisy(
    platoon_id: &str,
    lead_speeds: &[f64],
    initial: &[VehicleInit],
    lengths: &[f64],
    params: &[IdmParams],
    dt: f64,
    mut noise: Option<(&mut dyn RngCore, f64)>,
) -> Result<IdmSimulation> {
    let n = params.len();
    if initial.len() != n + 1 || lengths.len() != n + 1 {
        return Err(Error::Invalid(format!(
            "simulate: {} followers need {} initial states and lengths, got {} and {}",
            n,
            n + 1,
            initial.len(),
            lengths.len()
        )));
    }
    if lead_speeds.is_empty() {
        return Err(Error::Invalid("simulate: empty leader profile".into()));
    }
    let len = lead_speeds.len();
    let mut vehicles: Vec<VehicleSeries> = (0..=n)
        .map(|i| VehicleSeries {
            position: Vec::with_capacity(len),
            speed: Vec::with_capacity(len),
            length: lengths[i],
        })
        .collect();
    let mut x: Vec<f64> = initial.iter().map(|v| v.position).collect();
    let mut v: Vec<f64> = initial.iter().map(|v| v.speed).collect();
    v[0] = lead_speeds[0];
    let mut collision = None;
    for i in 1..=n {
        let s = x[i - 1] - lengths[i - 1] - x[i];
        if !(s > 0.0) {
            return Err(Error::Collision {
                vehicle: i,
                frame: 0,
                gap: s,
            });
        }
    }
    'steps: for t in 0..len {
        for i in 0..=n {
            vehicles[i].position.push(x[i]);
            vehicles[i].speed.push(v[i]);
        }
        if t + 1 == len {
            break;
        }
        let mut nv = v.clone();
        nv[0] = lead_speeds[t + 1];
        for i in 1..=n {
            let s = x[i - 1] - lengths[i - 1] - x[i];
            let mut a = idm_acceleration(v[i], s, v[i] - v[i - 1], &params[i - 1])?;
            if let Some((rng, sigma)) = noise.as_mut() {
                if *sigma > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    a += *sigma * z;
                }
            }
            nv[i] = (v[i] + dt * a).max(0.0);
        }
        for i in 0..=n {
            x[i] += dt * v[i];
        }
        v = nv;
        for i in 1..=n {
            let s = x[i - 1] - lengths[i - 1] - x[i];
            if !(s > 0.0) {
                collision = Some(Error::Collision {
                    vehicle: i,
                    frame: t + 1,
                    gap: s,
                });
                break 'steps;
            }
        }
    }
    Ok(IdmSimulation {
        record: PlatoonRecord {
            platoon_id: platoon_id.to_string(),
            dt,
            start_frame: 0,
            vehicles,
        },
        collision,
    })
}
