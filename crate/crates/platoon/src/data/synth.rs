use std::f64::consts::PI;

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PlatoonRecord, DT};
use crate::baseline::{simulate_noisy, IdmParams, VehicleInit};
use crate::error::{Error, Result};

const MAX_ATTEMPTS: u64 = 100;

/// Relative weights of the leader speed profile families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileMix {
    pub constant_acceleration: f64,
    pub constant_deceleration: f64,
    pub sinusoidal: f64,
    pub piecewise_random: f64,
}

impl Default for ProfileMix {
    fn default() -> Self {
        Self {
            constant_acceleration: 0.25,
            constant_deceleration: 0.25,
            sinusoidal: 0.25,
            piecewise_random: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LeadProfile {
    Constant { speed: f64 },
    ConstantAcceleration { initial: f64, accel: f64, cap: f64 },
    ConstantDeceleration { initial: f64, decel: f64 },
    Sinusoidal { mean: f64, amplitude: f64, period: f64, phase: f64 },
    /// Segments of `(duration_s, accel)`; speeds clamped to `[0, cap]`.
    PiecewiseRandom { initial: f64, segments: Vec<(f64, f64)>, cap: f64 },
}

impl LeadProfile {
    pub fn speeds(&self, steps: usize, dt: f64) -> Vec<f64> {
        match self {
            LeadProfile::Constant { speed } => vec![*speed; steps],
            LeadProfile::ConstantAcceleration { initial, accel, cap } => (0..steps)
                .map(|t| (initial + accel * t as f64 * dt).min(*cap))
                .collect(),
            LeadProfile::ConstantDeceleration { initial, decel } => (0..steps)
                .map(|t| (initial - decel * t as f64 * dt).max(0.0))
                .collect(),
            LeadProfile::Sinusoidal {
                mean,
                amplitude,
                period,
                phase,
            } => (0..steps)
                .map(|t| (mean + amplitude * (2.0 * PI * t as f64 * dt / period + phase).sin()).max(0.0))
                .collect(),
            LeadProfile::PiecewiseRandom { initial, segments, cap } => {
                let mut out = Vec::with_capacity(steps);
                let mut v = *initial;
                let (mut seg, mut elapsed) = (0, 0.0);
                for _ in 0..steps {
                    out.push(v);
                    while seg + 1 < segments.len() && elapsed >= segments[seg].0 - 1e-9 {
                        elapsed -= segments[seg].0;
                        seg += 1;
                    }
                    let a = segments.get(seg).map_or(0.0, |s| s.1);
                    v = (v + a * dt).clamp(0.0, *cap);
                    elapsed += dt;
                }
                out
            }
        }
    }

    pub fn initial_speed(&self) -> f64 {
        self.speeds(1, DT)[0]
    }

    pub fn sample(rng: &mut impl Rng, mix: &ProfileMix, duration_s: f64) -> Result<Self> {
        let weights = [
            mix.constant_acceleration,
            mix.constant_deceleration,
            mix.sinusoidal,
            mix.piecewise_random,
        ];
        let index = WeightedIndex::new(weights)
            .map_err(|e| Error::Config(format!("profile mix {mix:?}: {e}")))?;
        Ok(match index.sample(rng) {
            0 => LeadProfile::ConstantAcceleration {
                initial: rng.gen_range(5.0..15.0),
                accel: rng.gen_range(0.3..1.2),
                cap: 30.0,
            },
            1 => LeadProfile::ConstantDeceleration {
                initial: rng.gen_range(15.0..24.0),
                decel: rng.gen_range(0.4..1.5),
            },
            2 => LeadProfile::Sinusoidal {
                mean: rng.gen_range(10.0..20.0),
                amplitude: rng.gen_range(1.0..4.0),
                period: rng.gen_range(5.0..15.0),
                phase: rng.gen_range(0.0..2.0 * PI),
            },
            _ => {
                let mut segments = Vec::new();
                let mut total = 0.0;
                while total < duration_s {
                    let d = rng.gen_range(1.5..4.0);
                    segments.push((d, rng.gen_range(-1.5..1.2)));
                    total += d;
                }
                LeadProfile::PiecewiseRandom {
                    initial: rng.gen_range(8.0..22.0),
                    segments,
                    cap: 30.0,
                }
            }
        })
    }
}

/// Samples IDM parameters from the synthesis ranges.
pub fn sample_idm(rng: &mut impl Rng) -> IdmParams {
    IdmParams::new(
        rng.gen_range(25.0..35.0),
        rng.gen_range(1.0..2.0),
        rng.gen_range(1.5..3.0),
        rng.gen_range(0.8..1.5),
        rng.gen_range(1.0..2.5),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub count: usize,
    pub followers: usize,
    pub duration_s: f64,
    /// Standard deviation of the follower acceleration noise, m/s^2.
    pub noise_sigma: f64,
    pub mix: ProfileMix,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 100,
            followers: 6,
            duration_s: 15.0,
            noise_sigma: 0.1,
            mix: ProfileMix::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub records: Vec<PlatoonRecord>,
    /// Platoons regenerated after a collision.
    pub retries: usize,
}

/// Simulates one platoon behind `profile`. Followers start at the leader's
/// initial speed with their own equilibrium gaps; the rearmost front bumper
/// starts at position 0.
pub fn synthesize_platoon(
    platoon_id: &str,
    profile: &LeadProfile,
    params: &[IdmParams],
    lengths: &[f64],
    steps: usize,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PlatoonRecord> {
    let lead = profile.speeds(steps, DT);
    let v = lead[0];
    let gaps: Vec<f64> = params.iter().map(|p| p.equilibrium_gap(v.min(0.95 * p.v0))).collect();
    let total: f64 = gaps.iter().zip(lengths).map(|(s, l)| s + l).sum();
    let mut init = vec![VehicleInit { position: total, speed: v }];
    for (i, s) in gaps.iter().enumerate() {
        let prev = init[i].position;
        init.push(VehicleInit {
            position: prev - lengths[i] - s,
            speed: v,
        });
    }
    let sim = simulate_noisy(platoon_id, &lead, &init, lengths, params, DT, Some((rng, noise_sigma)))?;
    match sim.collision {
        Some(e) => Err(e),
        None => Ok(sim.record),
    }
}

fn one_platoon(config: &SynthConfig, seed: u64, index: usize) -> Result<(PlatoonRecord, usize)> {
    let steps = (config.duration_s / DT).round() as usize;
    let id = format!("P{index:05}");
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((index as u64) * MAX_ATTEMPTS + attempt);
        let profile = LeadProfile::sample(&mut rng, &config.mix, config.duration_s)?;
        let params: Vec<IdmParams> = (0..config.followers).map(|_| sample_idm(&mut rng)).collect();
        let lengths: Vec<f64> = (0..=config.followers).map(|_| rng.gen_range(4.0..5.0)).collect();
        match synthesize_platoon(&id, &profile, &params, &lengths, steps, config.noise_sigma, &mut rng) {
            Ok(r) => return Ok((r, attempt as usize)),
            Err(Error::Collision { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Invalid(format!("platoon {id}: no collision-free draw in {MAX_ATTEMPTS} attempts")))
}

/// Generates `config.count` platoons. Platoon `i` draws from its own RNG
/// stream, so output is independent of thread count.
pub fn generate_synthetic_platoons(config: &SynthConfig, seed: u64) -> Result<Synthesis> {
    if config.followers == 0 {
        return Err(Error::Config("synthetic platoons need at least one follower".into()));
    }
    if !(config.duration_s >= DT) || !(config.noise_sigma >= 0.0) {
        return Err(Error::Config(format!("invalid synthesis settings {config:?}")));
    }
    let out: Vec<(PlatoonRecord, usize)> = (0..config.count)
        .into_par_iter()
        .map(|i| one_platoon(config, seed, i))
        .collect::<Result<_>>()?;
    let retries = out.iter().map(|(_, r)| r).sum();
    if retries > 0 {
        log::info!("synthesis: {retries} platoons regenerated after collisions");
    }
    Ok(Synthesis {
        records: out.into_iter().map(|(r, _)| r).collect(),
        retries,
    })
}
