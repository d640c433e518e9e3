use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{idm_acceleration, IdmParams};
use crate::data::PlatoonRecord;
use crate::error::{Error, Result};

/// Fitness assigned to parameter sets whose simulation collides.
const COLLISION_FITNESS: f64 = 1e6;

/// Box constraints in the order `(v0, T, s0, a_max, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: [f64; 5],
    pub hi: [f64; 5],
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            lo: [10.0, 0.5, 0.5, 0.5, 0.5],
            hi: [40.0, 3.0, 5.0, 4.0, 5.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub blend_alpha: f64,
    /// Mutation standard deviation as a fraction of each parameter's range.
    pub mutation_sigma: f64,
    /// Per-gene mutation probability.
    pub mutation_rate: f64,
    pub elitism: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 50,
            generations: 100,
            tournament: 3,
            blend_alpha: 0.5,
            mutation_sigma: 0.05,
            mutation_rate: 0.2,
            elitism: 2,
        }
    }
}

/// One follower and the leader directly ahead of it, as observed.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub vehicle_index: usize,
    pub dt: f64,
    pub leader_position: Vec<f64>,
    pub leader_length: f64,
    pub leader_speed: Vec<f64>,
    pub position: Vec<f64>,
    pub speed: Vec<f64>,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.speed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speed.is_empty()
    }

    pub fn gap(&self, t: usize) -> f64 {
        self.leader_position[t] - self.leader_length - self.position[t]
    }
}

/// Extracts follower `vehicle` (1-based) over steps `start..start+len`.
pub fn observation(record: &PlatoonRecord, vehicle: usize, start: usize, len: usize) -> Result<Observation> {
    if vehicle == 0 || vehicle > record.followers() {
        return Err(Error::Invalid(format!(
            "vehicle index {vehicle} is not a follower of platoon {}",
            record.platoon_id
        )));
    }
    if len < 2 || start + len > record.duration() {
        return Err(Error::Invalid(format!(
            "observation {start}..{} does not fit a record of {} steps",
            start + len,
            record.duration()
        )));
    }
    let lead = &record.vehicles[vehicle - 1];
    let me = &record.vehicles[vehicle];
    Ok(Observation {
        vehicle_index: vehicle,
        dt: record.dt,
        leader_position: lead.position[start..start + len].to_vec(),
        leader_length: lead.length,
        leader_speed: lead.speed[start..start + len].to_vec(),
        position: me.position[start..start + len].to_vec(),
        speed: me.speed[start..start + len].to_vec(),
    })
}

/// Simulated `(speed, gap)` of the observed follower replayed with `p`
/// against the observed leader, from the observed initial state. Stops at
/// the first non-positive gap.
pub fn simulate_follower(obs: &Observation, p: &IdmParams) -> (Vec<f64>, Vec<f64>) {
    let n = obs.len();
    let mut speeds = Vec::with_capacity(n);
    let mut gaps = Vec::with_capacity(n);
    let (mut x, mut v) = (obs.position[0], obs.speed[0]);
    for t in 0..n {
        let s = obs.leader_position[t] - obs.leader_length - x;
        if !(s > 0.0) {
            break;
        }
        speeds.push(v);
        gaps.push(s);
        if t + 1 == n {
            break;
        }
        let a = match idm_acceleration(v, s, v - obs.leader_speed[t], p) {
            Ok(a) => a,
            Err(_) => break,
        };
        x += obs.dt * v;
        v = (v + obs.dt * a).max(0.0);
    }
    (speeds, gaps)
}

/// RMSE of simulated vs observed gap plus RMSE of speed.
pub fn fitness(obs: &Observation, p: &IdmParams) -> f64 {
    let (speeds, gaps) = simulate_follower(obs, p);
    if speeds.len() < obs.len() {
        return COLLISION_FITNESS;
    }
    let n = obs.len() as f64;
    let (mut es, mut ev) = (0.0, 0.0);
    for t in 0..obs.len() {
        es += (gaps[t] - obs.gap(t)).powi(2);
        ev += (speeds[t] - obs.speed[t]).powi(2);
    }
    (es / n).sqrt() + (ev / n).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub vehicle_index: usize,
    pub params: IdmParams,
    pub fitness: f64,
    pub generations_used: usize,
    /// Best fitness after initialisation and after each generation.
    #[serde(skip)]
    pub best_history: Vec<f64>,
}

fn evaluate(obs: &Observation, pop: &[[f64; 5]]) -> Vec<f64> {
    pop.par_iter()
        .map(|x| fitness(obs, &IdmParams::from_array(*x)))
        .collect()
}

fn best_index(fit: &[f64]) -> usize {
    let mut best = 0;
    for (i, f) in fit.iter().enumerate() {
        if *f < fit[best] {
            best = i;
        }
    }
    best
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Real-coded GA: tournament selection, BLX-alpha crossover, Gaussian
/// mutation and elitism. Each generation draws from its own RNG stream.
pub fn calibrate_ga(obs: &Observation, bounds: &Bounds, config: &GaConfig, seed: u64) -> Result<Calibration> {
    if obs.len() < 2 {
        return Err(Error::Invalid("calibration needs at least two observed steps".into()));
    }
    if (0..obs.len()).any(|t| !(obs.gap(t) > 0.0)) {
        return Err(Error::Invalid("observation contains non-positive gaps".into()));
    }
    if config.population == 0 || config.tournament == 0 || config.elitism > config.population {
        return Err(Error::Config(format!("invalid GA settings {config:?}")));
    }
    let range: [f64; 5] = std::array::from_fn(|j| bounds.hi[j] - bounds.lo[j]);
    if range.iter().any(|r| !(*r >= 0.0)) || bounds.lo.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Config(format!("invalid bounds {bounds:?}")));
    }
    let clamp = |x: f64, j: usize| x.clamp(bounds.lo[j], bounds.hi[j]);

    let mut rng = stream(seed, 0);
    let mut pop: Vec<[f64; 5]> = (0..config.population)
        .map(|_| std::array::from_fn(|j| bounds.lo[j] + range[j] * rng.gen::<f64>()))
        .collect();
    let mut fit = evaluate(obs, &pop);
    let mut history = vec![fit[best_index(&fit)]];

    for g in 0..config.generations {
        let mut rng = stream(seed, g as u64 + 1);
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b)));
        let mut next: Vec<[f64; 5]> = order[..config.elitism].iter().map(|&i| pop[i]).collect();
        let tournament = |rng: &mut ChaCha8Rng| {
            let mut best = rng.gen_range(0..pop.len());
            for _ in 1..config.tournament {
                let c = rng.gen_range(0..pop.len());
                if fit[c] < fit[best] {
                    best = c;
                }
            }
            best
        };
        while next.len() < config.population {
            let (a, b) = (pop[tournament(&mut rng)], pop[tournament(&mut rng)]);
            let child: [f64; 5] = std::array::from_fn(|j| {
                let (lo, hi) = (a[j].min(b[j]), a[j].max(b[j]));
                let d = hi - lo;
                let mut x = lo - config.blend_alpha * d + (1.0 + 2.0 * config.blend_alpha) * d * rng.gen::<f64>();
                if rng.gen::<f64>() < config.mutation_rate {
                    let z: f64 = rng.sample(StandardNormal);
                    x += config.mutation_sigma * range[j] * z;
                }
                clamp(x, j)
            });
            next.push(child);
        }
        pop = next;
        fit = evaluate(obs, &pop);
        history.push(fit[best_index(&fit)]);
    }
    let best = best_index(&fit);
    Ok(Calibration {
        vehicle_index: obs.vehicle_index,
        params: IdmParams::from_array(pop[best]),
        fitness: fit[best],
        generations_used: config.generations,
        best_history: history,
    })
}
