//! Closed-loop receding-horizon platoon simulation.
//!
//! After a warmup copied from the reference, a controller is asked every
//! `replan_interval` steps for the followers' next `[v, s]` given the
//! simulated history and the reference leader's future speeds.

use serde::{Deserialize, Serialize};

use crate::apecg::{expected_state, rollout, ExpectedState, Theta};
use crate::baseline::{idm_acceleration, IdmParams};
use crate::data::{PlatoonRecord, StateWindow, VehicleSeries, D_IN};
use crate::error::{Error, Result};
use crate::mtfln::{model_forward, Mode, ModelParams};
use crate::training::mix;

pub const WARMUP_STEPS: usize = 21;

/// What a controller sees at a replanning step.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanContext {
    pub platoon_id: String,
    /// Index of the current step in the record.
    pub t: usize,
    pub n: usize,
    pub p: usize,
    /// `(N, P, 3)` simulated `[v, s, dv]` ending at step `t`.
    pub history: Vec<f64>,
    /// Leader speeds over `t+1..=t+H`, padded with the last recorded speed.
    pub lead_future: Vec<f64>,
}

impl PlanContext {
    pub fn current(&self, i: usize) -> [f64; 3] {
        let o = (i * self.p + self.p - 1) * D_IN;
        [self.history[o], self.history[o + 1], self.history[o + 2]]
    }

    pub fn horizon(&self) -> usize {
        self.lead_future.len()
    }
}

/// Planned follower states, `(N, H)` each; index `k` is step `t + k + 1`.
/// A plan may stop early at a step whose gap is not positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub steps: usize,
    pub v: Vec<f64>,
    pub s: Vec<f64>,
}

impl Plan {
    fn from_rows(n: usize, steps: usize, v: Vec<f64>, s: Vec<f64>) -> Self {
        debug_assert_eq!(v.len(), n * steps);
        Self { steps, v, s }
    }

    fn at(&self, i: usize, k: usize) -> (f64, f64) {
        (self.v[i * self.steps + k], self.s[i * self.steps + k])
    }
}

pub trait Controller: Sync {
    /// History length required.
    fn history_len(&self) -> usize;
    /// Steps produced per plan.
    fn horizon(&self) -> usize;
    fn plan(&self, ctx: &PlanContext) -> Result<Plan>;
    fn source(&self) -> RunSource;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunSource {
    Model { checkpoint: String },
    Idm { params: Vec<IdmParams> },
    Scripted { theta: [f64; 3] },
}

/// The trained network in eval mode, optionally with seeded latent noise.
pub struct ModelController<'a> {
    pub params: &'a ModelParams,
    pub label: String,
    pub noise_seed: Option<u64>,
}

impl Controller for ModelController<'_> {
    fn history_len(&self) -> usize {
        self.params.config.p
    }

    fn horizon(&self) -> usize {
        self.params.config.f
    }

    fn plan(&self, ctx: &PlanContext) -> Result<Plan> {
        let window = StateWindow {
            n: ctx.n,
            p: ctx.p,
            f: ctx.horizon(),
            history: ctx.history.clone(),
            lead_future: ctx.lead_future.clone(),
            targets: vec![0.0; ctx.n * ctx.horizon() * 2],
            platoon_id: ctx.platoon_id.clone(),
            t: ctx.t,
        };
        let mode = match self.noise_seed {
            Some(seed) => Mode::Train {
                seed: mix(seed, ctx.t as u64, 0x5133, 0),
            },
            None => Mode::Eval,
        };
        let (r, _, _) = model_forward(&window, self.params, mode)?;
        Ok(Plan::from_rows(r.n, r.f, r.v, r.s))
    }

    fn source(&self) -> RunSource {
        RunSource::Model {
            checkpoint: self.label.clone(),
        }
    }
}

/// A constant theta row for every follower, rolled out by the linear model.
/// The expected state comes from the simulated history unless fixed.
#[derive(Debug, Clone)]
pub struct ScriptedTheta {
    pub theta: [f64; 3],
    pub p: usize,
    pub f: usize,
    pub xstar: Option<ExpectedState>,
    pub dt: f64,
}

impl Controller for ScriptedTheta {
    fn history_len(&self) -> usize {
        self.p
    }

    fn horizon(&self) -> usize {
        self.f
    }

    fn plan(&self, ctx: &PlanContext) -> Result<Plan> {
        let initial: Vec<[f64; 3]> = (0..ctx.n).map(|i| ctx.current(i)).collect();
        let xstar = match &self.xstar {
            Some(x) => x.clone(),
            None => expected_state(&ctx.history, ctx.n, ctx.p),
        };
        let f = ctx.horizon();
        let theta = Theta::constant(ctx.n, 1, self.theta);
        let r = rollout(&initial, &ctx.lead_future, &theta, &xstar, f, self.dt)?;
        Ok(Plan::from_rows(r.n, r.f, r.v, r.s))
    }

    fn source(&self) -> RunSource {
        RunSource::Scripted { theta: self.theta }
    }
}

/// Stepwise IDM with `v >= 0`; the gap integrates the relative speed.
#[derive(Debug, Clone)]
pub struct IdmController {
    pub params: Vec<IdmParams>,
    pub p: usize,
    pub f: usize,
    pub dt: f64,
}

impl Controller for IdmController {
    fn history_len(&self) -> usize {
        self.p
    }

    fn horizon(&self) -> usize {
        self.f
    }

    fn plan(&self, ctx: &PlanContext) -> Result<Plan> {
        if self.params.len() != ctx.n {
            return Err(Error::Invalid(format!(
                "IDM controller has {} parameter sets for {} followers",
                self.params.len(),
                ctx.n
            )));
        }
        let h = ctx.horizon();
        let mut state: Vec<[f64; 3]> = (0..ctx.n).map(|i| ctx.current(i)).collect();
        let mut v = vec![0.0; ctx.n * h];
        let mut s = vec![0.0; ctx.n * h];
        for k in 0..h {
            let mut collided = false;
            for i in 0..ctx.n {
                let [vi, si, dvi] = state[i];
                let a = idm_acceleration(vi, si, -dvi, &self.params[i])?;
                let nv = (vi + self.dt * a).max(0.0);
                let ns = si + self.dt * dvi;
                let lead = if i == 0 { ctx.lead_future[k] } else { state[i - 1][0] };
                state[i] = [nv, ns, lead - nv];
                v[i * h + k] = nv;
                s[i * h + k] = ns;
                collided |= !(ns > 0.0);
            }
            if collided {
                let keep = k + 1;
                let cut = |x: &[f64]| (0..ctx.n).flat_map(|i| x[i * h..i * h + keep].to_vec()).collect();
                return Ok(Plan::from_rows(ctx.n, keep, cut(&v), cut(&s)));
            }
        }
        Ok(Plan::from_rows(ctx.n, h, v, s))
    }

    fn source(&self) -> RunSource {
        RunSource::Idm {
            params: self.params.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionInfo {
    pub vehicle: usize,
    pub frame: i64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub source: RunSource,
    /// Simulated record; cut before the first collision if there was one.
    pub generated: PlatoonRecord,
    pub reference: PlatoonRecord,
    pub warmup_steps: usize,
    pub replan_interval: usize,
    pub collision: Option<CollisionInfo>,
}

impl SimulationRun {
    pub fn completed(&self) -> bool {
        self.collision.is_none()
    }
}

/// Runs `controller` closed-loop over `reference`.
///
/// Speeds are floored at zero when appended; positions are derived from the
/// leader's reference positions and the simulated gaps.
pub fn closed_loop_simulate(
    reference: &PlatoonRecord,
    controller: &dyn Controller,
    warmup_steps: usize,
    replan_interval: usize,
) -> Result<SimulationRun> {
    let duration = reference.duration();
    let n = reference.followers();
    let p = controller.history_len();
    let f = controller.horizon();
    if warmup_steps < p {
        return Err(Error::Config(format!("warmup of {warmup_steps} steps is shorter than the history P={p}")));
    }
    if replan_interval == 0 || replan_interval > f {
        return Err(Error::Config(format!("replan interval must be in 1..={f}, got {replan_interval}")));
    }
    if duration < warmup_steps + f {
        return Err(Error::InvalidPlatoon {
            platoon_id: reference.platoon_id.clone(),
            reason: format!("duration {duration} is shorter than warmup {warmup_steps} plus horizon {f}"),
        });
    }
    let lead = &reference.vehicles[0];
    // Simulated follower state, (N) vectors per step.
    let mut v: Vec<Vec<f64>> = (1..=n).map(|i| reference.vehicles[i].speed[..warmup_steps].to_vec()).collect();
    let mut s: Vec<Vec<f64>> = (1..=n).map(|i| (0..warmup_steps).map(|t| reference.gap(i, t)).collect()).collect();
    let mut collision = None;
    let mut t = warmup_steps - 1;
    'outer: while t + 1 < duration {
        let mut history = Vec::with_capacity(n * p * D_IN);
        for i in 0..n {
            for k in t + 1 - p..=t {
                let lead_v = if i == 0 { lead.speed[k] } else { v[i - 1][k] };
                history.extend_from_slice(&[v[i][k], s[i][k], lead_v - v[i][k]]);
            }
        }
        let lead_future = (t + 1..=t + f).map(|k| lead.speed[k.min(duration - 1)]).collect();
        let ctx = PlanContext {
            platoon_id: reference.platoon_id.clone(),
            t,
            n,
            p,
            history,
            lead_future,
        };
        let plan = controller.plan(&ctx)?;
        let take = replan_interval.min(duration - 1 - t);
        for k in 0..take {
            if k >= plan.steps {
                return Err(Error::Invalid(format!(
                    "controller returned {} steps without a collision, {} needed",
                    plan.steps, take
                )));
            }
            for i in 0..n {
                let (vi, si) = plan.at(i, k);
                v[i].push(vi.max(0.0));
                s[i].push(si);
            }
            if let Some(i) = (0..n).find(|&i| !(s[i][t + 1 + k] > 0.0)) {
                collision = Some(CollisionInfo {
                    vehicle: i + 1,
                    frame: reference.frame(t + 1 + k),
                    gap: s[i][t + 1 + k],
                });
                break 'outer;
            }
        }
        t += take;
    }
    let len = if collision.is_some() { v[0].len() - 1 } else { duration };
    let mut vehicles = vec![VehicleSeries {
        position: lead.position[..len].to_vec(),
        speed: lead.speed[..len].to_vec(),
        length: lead.length,
    }];
    for i in 0..n {
        let ahead = &vehicles[i];
        let position = if len <= warmup_steps {
            reference.vehicles[i + 1].position[..len].to_vec()
        } else {
            let mut x = reference.vehicles[i + 1].position[..warmup_steps].to_vec();
            x.extend((warmup_steps..len).map(|k| ahead.position[k] - ahead.length - s[i][k]));
            x
        };
        vehicles.push(VehicleSeries {
            position,
            speed: v[i][..len].to_vec(),
            length: reference.vehicles[i + 1].length,
        });
    }
    if let Some(c) = &collision {
        log::warn!(
            "{}: vehicle {} collides at frame {} (gap {:.4} m); keeping {len} steps",
            reference.platoon_id,
            c.vehicle,
            c.frame,
            c.gap
        );
    }
    Ok(SimulationRun {
        source: controller.source(),
        generated: PlatoonRecord {
            platoon_id: reference.platoon_id.clone(),
            dt: reference.dt,
            start_frame: reference.start_frame,
            vehicles,
        },
        reference: reference.clone(),
        warmup_steps,
        replan_interval,
        collision,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub vehicle_index: usize,
    pub frame: i64,
    pub speed_dev_mps: f64,
    pub position_dev_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeviationStats {
    pub max_abs: f64,
    pub mean_abs: f64,
    pub rmse: f64,
}

impl DeviationStats {
    fn of(x: impl Iterator<Item = f64> + Clone) -> Self {
        let count = x.clone().count();
        if count == 0 {
            return Self::default();
        }
        let c = count as f64;
        Self {
            max_abs: x.clone().map(f64::abs).fold(0.0, f64::max),
            mean_abs: x.clone().map(f64::abs).sum::<f64>() / c,
            rmse: (x.map(|d| d * d).sum::<f64>() / c).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub platoon_id: String,
    pub steps_compared: usize,
    /// True when the records differ in length.
    pub truncated: bool,
    pub speed: DeviationStats,
    pub position: DeviationStats,
    #[serde(skip)]
    pub rows: Vec<DeviationRow>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("vehicle_index,frame,speed_dev_mps,position_dev_m\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.vehicle_index, r.frame, r.speed_dev_mps, r.position_dev_m
            ));
        }
        out
    }
}

/// Generated-minus-reference deviations of every follower over the common
/// prefix of two records.
pub fn compare_records(generated: &PlatoonRecord, reference: &PlatoonRecord) -> Result<Comparison> {
    if generated.vehicles.len() != reference.vehicles.len() {
        return Err(Error::Invalid(format!(
            "compare: {} vehicles against {}",
            generated.vehicles.len(),
            reference.vehicles.len()
        )));
    }
    let steps = generated.duration().min(reference.duration());
    let mut rows = Vec::with_capacity(steps * generated.followers());
    for i in 1..generated.vehicles.len() {
        let (g, r) = (&generated.vehicles[i], &reference.vehicles[i]);
        for t in 0..steps {
            rows.push(DeviationRow {
                vehicle_index: i,
                frame: reference.frame(t),
                speed_dev_mps: g.speed[t] - r.speed[t],
                position_dev_m: g.position[t] - r.position[t],
            });
        }
    }
    Ok(Comparison {
        platoon_id: reference.platoon_id.clone(),
        steps_compared: steps,
        truncated: generated.duration() != reference.duration(),
        speed: DeviationStats::of(rows.iter().map(|r| r.speed_dev_mps)),
        position: DeviationStats::of(rows.iter().map(|r| r.position_dev_m)),
        rows,
    })
}

pub fn compare_runs(run: &SimulationRun) -> Result<Comparison> {
    compare_records(&run.generated, &run.reference)
}
