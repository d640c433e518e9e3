//! End-to-end runs over files: configuration, data generation, training,
//! evaluation, closed-loop simulation and the analyses. Every run writes its
//! outputs plus a `run.json` manifest into one directory.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    head_to_tail_gain, log_grid, safety_distributions, HorizonAccumulator, HorizonRow, StabilitySpectrum, GRID_HI,
    GRID_LO, GRID_POINTS,
};
use crate::apecg::Theta;
use crate::baseline::{calibrate_ga, observation, Bounds, Calibration, GaConfig, IdmParams};
use crate::data::{
    extract_windows, generate_synthetic_platoons, load_trajectories, split_dataset, write_trajectories, PlatoonRecord,
    StateWindow, SynthConfig, DT,
};
use crate::error::{Error, Result};
use crate::mtfln::{predict_all, ModelConfig, ModelParams};
use crate::simulator::{
    closed_loop_simulate, compare_runs, CollisionInfo, Comparison, Controller, IdmController, ModelController,
    RunSource, SimulationRun, WARMUP_STEPS,
};
use crate::training::{load_checkpoint, mix, save_checkpoint, train, EpochReport, TrainConfig};

pub const RUN_MANIFEST: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Step between evaluated window anchors.
    pub stride: usize,
    /// Windows per forward batch.
    pub chunk: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { stride: 1, chunk: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSettings {
    pub warmup_steps: usize,
    /// Steps between controller calls; 0 means the model horizon F.
    pub replan_interval: usize,
    /// Sample latent noise per replanning cycle instead of using the mean.
    pub stochastic: bool,
    /// Steps of the reference used to calibrate the IDM followers.
    pub calibration_steps: usize,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            warmup_steps: WARMUP_STEPS,
            replan_interval: 0,
            stochastic: false,
            calibration_steps: WARMUP_STEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilitySettings {
    pub omega_lo: f64,
    pub omega_hi: f64,
    pub points: usize,
    pub stride: usize,
}

impl Default for StabilitySettings {
    fn default() -> Self {
        Self {
            omega_lo: GRID_LO,
            omega_hi: GRID_HI,
            points: GRID_POINTS,
            stride: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct CalibrationSettings {
    pub ga: GaConfig,
    pub bounds: Bounds,
}


/// Everything a run depends on besides its input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub datagen: SynthConfig,
    pub split: SplitRatios,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub eval: EvalSettings,
    pub simulation: SimulationSettings,
    pub stability: StabilitySettings,
    pub calibration: CalibrationSettings,
    pub gradcheck: crate::training::GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            datagen: SynthConfig::default(),
            split: SplitRatios::default(),
            model: ModelConfig::desk(),
            training: TrainConfig::default(),
            eval: EvalSettings::default(),
            simulation: SimulationSettings::default(),
            stability: StabilitySettings::default(),
            calibration: CalibrationSettings::default(),
            gradcheck: crate::training::GradcheckConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        let r = &self.split;
        crate::data::split_counts(1, (r.train, r.val, r.test))?;
        if self.eval.stride == 0 || self.eval.chunk == 0 || self.stability.stride == 0 {
            return Err(Error::Config("strides and chunk sizes must be positive".into()));
        }
        let s = &self.stability;
        if !(s.omega_lo > 0.0 && s.omega_hi > s.omega_lo) || s.points < 2 {
            return Err(Error::Config(format!("invalid frequency grid {s:?}")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises") + "\n"
    }
}

#[derive(Debug, Clone, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: &'a RunConfig,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value)? + "\n")
}

fn write_manifest(dir: &Path, command: &str, config: &RunConfig, inputs: &[&Path], outputs: &[PathBuf]) -> Result<()> {
    let m = RunManifest {
        command,
        config,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    write_json(&dir.join(RUN_MANIFEST), &m)
}

fn load_records(path: &Path) -> Result<Vec<PlatoonRecord>> {
    let loaded = load_trajectories(path)?;
    if loaded.records.is_empty() {
        return Err(Error::Invalid(format!("{}: no valid platoons", path.display())));
    }
    Ok(loaded.records)
}

// ---------------------------------------------------------------- datagen

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatagenSummary {
    pub seed: u64,
    pub platoons: usize,
    pub followers: usize,
    pub steps: usize,
    pub retries: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Writes `out/{train,val,test}/<platoon_id>.csv` and `out/manifest.json`.
pub fn run_datagen(cfg: &RunConfig, out: &Path) -> Result<DatagenSummary> {
    let synth = generate_synthetic_platoons(&cfg.datagen, cfg.seed)?;
    let r = &cfg.split;
    let split = split_dataset(&synth.records, (r.train, r.val, r.test), cfg.seed)?;
    let mut outputs = Vec::new();
    for (name, ids) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        let dir = out.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for id in ids {
            let rec = synth.records.iter().find(|r| &r.platoon_id == id).expect("split ids come from the records");
            let path = dir.join(format!("{id}.csv"));
            write_trajectories(&path, std::slice::from_ref(rec))?;
            outputs.push(path);
        }
    }
    let summary = DatagenSummary {
        seed: cfg.seed,
        platoons: synth.records.len(),
        followers: cfg.datagen.followers,
        steps: synth.records.first().map_or(0, PlatoonRecord::duration),
        retries: synth.retries,
        train: split.train,
        val: split.val,
        test: split.test,
    };
    write_json(&out.join("manifest.json"), &summary)?;
    outputs.push(out.join("manifest.json"));
    write_manifest(out, "datagen", cfg, &[], &outputs)?;
    Ok(summary)
}

// ------------------------------------------------------------------ train

fn windows_of(records: &[PlatoonRecord], model: &ModelConfig, stride: usize) -> Vec<StateWindow> {
    records.iter().flat_map(|r| extract_windows(r, model.p, model.f, stride)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub train_windows: usize,
    pub val_windows: usize,
    pub best_epoch: usize,
    pub epochs: Vec<EpochReport>,
}

/// Trains on `data/train` (validating on `data/val` when present) and
/// writes the best checkpoint and `train_log.jsonl` into `out`.
pub fn run_train(cfg: &RunConfig, data: &Path, out: &Path, mut on_epoch: impl FnMut(&EpochReport)) -> Result<TrainSummary> {
    let train_dir = data.join("train");
    let train_src = if train_dir.is_dir() { train_dir } else { data.to_path_buf() };
    let stride = cfg.training.window_stride;
    let train_ws = windows_of(&load_records(&train_src)?, &cfg.model, stride);
    let val_dir = data.join("val");
    let val_ws = if val_dir.is_dir() {
        windows_of(&load_records(&val_dir)?, &cfg.model, stride)
    } else {
        Vec::new()
    };
    let outcome = train(&train_ws, &val_ws, &cfg.model, &cfg.training, cfg.seed, |r| on_epoch(r))?;
    save_checkpoint(&outcome.best, out, outcome.best_epoch, cfg.seed)?;
    let mut log = String::new();
    for r in &outcome.reports {
        log += &serde_json::to_string(r)?;
        log.push('\n');
    }
    let log_path = out.join("train_log.jsonl");
    write_file(&log_path, log)?;
    write_manifest(
        out,
        "train",
        cfg,
        &[data],
        &[out.join(crate::training::MANIFEST), out.join(crate::training::WEIGHTS), log_path],
    )?;
    Ok(TrainSummary {
        train_windows: train_ws.len(),
        val_windows: val_ws.len(),
        best_epoch: outcome.best_epoch,
        epochs: outcome.reports,
    })
}

// ------------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub platoons: usize,
    pub windows: usize,
    pub model: Vec<HorizonRow>,
    pub persistence: Vec<HorizonRow>,
}

impl EvalReport {
    pub fn row<'a>(rows: &'a [HorizonRow], horizon: &str) -> Option<&'a HorizonRow> {
        rows.iter().find(|r| r.horizon == horizon)
    }
}

/// Horizon metrics of `params` and of the persistence baseline.
pub fn evaluate_model(params: &ModelParams, records: &[PlatoonRecord], settings: &EvalSettings) -> Result<EvalReport> {
    let windows = windows_of(records, &params.config, settings.stride);
    if windows.is_empty() {
        return Err(Error::Invalid("no evaluation windows fit the records".into()));
    }
    let preds = predict_all(&windows, params, settings.chunk)?;
    let mut model = HorizonAccumulator::new(params.config.f);
    let mut persistence = HorizonAccumulator::new(params.config.f);
    for (w, (r, _)) in windows.iter().zip(&preds) {
        model.add_rollout(w, r);
        persistence.add_persistence(w);
    }
    Ok(EvalReport {
        platoons: records.len(),
        windows: windows.len(),
        model: model.report(DT)?,
        persistence: persistence.report(DT)?,
    })
}

pub fn run_eval(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: Option<&Path>) -> Result<EvalReport> {
    let (params, _) = load_checkpoint(checkpoint)?;
    let records = load_records(data)?;
    let report = evaluate_model(&params, &records, &cfg.eval)?;
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    Ok(report)
}

// ------------------------------------------------------------- calibrate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatoonCalibration {
    pub platoon_id: String,
    pub start: usize,
    pub steps: usize,
    pub vehicles: Vec<Calibration>,
}

/// Calibrates every follower of `record` on steps `start..start+steps`.
pub fn calibrate_platoon(
    record: &PlatoonRecord,
    start: usize,
    steps: usize,
    settings: &CalibrationSettings,
    seed: u64,
) -> Result<PlatoonCalibration> {
    let vehicles = (1..=record.followers())
        .map(|i| {
            let obs = observation(record, i, start, steps)?;
            calibrate_ga(&obs, &settings.bounds, &settings.ga, mix(seed, i as u64, 0x1d, 0))
        })
        .collect::<Result<_>>()?;
    Ok(PlatoonCalibration {
        platoon_id: record.platoon_id.clone(),
        start,
        steps,
        vehicles,
    })
}

pub fn run_calibrate(
    cfg: &RunConfig,
    data: &Path,
    platoon: Option<&str>,
    start: usize,
    steps: usize,
    out: Option<&Path>,
) -> Result<Vec<PlatoonCalibration>> {
    let records = load_records(data)?;
    let chosen: Vec<&PlatoonRecord> = records.iter().filter(|r| platoon.is_none_or(|id| r.platoon_id == id)).collect();
    if chosen.is_empty() {
        return Err(Error::Invalid(format!("platoon {} not found", platoon.unwrap_or("?"))));
    }
    let result: Vec<PlatoonCalibration> = chosen
        .iter()
        .enumerate()
        .map(|(k, r)| calibrate_platoon(r, start, steps, &cfg.calibration, mix(cfg.seed, k as u64, 0xca1, 0)))
        .collect::<Result<_>>()?;
    if let Some(path) = out {
        write_json(path, &result)?;
    }
    Ok(result)
}

// --------------------------------------------------------------- simulate

/// What drives the followers in a simulation.
#[derive(Debug, Clone)]
pub enum SimSource {
    Model { checkpoint: PathBuf },
    /// IDM calibrated per platoon on its first `calibration_steps` steps.
    IdmOnline,
    /// IDM with stored calibrations, matched to platoons by id.
    IdmStored { calibrations: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatoonOutcome {
    pub platoon_id: String,
    pub source: RunSource,
    pub completed: bool,
    pub collision: Option<CollisionInfo>,
    /// Follower speed RMSE over the simulated steps after the warmup.
    pub closed_loop_speed_rmse: f64,
    pub comparison: Comparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub platoons: usize,
    pub completed: usize,
    pub warmup_steps: usize,
    pub replan_interval: usize,
    pub mean_closed_loop_speed_rmse: f64,
    pub runs: Vec<PlatoonOutcome>,
}

/// Follower speed RMSE of a run over the steps after its warmup.
pub fn closed_loop_speed_rmse(run: &SimulationRun) -> f64 {
    let (g, r) = (&run.generated, &run.reference);
    let mut se = 0.0;
    let mut count = 0usize;
    for i in 1..g.vehicles.len() {
        for k in run.warmup_steps..g.duration() {
            se += (g.vehicles[i].speed[k] - r.vehicles[i].speed[k]).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        (se / count as f64).sqrt()
    }
}

/// Runs every record closed-loop, in parallel over records.
pub fn simulate_records<'c>(
    records: &[PlatoonRecord],
    controller_for: impl Fn(usize, &PlatoonRecord) -> Result<Box<dyn Controller + Send + Sync + 'c>> + Sync,
    settings: &SimulationSettings,
) -> Result<Vec<SimulationRun>> {
    records
        .par_iter()
        .enumerate()
        .map(|(k, r)| {
            let ctl = controller_for(k, r)?;
            let replan = if settings.replan_interval == 0 {
                ctl.horizon()
            } else {
                settings.replan_interval
            };
            closed_loop_simulate(r, ctl.as_ref(), settings.warmup_steps, replan)
        })
        .collect()
}

pub fn summarise_runs(runs: &[SimulationRun]) -> Result<SimulationSummary> {
    let outcomes: Vec<PlatoonOutcome> = runs
        .iter()
        .map(|run| {
            Ok(PlatoonOutcome {
                platoon_id: run.reference.platoon_id.clone(),
                source: run.source.clone(),
                completed: run.completed(),
                collision: run.collision,
                closed_loop_speed_rmse: closed_loop_speed_rmse(run),
                comparison: compare_runs(run)?,
            })
        })
        .collect::<Result<_>>()?;
    let mean = outcomes.iter().map(|o| o.closed_loop_speed_rmse).sum::<f64>() / outcomes.len().max(1) as f64;
    Ok(SimulationSummary {
        platoons: runs.len(),
        completed: outcomes.iter().filter(|o| o.completed).count(),
        warmup_steps: runs.first().map_or(0, |r| r.warmup_steps),
        replan_interval: runs.first().map_or(0, |r| r.replan_interval),
        mean_closed_loop_speed_rmse: mean,
        runs: outcomes,
    })
}

/// Simulates every platoon of `data` and writes `generated.csv`,
/// `deviations/<platoon_id>.csv` and `summary.json` into `out`.
pub fn run_simulate(cfg: &RunConfig, source: &SimSource, data: &Path, out: &Path) -> Result<SimulationSummary> {
    let records = load_records(data)?;
    let settings = &cfg.simulation;
    let (p, f) = (cfg.model.p, cfg.model.f);
    let runs = match source {
        SimSource::Model { checkpoint } => {
            let (params, _) = load_checkpoint(checkpoint)?;
            let label = checkpoint.display().to_string();
            simulate_records(
                &records,
                |k, _| {
                    let noise_seed = settings.stochastic.then(|| mix(cfg.seed, k as u64, 0x51, 0));
                    Ok(Box::new(ModelController {
                        params: &params,
                        label: label.clone(),
                        noise_seed,
                    }))
                },
                settings,
            )?
        }
        SimSource::IdmOnline => simulate_records(
            &records,
            |k, r| {
                let c = calibrate_platoon(r, 0, settings.calibration_steps, &cfg.calibration, mix(cfg.seed, k as u64, 0xca1, 0))?;
                Ok(idm_controller(c.vehicles.iter().map(|v| v.params).collect(), p, f))
            },
            settings,
        )?,
        SimSource::IdmStored { calibrations } => {
            let text = fs::read_to_string(calibrations).map_err(|e| Error::io(calibrations, e))?;
            let stored: Vec<PlatoonCalibration> = serde_json::from_str(&text)?;
            simulate_records(
                &records,
                |_, r| {
                    let c = stored
                        .iter()
                        .find(|c| c.platoon_id == r.platoon_id)
                        .ok_or_else(|| Error::Invalid(format!("no calibration for platoon {}", r.platoon_id)))?;
                    Ok(idm_controller(c.vehicles.iter().map(|v| v.params).collect(), p, f))
                },
                settings,
            )?
        }
    };
    let summary = summarise_runs(&runs)?;
    let generated: Vec<PlatoonRecord> = runs.iter().map(|r| r.generated.clone()).collect();
    let mut outputs = vec![out.join("generated.csv"), out.join("summary.json")];
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_trajectories(&outputs[0], &generated)?;
    write_json(&outputs[1], &summary)?;
    for run in &runs {
        let path = out.join("deviations").join(format!("{}.csv", run.reference.platoon_id));
        write_file(&path, compare_runs(run)?.to_csv())?;
        outputs.push(path);
    }
    write_manifest(out, "simulate", cfg, &[data], &outputs)?;
    Ok(summary)
}

fn idm_controller(params: Vec<IdmParams>, p: usize, f: usize) -> Box<dyn Controller + Send + Sync> {
    Box::new(IdmController { params, p, f, dt: DT })
}

// -------------------------------------------------------------- stability

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStability {
    pub platoon_id: String,
    pub t: usize,
    pub amplified: bool,
    pub peak_head_to_tail: f64,
    pub theta_used: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub windows: usize,
    pub amplified: usize,
    pub per_window: Vec<WindowStability>,
    /// Full spectrum of the first window.
    pub example: Option<StabilitySpectrum>,
}

pub fn stability_report(params: &ModelParams, records: &[PlatoonRecord], settings: &StabilitySettings) -> Result<StabilityReport> {
    let windows = windows_of(records, &params.config, settings.stride);
    if windows.is_empty() {
        return Err(Error::Invalid("no windows fit the records".into()));
    }
    let grid = log_grid(settings.omega_lo, settings.omega_hi, settings.points);
    let preds = predict_all(&windows, params, 16)?;
    let spectra: Vec<StabilitySpectrum> = preds.iter().map(|(_, th)| head_to_tail_gain(th, &grid)).collect();
    let per_window: Vec<WindowStability> = windows
        .iter()
        .zip(&spectra)
        .map(|(w, s)| WindowStability {
            platoon_id: w.platoon_id.clone(),
            t: w.t,
            amplified: s.amplified,
            peak_head_to_tail: s.head_to_tail.iter().cloned().fold(0.0, f64::max),
            theta_used: s.theta_used.clone(),
        })
        .collect();
    Ok(StabilityReport {
        windows: per_window.len(),
        amplified: per_window.iter().filter(|w| w.amplified).count(),
        per_window,
        example: spectra.into_iter().next(),
    })
}

/// Writes `stability.json` and `spectrum.csv` (the first window, or the
/// given constant theta for `followers` vehicles).
pub fn run_stability(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    data: Option<&Path>,
    theta: Option<([f64; 3], usize)>,
    out: &Path,
) -> Result<StabilityReport> {
    let s = &cfg.stability;
    let report = match (theta, checkpoint, data) {
        (Some((row, followers)), _, _) => {
            let th = Theta::constant(followers.max(1), 1, row);
            let spec = head_to_tail_gain(&th, &log_grid(s.omega_lo, s.omega_hi, s.points));
            StabilityReport {
                windows: 1,
                amplified: usize::from(spec.amplified),
                per_window: Vec::new(),
                example: Some(spec),
            }
        }
        (None, Some(ckpt), Some(data)) => {
            let (params, _) = load_checkpoint(ckpt)?;
            stability_report(&params, &load_records(data)?, s)?
        }
        _ => return Err(Error::Config("stability needs either a theta or a checkpoint and data".into())),
    };
    let json = out.join("stability.json");
    let csv = out.join("spectrum.csv");
    write_json(&json, &report)?;
    if let Some(spec) = &report.example {
        write_file(&csv, spec.to_csv())?;
    }
    let inputs: Vec<&Path> = checkpoint.into_iter().chain(data).collect();
    write_manifest(out, "stability", cfg, &inputs, &[json, csv])?;
    Ok(report)
}

// ----------------------------------------------------------------- safety

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub pet_samples: [u64; 2],
    pub ssdd_samples: [u64; 2],
    pub pet: crate::analysis::Divergences,
    pub ssdd: crate::analysis::Divergences,
}

/// Compares PET and SSDD of generated trajectories with the reference;
/// writes `safety.json` and four histogram CSVs.
pub fn run_safety(cfg: &RunConfig, generated: &Path, reference: &Path, out: &Path) -> Result<SafetyReport> {
    let gen = load_records(generated)?;
    let refs = load_records(reference)?;
    let d = safety_distributions(&gen, &refs)?;
    let report = SafetyReport {
        pet_samples: [d.pet_hist.total(), d.pet_reference_hist.total()],
        ssdd_samples: [d.ssdd_hist.total(), d.ssdd_reference_hist.total()],
        pet: d.pet,
        ssdd: d.ssdd,
    };
    let mut outputs = Vec::new();
    for (name, h) in [
        ("pet_generated.csv", &d.pet_hist),
        ("pet_reference.csv", &d.pet_reference_hist),
        ("ssdd_generated.csv", &d.ssdd_hist),
        ("ssdd_reference.csv", &d.ssdd_reference_hist),
    ] {
        let path = out.join(name);
        write_file(&path, h.to_csv())?;
        outputs.push(path);
    }
    let json = out.join("safety.json");
    write_json(&json, &report)?;
    outputs.push(json);
    write_manifest(out, "safety", cfg, &[generated, reference], &outputs)?;
    Ok(report)
}
