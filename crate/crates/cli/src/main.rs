use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{ArgGroup, Args, Parser, Subcommand};
use platoon::pipeline::{self, RunConfig, SimSource};
use platoon::training::gradcheck;

/// Gradient checks pass below this relative error.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "platoon", version, about = "Platoon dynamics learning, simulation and analysis")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Run configuration (JSON); defaults apply to omitted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Outputs are byte-reproducible at 1.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic platoons split into train/val/test directories.
    Datagen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        platoons: Option<usize>,
        #[arg(long)]
        followers: Option<usize>,
    },
    /// Train the model; one JSON line per epoch on stdout.
    Train {
        /// Directory holding train/ and optionally val/.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Per-horizon RMSE and MAPE of a checkpoint against persistence.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-loop simulation of every platoon in a data set.
    #[command(group(ArgGroup::new("source").required(true).args(["checkpoint", "idm_online", "idm"])))]
    Simulate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Calibrate an IDM per platoon on its warmup steps.
        #[arg(long)]
        idm_online: bool,
        /// Stored calibrations from `calibrate-idm`.
        #[arg(long)]
        idm: Option<PathBuf>,
        /// Steps between replanning; defaults to the horizon.
        #[arg(long)]
        replan: Option<usize>,
        /// Sample latent noise per replanning cycle.
        #[arg(long)]
        stochastic: bool,
    },
    /// Transfer-function spectra of model or given parameters.
    #[command(group(ArgGroup::new("input").required(true).args(["checkpoint", "theta"])))]
    Stability {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, requires = "data")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Constant parameters `f_v,f_s,f_dv` instead of a model.
        #[arg(long, conflicts_with = "checkpoint", allow_hyphen_values = true, value_parser = parse_theta)]
        theta: Option<[f64; 3]>,
        #[arg(long, default_value_t = 1)]
        followers: usize,
    },
    /// PET and SSDD distributions of generated against reference trajectories.
    Safety {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// GA calibration of IDM parameters per follower.
    CalibrateIdm {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        platoon: Option<String>,
        #[arg(long, default_value_t = 0)]
        start: usize,
        #[arg(long, default_value_t = platoon::simulator::WARMUP_STEPS)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the training gradient.
    Gradcheck,
}

fn parse_theta(text: &str) -> std::result::Result<[f64; 3], String> {
    let values: Vec<f64> = text
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    values
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected three comma-separated values, got {}", v.len()))
}

fn load_config(global: &Global) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
        cfg.gradcheck.seed = seed;
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn checked(cfg: RunConfig) -> Result<RunConfig> {
    cfg.validate()?;
    log::info!("resolved config:\n{}", cfg.to_json().trim_end());
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Datagen { out, platoons, followers } => {
            if let Some(n) = platoons {
                cfg.datagen.count = n;
            }
            if let Some(n) = followers {
                cfg.datagen.followers = n;
            }
            let cfg = checked(cfg)?;
            let s = pipeline::run_datagen(&cfg, &out)?;
            log::info!(
                "wrote {} platoons ({} train, {} val, {} test) to {}",
                s.platoons,
                s.train.len(),
                s.val.len(),
                s.test.len(),
                out.display()
            );
        }
        Command::Train { data, out, epochs } => {
            if let Some(n) = epochs {
                cfg.training.epochs = n;
            }
            let cfg = checked(cfg)?;
            let s = pipeline::run_train(&cfg, &data, &out, |r| {
                println!("{}", serde_json::to_string(r).expect("epoch report serialises"));
            })?;
            log::info!("best epoch {} saved to {}", s.best_epoch, out.display());
        }
        Command::Eval { checkpoint, data, out } => {
            let cfg = checked(cfg)?;
            let report = pipeline::run_eval(&cfg, &checkpoint, &data, out.as_deref())?;
            if out.is_none() {
                print_json(&report)?;
            }
        }
        Command::Simulate {
            data,
            out,
            checkpoint,
            idm_online: _,
            idm,
            replan,
            stochastic,
        } => {
            let source = match (checkpoint, idm) {
                (Some(checkpoint), _) => SimSource::Model { checkpoint },
                (None, Some(calibrations)) => SimSource::IdmStored { calibrations },
                (None, None) => SimSource::IdmOnline,
            };
            if let Some(k) = replan {
                cfg.simulation.replan_interval = k;
            }
            cfg.simulation.stochastic |= stochastic;
            let cfg = checked(cfg)?;
            let s = pipeline::run_simulate(&cfg, &source, &data, &out)?;
            log::info!(
                "{}/{} platoons completed, mean closed-loop speed RMSE {:.4} m/s",
                s.completed,
                s.platoons,
                s.mean_closed_loop_speed_rmse
            );
        }
        Command::Stability {
            out,
            checkpoint,
            data,
            theta,
            followers,
        } => {
            let cfg = checked(cfg)?;
            let theta = theta.map(|t| (t, followers));
            let r = pipeline::run_stability(&cfg, checkpoint.as_deref(), data.as_deref(), theta, &out)?;
            log::info!("{} of {} windows amplify disturbances", r.amplified, r.windows);
        }
        Command::Safety { generated, reference, out } => {
            let cfg = checked(cfg)?;
            let r = pipeline::run_safety(&cfg, &generated, &reference, &out)?;
            print_json(&r)?;
        }
        Command::CalibrateIdm {
            data,
            platoon,
            start,
            steps,
            out,
        } => {
            let cfg = checked(cfg)?;
            let r = pipeline::run_calibrate(&cfg, &data, platoon.as_deref(), start, steps, out.as_deref())?;
            if out.is_none() {
                print_json(&r)?;
            }
        }
        Command::Gradcheck => {
            let cfg = checked(cfg)?;
            let report = gradcheck(&cfg.gradcheck)?;
            println!("max relative error {:.3e}", report.max_rel_error);
            if !(report.max_rel_error < GRADCHECK_TOLERANCE) {
                bail!("gradient check failed: {:.3e} >= {GRADCHECK_TOLERANCE:e}", report.max_rel_error);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
