//! Runs an experiment over its seeds, streaming CSV records and collecting a
//! summary.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use psgd_core::testbeds::logreg::{Dataset, LogRegOuter};
use psgd_core::testbeds::mnist;
use psgd_core::testbeds::quadratic::Quadratic;
use psgd_core::testbeds::rosenbrock::Rosenbrock;
use psgd_core::testbeds::xor::XorTask;
use psgd_core::{Batch, OptimizerState, Problem, Psgd, PsgdError, SeededRng, Vector};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Testbed};
use crate::error::Result;

pub const DATA_DIR_ENV: &str = "PSGD_DATA_DIR";
/// Seed of the synthetic logistic-regression data, shared by all runs so that
/// seeds vary only the optimization.
const BLOB_SEED: u64 = 0xB10B;

pub const CSV_HEADER: [&str; 8] =
    ["run_id", "seed", "iter", "loss", "grad_norm", "precond_updates", "criterion", "wall_ms"];

/// One logged iteration. `loss` is the minibatch loss seen by the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: usize,
    pub seed: u64,
    pub iter: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub precond_updates: u64,
    pub criterion: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub iters: u64,
    /// Loss on the full objective (or the fixed evaluation batch) at the end.
    pub final_loss: f64,
    /// Number of steps taken when the logged loss first counted as solved.
    pub solved_at: Option<u64>,
    pub diverged: bool,
    pub precond_updates: u64,
    pub rejected_updates: u64,
    pub test_error: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub testbed: String,
    pub precond: String,
    pub iters: u64,
    pub seeds: usize,
    /// Mean and standard deviation of the final loss over runs that did not diverge.
    pub final_loss_mean: f64,
    pub final_loss_std: f64,
    /// Fraction of seeds solved, when the testbed or config defines success.
    pub success_rate: Option<f64>,
    pub diverged: bool,
    pub wall_ms: u64,
    pub runs: Vec<SeedOutcome>,
}

/// A finished seed: its outcome and the final optimizer state.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub outcome: SeedOutcome,
    pub state: OptimizerState,
}

/// Loads MNIST from `PSGD_DATA_DIR` when set, otherwise builds seeded blobs.
pub fn logreg_data(classes: usize, side: usize, train: usize, test: usize, spread: f64) -> Result<(Dataset, Dataset)> {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) => {
            let (tr, te) = mnist::load_dir(Path::new(&dir))?;
            log::info!("loaded MNIST from {}", Path::new(&dir).display());
            Ok((tr.truncate(train), te.truncate(test)))
        }
        None => Ok(Dataset::synthetic_blobs(train + test, classes, side, spread, BLOB_SEED)?.split(train)),
    }
}

/// A concrete testbed instance.
pub enum Instance {
    Quadratic(Quadratic),
    Rosenbrock(Rosenbrock),
    Logreg(LogRegOuter),
    Xor(XorTask),
}

impl Instance {
    /// Instantiates the testbed; only the quadratic instance depends on `seed`.
    pub fn new(testbed: &Testbed, seed: u64) -> Result<Self> {
        Ok(match *testbed {
            Testbed::Quadratic { n, kappa, grad_noise, hvp_noise } => {
                Instance::Quadratic(Quadratic::new(n, kappa, grad_noise, hvp_noise, seed)?)
            }
            Testbed::Rosenbrock { n } => Instance::Rosenbrock(Rosenbrock::new(n)?),
            Testbed::Logreg { side, classes, train, test, batch, spread } => {
                let (tr, te) = logreg_data(classes, side, train, test, spread)?;
                Instance::Logreg(LogRegOuter::new(&tr, Some(&te), side, batch)?)
            }
            Testbed::Xor { seq_len, hidden, batch } => Instance::Xor(XorTask::new(seq_len, hidden, batch)?),
        })
    }

    pub fn problem(&self) -> &dyn Problem {
        match self {
            Instance::Quadratic(p) => p,
            Instance::Rosenbrock(p) => p,
            Instance::Logreg(p) => p,
            Instance::Xor(p) => p,
        }
    }

    /// Held-out error, for testbeds with a test set.
    pub fn test_error(&self, theta: &Vector) -> Option<f64> {
        match self {
            Instance::Logreg(p) => p.test_error(theta),
            _ => None,
        }
    }
}

fn is_success(cfg: &ExperimentConfig, problem: &dyn Problem, loss: f64) -> bool {
    match cfg.target_loss {
        Some(t) => loss < t,
        None => problem.is_solved(loss),
    }
}

/// Whether success is defined for this experiment.
pub fn defines_success(cfg: &ExperimentConfig) -> bool {
    cfg.target_loss.is_some() || matches!(cfg.testbed, Testbed::Xor { .. })
}

/// Runs one seed, handing every logged record to `sink`.
pub fn run_seed(
    cfg: &ExperimentConfig,
    instance: &Instance,
    run_id: usize,
    seed: u64,
    mut sink: impl FnMut(RunRecord) -> Result<()>,
) -> Result<SeedRun> {
    let start = Instant::now();
    let problem = instance.problem();
    let mut rng = SeededRng::seed_from_u64(seed);
    let theta = problem.init(&mut rng);
    let precond = cfg.precond.build(problem.dim(), cfg.precond_init, &mut rng)?;
    let mut opt = Psgd::new(cfg.optimizer.clone(), theta, precond, seed)?
        .with_pair_source(cfg.pair_source)
        .with_auto_scale(cfg.auto_scale);
    let mut solved_at = None;
    let mut diverged = false;
    for it in 0..cfg.iters {
        let info = match opt.step(problem) {
            Ok(info) => info,
            Err(PsgdError::NonFinite(what)) => {
                log::warn!("seed {seed} diverged at iter {it}: non-finite {what}");
                diverged = true;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let done = it + 1;
        let last = done == cfg.iters;
        if !info.loss.is_finite() {
            diverged = true;
        }
        if solved_at.is_none() && !diverged && is_success(cfg, problem, info.loss) {
            solved_at = Some(it);
        }
        let stop = diverged || (cfg.stop_on_success && solved_at.is_some());
        if it % cfg.log_every == 0 || last || stop {
            sink(RunRecord {
                run_id,
                seed,
                iter: it,
                loss: info.loss,
                grad_norm: info.grad_norm,
                precond_updates: opt.state.precond_updates,
                criterion: info.criterion,
                wall_ms: start.elapsed().as_millis() as u64,
            })?;
        }
        if stop {
            break;
        }
    }
    let final_loss = problem.loss(&opt.state.theta, &Batch::Full);
    diverged |= !final_loss.is_finite();
    let test_error = instance.test_error(&opt.state.theta);
    let outcome = SeedOutcome {
        seed,
        iters: opt.state.iter,
        final_loss,
        solved_at,
        diverged,
        precond_updates: opt.state.precond_updates,
        rejected_updates: opt.state.rejected_updates,
        test_error,
        wall_ms: start.elapsed().as_millis() as u64,
    };
    log::info!(
        "seed {seed}: final loss {final_loss:e}, solved at {solved_at:?}, {} precond updates",
        outcome.precond_updates
    );
    Ok(SeedRun { outcome, state: opt.state })
}

/// Runs every seed in order, writing CSV (header first) to `csv_out`.
pub fn run_experiment<W: Write>(cfg: &ExperimentConfig, csv_out: W) -> Result<Summary> {
    cfg.validate()?;
    let start = Instant::now();
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(csv_out);
    writer.write_record(CSV_HEADER)?;
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    let mut shared = None;
    for (run_id, &seed) in cfg.seeds.iter().enumerate() {
        let fresh;
        let instance = if matches!(cfg.testbed, Testbed::Quadratic { .. }) {
            fresh = Instance::new(&cfg.testbed, seed)?;
            &fresh
        } else {
            match &mut shared {
                Some(i) => &*i,
                slot => &*slot.insert(Instance::new(&cfg.testbed, seed)?),
            }
        };
        let run = run_seed(cfg, instance, run_id, seed, |r| Ok(writer.serialize(r)?))?;
        runs.push(run.outcome);
    }
    writer.flush()?;
    Ok(summarize(cfg, runs, start.elapsed().as_millis() as u64))
}

pub fn summarize(cfg: &ExperimentConfig, runs: Vec<SeedOutcome>, wall_ms: u64) -> Summary {
    let finite: Vec<f64> = runs.iter().filter(|r| !r.diverged).map(|r| r.final_loss).collect();
    let (mean, std) = mean_std(&finite);
    let success_rate =
        defines_success(cfg).then(|| runs.iter().filter(|r| r.solved_at.is_some()).count() as f64 / runs.len() as f64);
    Summary {
        testbed: cfg.testbed.name().to_string(),
        precond: cfg.precond.to_string(),
        iters: cfg.iters,
        seeds: runs.len(),
        final_loss_mean: mean,
        final_loss_std: std,
        success_rate,
        diverged: runs.iter().any(|r| r.diverged),
        wall_ms,
        runs,
    }
}

/// Population mean and standard deviation; NaN for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
