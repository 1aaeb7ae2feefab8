//! Command-line surface and its resolution into an [`ExperimentConfig`].

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use psgd_core::optimizer::PairSource;

use crate::config::{ExperimentConfig, FileConfig, Testbed};
use crate::error::Result;
use crate::precond_spec::PrecondSpec;
use crate::verify::Suite;

#[derive(Debug, Parser)]
#[command(name = "psgd", version, about = "Preconditioned SGD with Lie-group preconditioners: benchmarks and checks")]
pub struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rotated quadratic with a log-spaced spectrum.
    Quadratic(QuadraticArgs),
    /// Chained Rosenbrock function.
    Rosenbrock(RosenbrockArgs),
    /// Outer-product logistic regression (MNIST from PSGD_DATA_DIR, else synthetic).
    Logreg(LogregArgs),
    /// Delayed XOR with a tanh RNN.
    Xor(XorArgs),
    /// Fit a preconditioner to quadratic curvature pairs, without optimizing.
    FitOnly(FitArgs),
    /// Run oracle and invariant checks.
    Verify(VerifyArgs),
}

/// Flags shared by every optimization experiment. Unset flags fall back to
/// the `--config` file, then to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML file with the same keys as the flags (snake_case).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// none | diag | xmat | butterfly | dense | lra:r=N[,scalar]
    #[arg(long)]
    pub precond: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub precond_lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Clip the preconditioned gradient to this norm.
    #[arg(long, conflicts_with = "no_clip")]
    pub clip: Option<f64>,
    #[arg(long)]
    pub no_clip: bool,
    /// Fit the preconditioner every k-th iteration.
    #[arg(long)]
    pub update_every: Option<u64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// constant | cosine | exp:START,END | stage:I1,I2,...
    #[arg(long)]
    pub schedule: Option<String>,
    /// Same syntax as --schedule, for the preconditioner step.
    #[arg(long)]
    pub precond_schedule: Option<String>,
    #[arg(long)]
    pub iters: Option<u64>,
    /// A seed, a list `1,4,9`, or an inclusive range `1..10`.
    #[arg(long)]
    pub seed: Option<String>,
    /// Write a CSV record every this many iterations.
    #[arg(long)]
    pub log_every: Option<u64>,
    /// Initial `Q = s I`.
    #[arg(long)]
    pub precond_init: Option<f64>,
    /// Rescale Q to the curvature magnitude on the first pair.
    #[arg(long)]
    pub auto_scale: bool,
    /// fd_hvp | exact_hvp | iterate_delta | iterate_delta_every_step
    #[arg(long, value_parser = parse_pair_source)]
    pub pair_source: Option<PairSource>,
    /// Count a run as solved once its loss drops below this.
    #[arg(long)]
    pub target_loss: Option<f64>,
    /// Stop each seed once it is solved.
    #[arg(long)]
    pub stop_on_success: bool,
    /// CSV output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub summary_json: Option<PathBuf>,
}

fn parse_pair_source(s: &str) -> std::result::Result<PairSource, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown pair source `{s}`"))
}

impl CommonArgs {
    fn as_file_config(&self) -> FileConfig {
        FileConfig {
            precond: self.precond.clone(),
            lr: self.lr,
            precond_lr: self.precond_lr,
            momentum: self.momentum,
            clip: self.clip,
            no_clip: self.no_clip.then_some(true),
            update_every: self.update_every,
            weight_decay: self.weight_decay,
            schedule: self.schedule.clone(),
            precond_schedule: self.precond_schedule.clone(),
            iters: self.iters,
            seeds: self.seed.clone(),
            log_every: self.log_every,
            precond_init: self.precond_init,
            auto_scale: self.auto_scale.then_some(true),
            pair_source: self.pair_source,
            target_loss: self.target_loss,
            stop_on_success: self.stop_on_success.then_some(true),
            out: self.out.clone(),
            summary_json: self.summary_json.clone(),
            ..FileConfig::default()
        }
    }

    /// Defaults for `testbed`, overlaid with the config file, overlaid with
    /// the flags in `self` and `extra`.
    pub fn resolve(&self, testbed: Testbed, extra: FileConfig) -> Result<ExperimentConfig> {
        let mut flags = self.as_file_config().overlay(extra);
        if let Some(path) = &self.config {
            flags = flags.overlay(FileConfig::load(path)?);
        }
        let mut cfg = ExperimentConfig::new(testbed);
        flags.apply(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct QuadraticArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub grad_noise: Option<f64>,
    #[arg(long)]
    pub hvp_noise: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct RosenbrockArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct LogregArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Images are downsampled to side x side.
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Pixel noise of the synthetic fallback data.
    #[arg(long)]
    pub spread: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct XorArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// none | diag | xmat | butterfly | dense | lra:r=N[,scalar]
    #[arg(long, default_value = "dense")]
    pub precond: PrecondSpec,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 1e4)]
    pub kappa: f64,
    /// Hessian-vector noise: `h = H v + s |v| xi` with `xi ~ N(0, I)`.
    #[arg(long, default_value_t = 0.0)]
    pub hvp_noise: f64,
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    /// Step size after warm-up.
    #[arg(long, default_value_t = 0.1)]
    pub mu: f64,
    /// Fraction of the steps spent warming up linearly from mu / 10.
    #[arg(long, default_value_t = 0.2)]
    pub warmup: f64,
    /// Initial `Q = s I`.
    #[arg(long, default_value_t = 10.0)]
    pub precond_init: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// CSV of the per-step criterion.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub summary_json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(value_enum, default_value = "all")]
    pub suite: Suite,
    /// Write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

impl Command {
    /// The experiment described by an optimization subcommand.
    pub fn experiment(&self) -> Option<Result<ExperimentConfig>> {
        let resolved = match self {
            Command::Quadratic(a) => a.common.resolve(
                Testbed::default_quadratic(),
                FileConfig {
                    n: a.n,
                    kappa: a.kappa,
                    grad_noise: a.grad_noise,
                    hvp_noise: a.hvp_noise,
                    ..Default::default()
                },
            ),
            Command::Rosenbrock(a) => {
                a.common.resolve(Testbed::default_rosenbrock(), FileConfig { n: a.n, ..Default::default() })
            }
            Command::Logreg(a) => a.common.resolve(
                Testbed::default_logreg(),
                FileConfig {
                    side: a.side,
                    classes: a.classes,
                    train: a.train,
                    test: a.test,
                    batch: a.batch,
                    spread: a.spread,
                    ..Default::default()
                },
            ),
            Command::Xor(a) => a.common.resolve(
                Testbed::default_xor(),
                FileConfig { seq_len: a.seq_len, hidden: a.hidden, batch: a.batch, ..Default::default() },
            ),
            Command::FitOnly(_) | Command::Verify(_) => return None,
        };
        Some(resolved)
    }
}
