//! Experiment configuration: built-in defaults, then an optional TOML file,
//! then command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use psgd_core::optimizer::PairSource;
use psgd_core::{OptimizerConfig, Schedule};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::precond_spec::PrecondSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Testbed {
    Quadratic {
        n: usize,
        kappa: f64,
        grad_noise: f64,
        hvp_noise: f64,
    },
    Rosenbrock {
        n: usize,
    },
    /// Outer-product logistic regression; MNIST from `PSGD_DATA_DIR` when
    /// present, otherwise seeded Gaussian blobs of `train + test` images.
    Logreg {
        side: usize,
        classes: usize,
        train: usize,
        test: usize,
        batch: usize,
        spread: f64,
    },
    Xor {
        seq_len: usize,
        hidden: usize,
        batch: usize,
    },
}

impl Testbed {
    pub fn name(&self) -> &'static str {
        match self {
            Testbed::Quadratic { .. } => "quadratic",
            Testbed::Rosenbrock { .. } => "rosenbrock",
            Testbed::Logreg { .. } => "logreg",
            Testbed::Xor { .. } => "xor",
        }
    }

    pub fn default_quadratic() -> Self {
        Testbed::Quadratic { n: 100, kappa: 1e4, grad_noise: 0.0, hvp_noise: 0.0 }
    }

    pub fn default_rosenbrock() -> Self {
        Testbed::Rosenbrock { n: 10 }
    }

    pub fn default_logreg() -> Self {
        Testbed::Logreg { side: 10, classes: 10, train: 2000, test: 1000, batch: 100, spread: 0.35 }
    }

    pub fn default_xor() -> Self {
        Testbed::Xor { seq_len: 32, hidden: 30, batch: 64 }
    }

    /// Clipping threshold used unless overridden: 1 for the RNN, 10 elsewhere.
    pub fn default_clip(&self) -> f64 {
        match self {
            Testbed::Xor { .. } => 1.0,
            _ => 10.0,
        }
    }
}

/// Learning-rate schedule as written on the command line; horizons default to
/// the iteration budget.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSpec {
    Constant,
    Exp { start: f64, end: f64 },
    Stage(Vec<u64>),
    Cosine,
}

impl ScheduleSpec {
    pub fn resolve(&self, iters: u64) -> Schedule {
        match self {
            ScheduleSpec::Constant => Schedule::Constant,
            ScheduleSpec::Exp { start, end } => Schedule::ExponentialAnneal { start: *start, end: *end, total: iters },
            ScheduleSpec::Stage(drops) => Schedule::Stage { drops: drops.clone() },
            ScheduleSpec::Cosine => Schedule::Cosine { total: iters },
        }
    }
}

impl FromStr for ScheduleSpec {
    type Err = CliError;

    /// `constant`, `cosine`, `exp:START,END` or `stage:I1,I2,...`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || CliError::Schedule(s.to_string());
        match s {
            "constant" => return Ok(ScheduleSpec::Constant),
            "cosine" => return Ok(ScheduleSpec::Cosine),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("exp:") {
            let (a, b) = rest.split_once(',').ok_or_else(bad)?;
            return Ok(ScheduleSpec::Exp { start: a.parse().map_err(|_| bad())?, end: b.parse().map_err(|_| bad())? });
        }
        if let Some(rest) = s.strip_prefix("stage:") {
            let drops =
                rest.split(',').map(|d| d.trim().parse::<u64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
            return Ok(ScheduleSpec::Stage(drops));
        }
        Err(bad())
    }
}

/// `7`, `1,3,5` or the inclusive range `1..10`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || CliError::Seeds(s.to_string());
    let seeds = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<Vec<u64>>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub testbed: Testbed,
    pub precond: PrecondSpec,
    pub optimizer: OptimizerConfig,
    pub iters: u64,
    pub seeds: Vec<u64>,
    pub log_every: u64,
    /// `Q` starts at `precond_init * I`.
    pub precond_init: f64,
    pub auto_scale: bool,
    pub pair_source: PairSource,
    /// Loss below which a run counts as solved, for testbeds without their own predicate.
    pub target_loss: Option<f64>,
    pub stop_on_success: bool,
    pub out: Option<PathBuf>,
    pub summary_json: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(testbed: Testbed) -> Self {
        let optimizer = OptimizerConfig { clip: Some(testbed.default_clip()), ..OptimizerConfig::default() };
        Self {
            testbed,
            precond: PrecondSpec::Lra { rank: 10, scalar: false },
            optimizer,
            iters: 1000,
            seeds: vec![1],
            log_every: 10,
            precond_init: 1.0,
            auto_scale: false,
            pair_source: PairSource::FdHvp,
            target_loss: None,
            stop_on_success: false,
            out: None,
            summary_json: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.seeds.is_empty() {
            return bad("no seeds");
        }
        if self.iters == 0 {
            return bad("iters must be >= 1");
        }
        if self.log_every == 0 {
            return bad("log_every must be >= 1");
        }
        if !(self.precond_init > 0.0 && self.precond_init.is_finite()) {
            return bad("precond_init must be positive");
        }
        self.optimizer.validate()?;
        Ok(())
    }
}

/// Flat TOML schema; every key is optional and unknown keys are errors.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub precond: Option<String>,
    pub lr: Option<f64>,
    pub precond_lr: Option<f64>,
    pub momentum: Option<f64>,
    pub clip: Option<f64>,
    pub no_clip: Option<bool>,
    pub update_every: Option<u64>,
    pub weight_decay: Option<f64>,
    pub schedule: Option<String>,
    pub precond_schedule: Option<String>,
    pub iters: Option<u64>,
    pub seeds: Option<String>,
    pub log_every: Option<u64>,
    pub precond_init: Option<f64>,
    pub auto_scale: Option<bool>,
    pub pair_source: Option<PairSource>,
    pub target_loss: Option<f64>,
    pub stop_on_success: Option<bool>,
    pub out: Option<PathBuf>,
    pub summary_json: Option<PathBuf>,
    pub n: Option<usize>,
    pub kappa: Option<f64>,
    pub grad_noise: Option<f64>,
    pub hvp_noise: Option<f64>,
    pub side: Option<usize>,
    pub classes: Option<usize>,
    pub train: Option<usize>,
    pub test: Option<usize>,
    pub batch: Option<usize>,
    pub spread: Option<f64>,
    pub seq_len: Option<usize>,
    pub hidden: Option<usize>,
}

impl FileConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Overlays every key set here onto `other`, so `self` wins.
    pub fn overlay(self, other: FileConfig) -> FileConfig {
        macro_rules! pick {
            ($($f:ident),*) => { FileConfig { $($f: self.$f.or(other.$f)),* } };
        }
        pick!(
            precond,
            lr,
            precond_lr,
            momentum,
            clip,
            no_clip,
            update_every,
            weight_decay,
            schedule,
            precond_schedule,
            iters,
            seeds,
            log_every,
            precond_init,
            auto_scale,
            pair_source,
            target_loss,
            stop_on_success,
            out,
            summary_json,
            n,
            kappa,
            grad_noise,
            hvp_noise,
            side,
            classes,
            train,
            test,
            batch,
            spread,
            seq_len,
            hidden
        )
    }

    /// Applies the set keys to `cfg`.
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if self.clip.is_some() && self.no_clip == Some(true) {
            return Err(CliError::Config("clip and no_clip conflict".into()));
        }
        if let Some(p) = &self.precond {
            cfg.precond = p.parse()?;
        }
        let o = &mut cfg.optimizer;
        set(&mut o.lr, self.lr);
        set(&mut o.precond_lr, self.precond_lr);
        set(&mut o.momentum, self.momentum);
        set(&mut o.update_every, self.update_every);
        set(&mut o.weight_decay, self.weight_decay);
        if let Some(c) = self.clip {
            o.clip = Some(c);
        }
        if self.no_clip == Some(true) {
            o.clip = None;
        }
        set(&mut cfg.iters, self.iters);
        if let Some(s) = &self.schedule {
            cfg.optimizer.schedule = s.parse::<ScheduleSpec>()?.resolve(cfg.iters);
        }
        if let Some(s) = &self.precond_schedule {
            cfg.optimizer.precond_schedule = s.parse::<ScheduleSpec>()?.resolve(cfg.iters);
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = parse_seeds(s)?;
        }
        set(&mut cfg.log_every, self.log_every);
        set(&mut cfg.precond_init, self.precond_init);
        set(&mut cfg.auto_scale, self.auto_scale);
        set(&mut cfg.pair_source, self.pair_source);
        if self.target_loss.is_some() {
            cfg.target_loss = self.target_loss;
        }
        set(&mut cfg.stop_on_success, self.stop_on_success);
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        if self.summary_json.is_some() {
            cfg.summary_json = self.summary_json.clone();
        }
        match &mut cfg.testbed {
            Testbed::Quadratic { n, kappa, grad_noise, hvp_noise } => {
                set(n, self.n);
                set(kappa, self.kappa);
                set(grad_noise, self.grad_noise);
                set(hvp_noise, self.hvp_noise);
            }
            Testbed::Rosenbrock { n } => set(n, self.n),
            Testbed::Logreg { side, classes, train, test, batch, spread } => {
                set(side, self.side);
                set(classes, self.classes);
                set(train, self.train);
                set(test, self.test);
                set(batch, self.batch);
                set(spread, self.spread);
            }
            Testbed::Xor { seq_len, hidden, batch } => {
                set(seq_len, self.seq_len);
                set(hidden, self.hidden);
                set(batch, self.batch);
            }
        }
        Ok(())
    }
}

fn set<T: Clone>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
