//! Preconditioned SGD: `theta <- theta - lr * clip(P m)`, with `P` refitted
//! every `update_every` iterations from a curvature pair.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::curvature::{
    make_probe, pair_from_deltas, pair_from_fd_grad_with, pair_from_hvp, CurvaturePair, ProbeDistribution,
};
use crate::error::{check_dim, PsgdError, Result};
use crate::precond::{GroupPreconditioner, Preconditioner};
use crate::testbeds::{Batch, Problem};
use crate::{SeededRng, Vector};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Geometric interpolation from `start` at 0 to `end` at `total`; ignores the base rate.
    ExponentialAnneal { start: f64, end: f64, total: u64 },
    /// Divide by ten at each listed iteration.
    Stage { drops: Vec<u64> },
    /// `base * (1 + cos(pi i / total)) / 2`.
    Cosine { total: u64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            Schedule::Constant => Ok(()),
            Schedule::ExponentialAnneal { start, end, total } => {
                if !(*start > 0.0 && *end > 0.0) || *total == 0 {
                    return Err(PsgdError::InvalidConfig("exponential anneal needs positive rates and total".into()));
                }
                Ok(())
            }
            Schedule::Stage { drops } => {
                if drops.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(PsgdError::InvalidConfig("stage drops must be strictly increasing".into()));
                }
                Ok(())
            }
            Schedule::Cosine { total } => {
                if *total == 0 {
                    return Err(PsgdError::InvalidConfig("cosine schedule needs total > 0".into()));
                }
                Ok(())
            }
        }
    }
}

/// Rate at iteration `i`; iterations past the horizon clamp to the final value.
pub fn lr_schedule(schedule: &Schedule, base: f64, i: u64) -> f64 {
    match schedule {
        Schedule::Constant => base,
        Schedule::ExponentialAnneal { start, end, total } => {
            let t = i.min(*total) as f64 / *total as f64;
            start * (end / start).powf(t)
        }
        Schedule::Stage { drops } => {
            let passed = drops.iter().filter(|&&d| i >= d).count() as i32;
            base * 10f64.powi(-passed)
        }
        Schedule::Cosine { total } => {
            let t = i.min(*total) as f64 / *total as f64;
            base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub precond_lr: f64,
    pub momentum: f64,
    /// Threshold on `|P m|_2`; `None` disables clipping.
    pub clip: Option<f64>,
    pub update_every: u64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub precond_schedule: Schedule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            precond_lr: 0.01,
            momentum: 0.0,
            clip: Some(10.0),
            update_every: 1,
            weight_decay: 0.0,
            schedule: Schedule::Constant,
            precond_schedule: Schedule::Constant,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(PsgdError::InvalidConfig(format!("{what} = {v}")));
        if !(self.lr > 0.0 && self.lr <= 1.0) {
            return bad("lr", self.lr);
        }
        if !(self.precond_lr > 0.0 && self.precond_lr < 1.0) {
            return bad("precond_lr", self.precond_lr);
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", self.momentum);
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return bad("clip", c);
            }
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", self.weight_decay);
        }
        if self.update_every == 0 {
            return Err(PsgdError::InvalidConfig("update_every = 0".into()));
        }
        self.schedule.validate()?;
        self.precond_schedule.validate()
    }

    /// Fitting happens on iterations `k-1, 2k-1, ...`, so `N` iterations give `floor(N / k)` updates.
    pub fn is_update_iter(&self, iter: u64) -> bool {
        (iter + 1).is_multiple_of(self.update_every)
    }
}

/// `beta m + (1 - beta) g`.
pub fn momentum_update(m: &Vector, g: &Vector, beta: f64) -> Vector {
    m * beta + g * (1.0 - beta)
}

/// Rescales `pg` so its Euclidean norm is at most `tau`.
pub fn clip_preconditioned(pg: &Vector, tau: f64) -> Vector {
    let norm = pg.norm();
    if norm > tau {
        pg * (tau / norm)
    } else {
        pg.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub theta: Vector,
    pub momentum: Vector,
    pub precond: Preconditioner,
    pub iter: u64,
    pub precond_updates: u64,
    pub rejected_updates: u64,
}

impl OptimizerState {
    pub fn new(theta: Vector, precond: Preconditioner) -> Result<Self> {
        check_dim(theta.len(), precond.dim())?;
        let n = theta.len();
        Ok(Self { theta, momentum: Vector::zeros(n), precond, iter: 0, precond_updates: 0, rejected_updates: 0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub lr: f64,
    pub step_norm: f64,
    pub clipped: bool,
    pub precond_updated: bool,
    /// Fitting criterion of the pair used on this step, if any.
    pub criterion: Option<f64>,
}

/// One preconditioned step given the gradient `g` at `state.theta` and, on
/// update iterations, a curvature pair.
pub fn psgd_step(
    state: &mut OptimizerState,
    g: &Vector,
    maybe_pair: Option<&CurvaturePair>,
    cfg: &OptimizerConfig,
) -> Result<StepReport> {
    check_dim(state.theta.len(), g.len())?;
    if g.iter().any(|x| !x.is_finite()) {
        return Err(PsgdError::NonFinite("gradient"));
    }
    let mut report = StepReport::default();
    if let Some(pair) = maybe_pair.filter(|_| cfg.is_update_iter(state.iter)) {
        let mu = lr_schedule(&cfg.precond_schedule, cfg.precond_lr, state.iter);
        let out = state.precond.fit_step(pair, mu);
        report.criterion = out.criterion;
        if out.is_applied() {
            state.precond_updates += 1;
            report.precond_updated = true;
        } else {
            state.rejected_updates += 1;
        }
        state.precond = out.element;
    }
    let g = if cfg.weight_decay > 0.0 { g + &state.theta * cfg.weight_decay } else { g.clone() };
    state.momentum = if cfg.momentum > 0.0 { momentum_update(&state.momentum, &g, cfg.momentum) } else { g };
    let mut pg = state.precond.precondition(&state.momentum)?;
    if let Some(tau) = cfg.clip {
        let norm = pg.norm();
        if norm > tau {
            pg *= tau / norm;
            report.clipped = true;
        }
    }
    let lr = lr_schedule(&cfg.schedule, cfg.lr, state.iter);
    state.theta.axpy(-lr, &pg, 1.0);
    state.iter += 1;
    report.lr = lr;
    report.step_norm = lr * pg.norm();
    Ok(report)
}

/// How fitting pairs are produced inside [`Psgd::step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    /// Gradient finite difference along a random probe.
    #[default]
    FdHvp,
    /// The problem's Hessian-vector product; falls back to `FdHvp` when absent.
    ExactHvp,
    /// Differences between iterates, snapshotted on update iterations only.
    IterateDelta,
    /// Differences between consecutive iterates.
    IterateDeltaEveryStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairBatch {
    /// Reuse the step's minibatch.
    #[default]
    Same,
    /// Draw a separate minibatch for the pair.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Minibatch loss before the step.
    pub loss: f64,
    pub grad_norm: f64,
    pub criterion: Option<f64>,
    pub report: StepReport,
}

/// Drives [`psgd_step`] on a [`Problem`], owning the random stream.
#[derive(Debug, Clone)]
pub struct Psgd {
    pub cfg: OptimizerConfig,
    pub state: OptimizerState,
    pub pair_source: PairSource,
    pub pair_batch: PairBatch,
    pub probe: ProbeDistribution,
    /// Rescale `Q` by `(|v|^2 / |h|^2)^{1/4}` on the first pair, so that `P`
    /// starts at the magnitude of the inverse curvature.
    pub auto_scale: bool,
    rng: SeededRng,
    snapshot: Option<(Vector, Vector)>,
}

impl Psgd {
    pub fn new(cfg: OptimizerConfig, theta: Vector, precond: Preconditioner, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: OptimizerState::new(theta, precond)?,
            pair_source: PairSource::default(),
            pair_batch: PairBatch::default(),
            probe: ProbeDistribution::default(),
            auto_scale: false,
            rng: SeededRng::seed_from_u64(seed),
            snapshot: None,
        })
    }

    pub fn with_pair_source(mut self, source: PairSource) -> Self {
        self.pair_source = source;
        self
    }

    pub fn with_pair_batch(mut self, batch: PairBatch) -> Self {
        self.pair_batch = batch;
        self
    }

    pub fn with_auto_scale(mut self, on: bool) -> Self {
        self.auto_scale = on;
        self
    }

    pub fn rng_mut(&mut self) -> &mut SeededRng {
        &mut self.rng
    }

    pub fn step<P: Problem + ?Sized>(&mut self, problem: &P) -> Result<StepInfo> {
        let batch = problem.sample_batch(&mut self.rng);
        let (loss, g) = problem.loss_grad(&self.state.theta, &batch);
        let update_now = self.cfg.is_update_iter(self.state.iter) && !self.state.precond.is_identity();
        let pair = match self.pair_source {
            PairSource::IterateDeltaEveryStep => self.delta_pair(&g),
            PairSource::IterateDelta if update_now => self.delta_pair(&g),
            _ if update_now => self.probe_pair(problem, &batch, &g),
            _ => None,
        };
        let pair = pair.filter(|_| update_now);
        if let Some(p) = pair.as_ref().filter(|_| self.auto_scale && self.state.precond_updates == 0) {
            let hh = p.h().norm_squared();
            if hh > 0.0 {
                self.state.precond.rescale((p.v().norm_squared() / hh).powf(0.25));
            }
        }
        let report = psgd_step(&mut self.state, &g, pair.as_ref(), &self.cfg)?;
        Ok(StepInfo { loss, grad_norm: g.norm(), criterion: report.criterion, report })
    }

    fn probe_pair<P: Problem + ?Sized>(&mut self, problem: &P, batch: &Batch, g: &Vector) -> Option<CurvaturePair> {
        let theta = &self.state.theta;
        let v = make_probe(theta.len(), self.probe, &mut self.rng).ok()?;
        let (batch, g0) = match self.pair_batch {
            PairBatch::Same => (*batch, None),
            PairBatch::Independent => {
                let b = problem.sample_batch(&mut self.rng);
                (b, Some(problem.grad(theta, &b)))
            }
        };
        let exact = match self.pair_source {
            PairSource::ExactHvp => problem.hvp(theta, &v, &batch),
            _ => None,
        };
        let pair = match exact {
            Some(h) => pair_from_hvp(|_, _| h, theta, &v),
            None => pair_from_fd_grad_with(|t| problem.grad(t, &batch), theta, g0.as_ref().unwrap_or(g), &v, None),
        };
        pair.map_err(|e| log::debug!("no curvature pair at iter {}: {e}", self.state.iter)).ok()
    }

    fn delta_pair(&mut self, g: &Vector) -> Option<CurvaturePair> {
        let theta = self.state.theta.clone();
        let prev = self.snapshot.replace((theta.clone(), g.clone()));
        let (tp, gp) = prev?;
        pair_from_deltas(&tp, &theta, &gp, g).ok()
    }
}
