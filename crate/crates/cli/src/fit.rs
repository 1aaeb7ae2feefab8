//! The `fit-only` experiment: online preconditioner fitting on quadratic
//! curvature pairs, compared with the closed-form fixed point.

use std::io::Write;

use psgd_core::curvature::{make_probe, pair_from_hvp, ProbeDistribution};
use psgd_core::fitting::{fit_preconditioner, fixed_point_oracle, spectral_spread, FixedPointSpec};
use psgd_core::testbeds::quadratic::Quadratic;
use psgd_core::{Batch, GroupPreconditioner, Matrix, Problem, SeededRng, Vector};
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::args::FitArgs;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub precond: String,
    pub n: usize,
    pub kappa: f64,
    pub hvp_noise: f64,
    pub steps: usize,
    /// `|P - P*|_F / |P*|_F` against the unconstrained fixed point `P*`.
    pub rel_error: f64,
    /// Eigenvalue spread of `P^{1/2} H P^{1/2}`.
    pub spread: f64,
    /// Mean criterion over the last tenth of the steps.
    pub late_criterion: f64,
    pub rejected: usize,
}

/// Step size: linear warm-up from `mu / 10` over `warmup * steps`, then `mu`.
pub fn warmup_schedule(mu: f64, warmup: f64, steps: usize) -> impl Fn(usize) -> f64 {
    let warm = (warmup * steps as f64).round() as usize;
    move |i| {
        if i < warm {
            mu / 10.0 + (mu - mu / 10.0) * i as f64 / warm as f64
        } else {
            mu
        }
    }
}

pub fn run_fit<W: Write>(args: &FitArgs, csv_out: W) -> Result<FitSummary> {
    if !(args.mu > 0.0 && args.mu < 1.0) || !(0.0..=1.0).contains(&args.warmup) || args.steps == 0 {
        return Err(CliError::Config("fit-only needs mu in (0, 1), warmup in [0, 1] and steps >= 1".into()));
    }
    let n = args.n;
    let quad = Quadratic::new(n, args.kappa, 0.0, args.hvp_noise, args.seed)?;
    let h = quad.hessian().clone();
    // h = H v + s |v| xi has E[h h^T] = H^2 + n s^2 I for standard normal v.
    let noise = Matrix::identity(n, n) * (n as f64 * args.hvp_noise * args.hvp_noise);
    let oracle = fixed_point_oracle(&FixedPointSpec::new(h.clone(), noise)?)?;

    let mut rng = SeededRng::seed_from_u64(args.seed);
    let init = args.precond.build(n, args.precond_init, &mut rng)?;
    let zero = Vector::zeros(n);
    let source = |_| {
        let v = make_probe(n, ProbeDistribution::StandardNormal, &mut rng)?;
        let batch = if args.hvp_noise > 0.0 { Batch::Sampled(rng.random()) } else { Batch::Full };
        pair_from_hvp(|t, v| quad.hvp(t, v, &batch).expect("quadratic has an exact hvp"), &zero, &v)
    };
    let fit = fit_preconditioner(init, source, args.steps, warmup_schedule(args.mu, args.warmup, args.steps));

    let mut writer = csv::Writer::from_writer(csv_out);
    writer.write_record(["step", "criterion"])?;
    for (i, c) in fit.trace.iter().enumerate() {
        writer.write_record([i.to_string(), c.to_string()])?;
    }
    writer.flush()?;

    let dq = fit.element.to_dense()?;
    let p = dq.transpose() * dq;
    let tail = &fit.trace[fit.trace.len() - (fit.trace.len() / 10).max(1)..];
    Ok(FitSummary {
        precond: args.precond.to_string(),
        n,
        kappa: args.kappa,
        hvp_noise: args.hvp_noise,
        steps: args.steps,
        rel_error: (&p - &oracle).norm() / oracle.norm(),
        spread: spectral_spread(&p, &h)?,
        late_criterion: tail.iter().sum::<f64>() / tail.len() as f64,
        rejected: fit.rejected,
    })
}
