//! Oracle and invariant checks: structured group code against dense matrix
//! algebra, fitting against closed-form fixed points, and analytic
//! derivatives against finite differences.

use std::fmt;

use psgd_core::curvature::{make_probe, pair_from_hvp, ProbeDistribution};
use psgd_core::fitting::{criterion_hat, fit_preconditioner};
use psgd_core::lra::{lra_spectrum_witness, Factor};
use psgd_core::testbeds::logreg::{Dataset, LogRegOuter};
use psgd_core::testbeds::quadratic::Quadratic;
use psgd_core::testbeds::rosenbrock::Rosenbrock;
use psgd_core::testbeds::xor::XorTask;
use psgd_core::{
    Batch, CurvaturePair, GroupKind, LraElement, LraScale, Matrix, MfGroupElement, PairKind, PermSubgroup, Problem,
    SeededRng, Vector,
};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::args::FitArgs;
use crate::error::Result;
use crate::fit::run_fit;
use crate::precond_spec::PrecondSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Groups,
    Lra,
    Fitting,
    Gradients,
    All,
}

/// One check: passes when `observed <= tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub tolerance: f64,
    pub observed: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, tolerance: f64, observed: f64) -> Self {
        Self { name: name.into(), tolerance, observed, passed: observed <= tolerance }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{tag}  {:<48} observed {:.3e}  tolerance {:.1e}", c.name, c.observed, c.tolerance)?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

/// `Q^{-T} x` for an LRA element; swappable so the Woodbury check can be
/// shown to catch a broken implementation.
pub type InvTranspose = fn(&LraElement, &Vector) -> psgd_core::Result<Vector>;

pub fn verify(suite: Suite) -> Result<Report> {
    let mut checks = Vec::new();
    if matches!(suite, Suite::Groups | Suite::All) {
        checks.extend(verify_groups(1000, 1)?);
    }
    if matches!(suite, Suite::Lra | Suite::All) {
        checks.extend(verify_lra(LraElement::apply_inv_t, 2)?);
    }
    if matches!(suite, Suite::Fitting | Suite::All) {
        checks.extend(verify_fitting(3)?);
    }
    if matches!(suite, Suite::Gradients | Suite::All) {
        checks.extend(verify_gradients(4)?);
    }
    Ok(Report { checks })
}

fn normal(rng: &mut SeededRng) -> f64 {
    StandardNormal.sample(rng)
}

fn max_abs(m: &Matrix) -> f64 {
    m.amax()
}

/// Identity coefficients near 1.5 and the rest small, so elements stay well
/// conditioned.
pub fn random_mf(group: &PermSubgroup, rng: &mut SeededRng) -> psgd_core::Result<MfGroupElement> {
    let n = group.dim();
    let id = group.identity_index();
    let coeffs = (0..group.order())
        .map(|i| {
            let base = if i == id { 1.5 } else { 0.0 };
            Vector::from_fn(n, |_, _| base + 0.25 * normal(rng))
        })
        .collect();
    MfGroupElement::new(group.clone(), coeffs)
}

/// Random LRA element with `O(1 / sqrt(n))` factors.
pub fn random_lra(n: usize, r: usize, diag: bool, rng: &mut SeededRng) -> psgd_core::Result<LraElement> {
    let sd = 0.5 / (n as f64).sqrt();
    let u = Matrix::from_fn(n, r, |_, _| sd * normal(rng));
    let v = Matrix::from_fn(n, r, |_, _| sd * normal(rng));
    let scale = if diag {
        LraScale::Diag(Vector::from_fn(n, |_, _| rng.random_range(0.5..2.0)))
    } else {
        LraScale::Scalar(rng.random_range(0.5..2.0))
    };
    LraElement::new(scale, u, v)
}

pub fn random_pair(n: usize, rng: &mut SeededRng) -> psgd_core::Result<CurvaturePair> {
    let v = make_probe(n, ProbeDistribution::StandardNormal, rng)?;
    let h = make_probe(n, ProbeDistribution::StandardNormal, rng)?;
    CurvaturePair::new(v, h, PairKind::ExactHvp)
}

/// The sparse groups exercised by the checks, with their dimension.
pub fn group_cases() -> psgd_core::Result<Vec<(GroupKind, PermSubgroup)>> {
    Ok(vec![
        (GroupKind::Trivial, PermSubgroup::trivial(8)?),
        (GroupKind::Flip, PermSubgroup::flip(8)?),
        (GroupKind::Flip, PermSubgroup::flip(7)?),
        (GroupKind::HalfShift, PermSubgroup::half_shift(8)?),
        (GroupKind::AllShifts, PermSubgroup::all_shifts(8)?),
    ])
}

/// Closure, inverse and associativity against dense products, `trials`
/// random instances per group.
pub fn verify_groups(trials: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (kind, group) in group_cases()? {
        let n = group.dim();
        let eye = Matrix::identity(n, n);
        let (mut closure, mut inverse, mut assoc) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..trials {
            let a = random_mf(&group, &mut rng)?;
            let b = random_mf(&group, &mut rng)?;
            let c = random_mf(&group, &mut rng)?;
            let (da, db, dc) = (a.to_dense()?, b.to_dense()?, c.to_dense()?);
            let ab = a.compose(&b)?;
            closure = closure.max(max_abs(&(ab.to_dense()? - &da * &db)));
            inverse = inverse.max(max_abs(&(a.inverse()?.to_dense()? * &da - &eye)));
            let left = ab.compose(&c)?.to_dense()?;
            let right = a.compose(&b.compose(&c)?)?.to_dense()?;
            assoc = assoc.max(max_abs(&(&left - right)).max(max_abs(&(left - &da * &db * &dc))));
        }
        let tag = format!("{}(n={n})", kind.name());
        out.push(Check::new(format!("groups/{tag}/closure"), 1e-10, closure));
        out.push(Check::new(format!("groups/{tag}/inverse"), 1e-10, inverse));
        out.push(Check::new(format!("groups/{tag}/associativity"), 1e-10, assoc));
    }
    Ok(out)
}

/// Woodbury inverses, the `U`-group closure and Lie bracket for fixed `V`,
/// and the spectrum witness.
pub fn verify_lra(inv_t: InvTranspose, seed: u64) -> Result<Vec<Check>> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let (mut inv_t_err, mut inv_err) = (0.0f64, 0.0f64);
    for trial in 0..200 {
        let n = rng.random_range(1..=64);
        let r = rng.random_range(0..=8usize.min(n));
        let q = random_lra(n, r, trial % 2 == 0, &mut rng)?;
        let dq = q.to_dense()?;
        let dinv = dq.clone().try_inverse().expect("well-conditioned draw");
        let x = make_probe(n, ProbeDistribution::StandardNormal, &mut rng)?;
        let want_t = dinv.transpose() * &x;
        inv_t_err = inv_t_err.max((inv_t(&q, &x)? - &want_t).norm() / want_t.norm());
        let want = &dinv * &x;
        inv_err = inv_err.max((q.apply_inv(&x)? - &want).norm() / want.norm());
    }
    let (n, r) = (8, 2);
    let eye = Matrix::identity(n, n);
    let (mut closure, mut bracket) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let g = |rng: &mut SeededRng| Matrix::from_fn(n, r, |_, _| 0.5 * normal(rng));
        let (v, a, b) = (g(&mut rng), g(&mut rng), g(&mut rng));
        // (I + A V^T)(I + B V^T) = I + (A + B + A V^T B) V^T
        let prod = (&eye + &a * v.transpose()) * (&eye + &b * v.transpose());
        let c = &a + &b + &a * v.tr_mul(&b);
        closure = closure.max(max_abs(&(prod - (&eye + &c * v.transpose()))));
        // [A V^T, B V^T] = (A V^T B - B V^T A) V^T
        let (x, y) = (&a * v.transpose(), &b * v.transpose());
        let lhs = &x * &y - &y * &x;
        let rhs = (&a * v.tr_mul(&b) - &b * v.tr_mul(&a)) * v.transpose();
        bracket = bracket.max(max_abs(&(lhs - rhs)));
    }
    let w = lra_spectrum_witness(100.0, 0.01)?;
    let dq = w.to_dense()?;
    let eig = (dq.transpose() * dq).symmetric_eigenvalues();
    let (hi, lo) = (eig.max(), eig.min());
    Ok(vec![
        Check::new("lra/woodbury inverse-transpose (rel)", 1e-10, inv_t_err),
        Check::new("lra/woodbury inverse (rel)", 1e-10, inv_err),
        Check::new("lra/fixed-V closure", 1e-12, closure),
        Check::new("lra/fixed-V Lie bracket", 1e-12, bracket),
        Check::new("lra/witness largest eigenvalue >= 100 (100 - max)", 0.0, 100.0 - hi),
        Check::new("lra/witness smallest eigenvalue <= 0.01 (min - 0.01)", 0.0, lo - 0.01),
    ])
}

/// Relative gap between a central difference of the criterion along an
/// update direction and its analytic derivative.
fn descent_gap(c: impl Fn(f64) -> psgd_core::Result<f64>, analytic: f64, eps: f64) -> psgd_core::Result<f64> {
    let fd = (c(eps)? - c(-eps)?) / (2.0 * eps);
    if analytic >= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((fd - analytic).abs() / analytic.abs())
}

/// Worst relative error of the analytic directional derivative along the
/// update direction over `trials` random (element, pair) draws, for every
/// group kind and LRA factor. Returns one entry per kind.
pub fn descent_checks(trials: usize, eps: f64, seed: u64) -> Result<Vec<(String, f64)>> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (kind, group) in group_cases()? {
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let q = random_mf(&group, &mut rng)?;
            let pair = random_pair(group.dim(), &mut rng)?;
            let dir = q.descent_direction(&pair)?;
            let c = |s: f64| criterion_hat(&q.step_along(&dir, s)?, &pair);
            worst = worst.max(descent_gap(c, dir.directional_derivative(), eps)?);
        }
        out.push((format!("{}(n={})", kind.name(), group.dim()), worst));
    }
    for r in [1, 4] {
        for diag in [false, true] {
            let mut worst = 0.0f64;
            for t in 0..trials {
                let q = random_lra(12, r, diag, &mut rng)?;
                let pair = random_pair(12, &mut rng)?;
                let factor = [Factor::Scale, Factor::U, Factor::V][t % 3];
                let dir = q.descent_direction(&pair, factor)?;
                let c = |s: f64| criterion_hat(&q.step_along(&dir, s)?, &pair);
                worst = worst.max(descent_gap(c, dir.directional_derivative(), eps)?);
            }
            let scale = if diag { "diag" } else { "scalar" };
            out.push((format!("lra(r={r},{scale})"), worst));
        }
    }
    Ok(out)
}

/// First-order descent and fixed points of online fitting.
pub fn verify_fitting(seed: u64) -> Result<Vec<Check>> {
    let mut out: Vec<Check> = descent_checks(100, 1e-6, seed)?
        .into_iter()
        .map(|(name, err)| Check::new(format!("fitting/descent derivative {name} (rel)"), 1e-3, err))
        .collect();

    // Hvp noise of relative magnitude 0.1, E|eps|^2 = 0.01 E|H v|^2: the fixed
    // point moves to (H^2 + E[eps^2])^{-1/2}.
    let (n, kappa) = (6, 100.0);
    let h2 = Quadratic::new(n, kappa, 0.0, 0.0, seed)?.eigenvalues().norm_squared();
    let args = FitArgs {
        precond: PrecondSpec::Group(GroupKind::AllShifts),
        n,
        kappa,
        hvp_noise: 0.1 * h2.sqrt() / n as f64,
        steps: 20_000,
        mu: 0.01,
        warmup: 0.2,
        precond_init: 3.0,
        seed,
        out: None,
        summary_json: None,
    };
    let noisy = run_fit(&args, std::io::sink())?;
    out.push(Check::new("fitting/noisy dense fixed point (rel)", 0.15, noisy.rel_error));

    // Noiseless dense fit on an ill-conditioned quadratic recovers H^{-1}.
    let (p, hinv) = dense_quadratic_fit(10, 1e4, 5000, seed)?;
    out.push(Check::new("fitting/dense fixed point H^-1 (rel)", 0.05, (&p - &hinv).norm() / hinv.norm()));
    Ok(out)
}

/// Fits a dense preconditioner to exact Hessian-vector pairs of a seeded
/// quadratic; returns the fitted `P` and `H^{-1}`.
///
/// `Q` starts at `10 I`, above the inverse curvature, and the step warms up
/// from 0.01 to 0.1 over the first fifth of the run.
pub fn dense_quadratic_fit(n: usize, kappa: f64, steps: usize, seed: u64) -> Result<(Matrix, Matrix)> {
    let quad = Quadratic::new(n, kappa, 0.0, 0.0, seed)?;
    let h = quad.hessian().clone();
    let hinv = h.clone().try_inverse().expect("SPD Hessian");
    let mut rng = SeededRng::seed_from_u64(seed);
    let zero = Vector::zeros(n);
    let source = |_| {
        let v = make_probe(n, ProbeDistribution::StandardNormal, &mut rng)?;
        pair_from_hvp(|_, v| &h * v, &zero, &v)
    };
    let warm = (steps / 5).max(1);
    let mu = |i: usize| {
        if i < warm {
            0.01 + (0.1 - 0.01) * i as f64 / warm as f64
        } else {
            0.1
        }
    };
    let fit =
        fit_preconditioner(MfGroupElement::scaled_identity(PermSubgroup::all_shifts(n)?, 10.0), source, steps, mu);
    let dq = fit.element.to_dense()?;
    Ok((dq.transpose() * dq, hinv))
}

fn grad_gap(p: &dyn Problem, theta: &Vector, batch: &Batch, rng: &mut SeededRng) -> psgd_core::Result<f64> {
    let d = make_probe(p.dim(), ProbeDistribution::StandardNormal, rng)?;
    let eps = 1e-5;
    let fd = (p.loss(&(theta + &d * eps), batch) - p.loss(&(theta - &d * eps), batch)) / (2.0 * eps);
    let an = p.grad(theta, batch).dot(&d);
    Ok((fd - an).abs() / (1.0 + an.abs()))
}

fn hvp_gap(p: &dyn Problem, theta: &Vector, batch: &Batch, rng: &mut SeededRng) -> psgd_core::Result<Option<f64>> {
    let v = make_probe(p.dim(), ProbeDistribution::StandardNormal, rng)?;
    let Some(hv) = p.hvp(theta, &v, batch) else {
        return Ok(None);
    };
    let eps = 1e-5;
    let fd = (p.grad(&(theta + &v * eps), batch) - p.grad(&(theta - &v * eps), batch)) / (2.0 * eps);
    Ok(Some((&fd - &hv).norm() / (1.0 + hv.norm())))
}

/// Testbed gradients and Hessian-vector products against central differences.
pub fn verify_gradients(seed: u64) -> Result<Vec<Check>> {
    let blobs = Dataset::synthetic_blobs(60, 3, 4, 0.3, seed)?;
    let problems: Vec<Box<dyn Problem>> = vec![
        Box::new(Quadratic::new(12, 100.0, 0.1, 0.0, seed)?),
        Box::new(Rosenbrock::new(6)?),
        Box::new(LogRegOuter::new(&blobs, None, 4, 20)?),
        Box::new(XorTask::new(8, 5, 6)?.with_init_scale(0.8)),
    ];
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut out = Vec::new();
    for p in &problems {
        let (mut g, mut h, mut has_hvp) = (0.0f64, 0.0f64, false);
        for _ in 0..5 {
            let theta = p.init(&mut rng);
            let batch = p.sample_batch(&mut rng);
            g = g.max(grad_gap(p.as_ref(), &theta, &batch, &mut rng)?);
            if let Some(e) = hvp_gap(p.as_ref(), &theta, &batch, &mut rng)? {
                h = h.max(e);
                has_hvp = true;
            }
        }
        out.push(Check::new(format!("gradients/{} grad vs central difference", p.name()), 1e-5, g));
        if has_hvp {
            out.push(Check::new(format!("gradients/{} hvp vs gradient difference", p.name()), 1e-5, h));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Woodbury with the wrong sign on the correction term.
    fn tampered_inv_t(q: &LraElement, x: &Vector) -> psgd_core::Result<Vector> {
        let (u, v) = (q.u(), q.v());
        let r = u.ncols();
        let core = (Matrix::identity(r, r) + u.tr_mul(v)).try_inverse().unwrap();
        let y = x + v * (core * u.tr_mul(x));
        Ok(match q.scale() {
            LraScale::Scalar(s) => y / *s,
            LraScale::Diag(d) => y.component_div(d),
        })
    }

    #[test]
    fn lra_suite_passes() {
        let checks = verify_lra(LraElement::apply_inv_t, 7).unwrap();
        assert!(checks.iter().all(|c| c.passed), "{checks:#?}");
    }

    #[test]
    fn tampered_woodbury_is_caught() {
        let checks = verify_lra(tampered_inv_t, 7).unwrap();
        let woodbury = &checks[0];
        assert!(!woodbury.passed);
        assert!(woodbury.observed > 1e-2, "{}", woodbury.observed);
    }

    #[test]
    fn groups_suite_passes() {
        let checks = verify_groups(50, 3).unwrap();
        assert_eq!(checks.len(), 15);
        assert!(checks.iter().all(|c| c.passed), "{checks:#?}");
    }

    #[test]
    fn gradients_suite_passes() {
        let checks = verify_gradients(5).unwrap();
        assert!(checks.iter().all(|c| c.passed), "{checks:#?}");
    }

    #[test]
    fn report_lists_failures() {
        let report = Report { checks: vec![Check::new("a", 1.0, 0.5), Check::new("b", 1.0, 2.0)] };
        assert!(!report.passed());
        assert_eq!(report.failures().map(|c| c.name.as_str()).collect::<Vec<_>>(), ["b"]);
        let text = report.to_string();
        assert!(text.contains("PASS  a") && text.contains("FAIL  b") && text.ends_with("2 checks, 1 failed"));
    }
}
