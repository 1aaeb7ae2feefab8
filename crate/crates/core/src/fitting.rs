//! Fitting criterion, online fitting loop, and dense oracles.

use crate::curvature::CurvaturePair;
use crate::error::{check_dim, PsgdError, Result};
use crate::precond::GroupPreconditioner;
use crate::{check_oracle_cap, Matrix};

/// `h^T P h + v^T P^{-1} v`, computed as `|Q h|^2 + |Q^{-T} v|^2`.
pub fn criterion_hat<Q: GroupPreconditioner>(q: &Q, pair: &CurvaturePair) -> Result<f64> {
    check_dim(q.dim(), pair.dim())?;
    let a = q.apply(pair.h())?;
    let b = q.apply_inv_t(pair.v())?;
    let value = a.norm_squared() + b.norm_squared();
    if !value.is_finite() {
        return Err(PsgdError::NonFinite("criterion"));
    }
    Ok(value)
}

/// Expected curvature `H` and second moment of its noise `E[eps^2]`.
#[derive(Debug, Clone)]
pub struct FixedPointSpec {
    h: Matrix,
    noise: Matrix,
}

impl FixedPointSpec {
    pub fn new(h: Matrix, noise_second_moment: Matrix) -> Result<Self> {
        let n = h.nrows();
        if n == 0 || h.ncols() != n || noise_second_moment.shape() != (n, n) {
            return Err(PsgdError::InvalidDimension("square matrices of equal size required".into()));
        }
        check_oracle_cap(n)?;
        for m in [&h, &noise_second_moment] {
            let asym = (m - m.transpose()).amax();
            if asym > 1e-12 * m.amax().max(1.0) {
                return Err(PsgdError::InvalidConfig(format!("matrix is not symmetric ({asym:e})")));
            }
        }
        Ok(Self { h, noise: noise_second_moment })
    }

    pub fn noiseless(h: Matrix) -> Result<Self> {
        let n = h.nrows();
        Self::new(h, Matrix::zeros(n, n))
    }

    pub fn hessian(&self) -> &Matrix {
        &self.h
    }
}

/// The unique SPD minimizer of the expected criterion, `(H^2 + E[eps^2])^{-1/2}`.
pub fn fixed_point_oracle(spec: &FixedPointSpec) -> Result<Matrix> {
    let m = &spec.h * &spec.h + &spec.noise;
    let m = (&m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigen();
    let top = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|&l| !(l > top * 1e-14)) || top == 0.0 {
        return Err(PsgdError::NotInvertible("H^2 + E[eps^2] is numerically singular".into()));
    }
    Ok(spectral_fn(&eig, |l| 1.0 / l.sqrt()))
}

/// Ratio of the largest to smallest absolute eigenvalue of `P^{1/2} H P^{1/2}`.
///
/// Returns `f64::INFINITY` when that matrix has a zero eigenvalue.
pub fn spectral_spread(p: &Matrix, h: &Matrix) -> Result<f64> {
    let n = p.nrows();
    if p.shape() != (n, n) || h.shape() != (n, n) || n == 0 {
        return Err(PsgdError::InvalidDimension("square matrices of equal size required".into()));
    }
    check_oracle_cap(n)?;
    let p_sym = (p + p.transpose()) * 0.5;
    let eig = p_sym.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(PsgdError::InvalidConfig("preconditioner is not positive definite".into()));
    }
    let root = spectral_fn(&eig, f64::sqrt);
    let s = &root * h * &root;
    let s = (&s + s.transpose()) * 0.5;
    let abs: Vec<f64> = s.symmetric_eigenvalues().iter().map(|l| l.abs()).collect();
    let hi = abs.iter().cloned().fold(0.0, f64::max);
    let lo = abs.iter().cloned().fold(f64::INFINITY, f64::min);
    if lo == 0.0 || lo <= hi * f64::EPSILON {
        return Ok(f64::INFINITY);
    }
    Ok(hi / lo)
}

fn spectral_fn(eig: &nalgebra::SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> Matrix {
    let d = eig.eigenvalues.map(f);
    let q = &eig.eigenvectors;
    q * Matrix::from_diagonal(&d) * q.transpose()
}

#[derive(Debug, Clone)]
pub struct FitReport<Q> {
    pub element: Q,
    /// Criterion of each drawn pair, evaluated before the step it drives.
    pub trace: Vec<f64>,
    pub rejected: usize,
    pub source_errors: usize,
}

/// Runs `steps` online fitting steps with pairs from `source(step)` and step
/// sizes from `step_size(step)`.
///
/// Pair-source failures and rejected updates are counted, not fatal.
pub fn fit_preconditioner<Q, S, M>(init: Q, mut source: S, steps: usize, mut step_size: M) -> FitReport<Q>
where
    Q: GroupPreconditioner,
    S: FnMut(usize) -> Result<CurvaturePair>,
    M: FnMut(usize) -> f64,
{
    let mut report = FitReport { element: init, trace: Vec::with_capacity(steps), rejected: 0, source_errors: 0 };
    for step in 0..steps {
        let pair = match source(step) {
            Ok(p) => p,
            Err(e) => {
                log::debug!("fitting step {step}: no pair ({e})");
                report.source_errors += 1;
                continue;
            }
        };
        match criterion_hat(&report.element, &pair) {
            Ok(c) => report.trace.push(c),
            Err(_) => {
                report.rejected += 1;
                continue;
            }
        }
        let out = report.element.fit_step(&pair, step_size(step));
        if !out.is_applied() {
            report.rejected += 1;
        }
        report.element = out.element;
    }
    report
}

/// Mean of consecutive windows of `width` values (the last window may be short).
pub fn windowed_means(trace: &[f64], width: usize) -> Vec<f64> {
    trace.chunks(width.max(1)).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}
