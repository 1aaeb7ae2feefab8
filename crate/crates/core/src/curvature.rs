//! Curvature pairs `(v, h)` used to fit preconditioners.
//!
//! A pair couples a probe or parameter perturbation `v` with the matching
//! curvature response `h`, which is either a Hessian-vector product, a
//! finite difference of gradients along `v`, or the gradient change between
//! two iterates.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, PsgdError, Result};
use crate::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairKind {
    ExactHvp,
    FdHvp,
    IterateDelta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvaturePair {
    v: Vector,
    h: Vector,
    kind: PairKind,
}

impl CurvaturePair {
    pub fn new(v: Vector, h: Vector, kind: PairKind) -> Result<Self> {
        if v.is_empty() {
            return Err(PsgdError::InvalidDimension("curvature pair of length 0".into()));
        }
        check_dim(v.len(), h.len())?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(PsgdError::NonFinite("probe vector"));
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(PsgdError::NonFinite("curvature response"));
        }
        if v.amax() == 0.0 {
            return Err(PsgdError::DegenerateStep("zero probe vector".into()));
        }
        Ok(Self { v, h, kind })
    }

    pub fn v(&self) -> &Vector {
        &self.v
    }

    pub fn h(&self) -> &Vector {
        &self.h
    }

    pub fn kind(&self) -> PairKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ProbeDistribution {
    #[default]
    StandardNormal,
    Rademacher,
}

/// Draws a length-`n` probe with unit second moment per component.
pub fn make_probe<R: Rng + ?Sized>(n: usize, dist: ProbeDistribution, rng: &mut R) -> Result<Vector> {
    if n == 0 {
        return Err(PsgdError::InvalidDimension("probe of length 0".into()));
    }
    let v = match dist {
        ProbeDistribution::StandardNormal => Vector::from_fn(n, |_, _| rng.sample(StandardNormal)),
        ProbeDistribution::Rademacher => Vector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 }),
    };
    Ok(v)
}

pub fn pair_from_hvp<F>(hvp: F, theta: &Vector, v: &Vector) -> Result<CurvaturePair>
where
    F: FnOnce(&Vector, &Vector) -> Vector,
{
    check_dim(theta.len(), v.len())?;
    let h = hvp(theta, v);
    check_dim(v.len(), h.len())?;
    if h.iter().any(|x| !x.is_finite()) {
        return Err(PsgdError::NonFinite("Hessian-vector product"));
    }
    CurvaturePair::new(v.clone(), h, PairKind::ExactHvp)
}

/// `sqrt(eps) * (1 + |theta|_inf) / max(|v|_inf, tiny)`.
pub fn default_fd_step(theta: &Vector, v: &Vector) -> f64 {
    let vmax = v.amax().max(f64::MIN_POSITIVE);
    f64::EPSILON.sqrt() * (1.0 + theta.amax()) / vmax
}

/// Forward difference `(grad(theta + eps v) - grad(theta)) / eps`.
///
/// `eps = None` uses [`default_fd_step`]. The gradient at `theta` is
/// recomputed; callers that already hold it should use
/// [`pair_from_fd_grad_with`].
pub fn pair_from_fd_grad<F>(mut grad: F, theta: &Vector, v: &Vector, eps: Option<f64>) -> Result<CurvaturePair>
where
    F: FnMut(&Vector) -> Vector,
{
    let g0 = grad(theta);
    pair_from_fd_grad_with(grad, theta, &g0, v, eps)
}

pub fn pair_from_fd_grad_with<F>(
    mut grad: F,
    theta: &Vector,
    grad_at_theta: &Vector,
    v: &Vector,
    eps: Option<f64>,
) -> Result<CurvaturePair>
where
    F: FnMut(&Vector) -> Vector,
{
    check_dim(theta.len(), v.len())?;
    check_dim(theta.len(), grad_at_theta.len())?;
    if v.amax() == 0.0 {
        return Err(PsgdError::DegenerateStep("zero probe vector".into()));
    }
    let eps = eps.unwrap_or_else(|| default_fd_step(theta, v));
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(PsgdError::InvalidConfig(format!("finite-difference step {eps}")));
    }
    let shifted = theta + v * eps;
    if shifted.iter().zip(theta.iter()).all(|(a, b)| a == b) {
        return Err(PsgdError::DegenerateStep(format!("theta + {eps:e} * v == theta")));
    }
    let g1 = grad(&shifted);
    check_dim(theta.len(), g1.len())?;
    let h = (g1 - grad_at_theta) / eps;
    if h.iter().any(|x| !x.is_finite()) {
        return Err(PsgdError::NonFinite("finite-difference curvature"));
    }
    CurvaturePair::new(v.clone(), h, PairKind::FdHvp)
}

/// Pair from two successive iterates. Near-duplicate iterates
/// (`|dtheta|_inf < 1e-12 (1 + |theta|_inf)`) are rejected as degenerate.
pub fn pair_from_deltas(theta_prev: &Vector, theta: &Vector, g_prev: &Vector, g: &Vector) -> Result<CurvaturePair> {
    let n = theta.len();
    check_dim(n, theta_prev.len())?;
    check_dim(n, g_prev.len())?;
    check_dim(n, g.len())?;
    let v = theta - theta_prev;
    if v.amax() < 1e-12 * (1.0 + theta.amax()) {
        return Err(PsgdError::DegenerateStep("successive iterates coincide".into()));
    }
    CurvaturePair::new(v, g - g_prev, PairKind::IterateDelta)
}
