//! `f = 1/2 theta^T H theta` with a prescribed, randomly rotated spectrum.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use super::{batch_rng, sampled, Batch, Problem};
use crate::error::{PsgdError, Result};
use crate::{Matrix, SeededRng, Vector};

#[derive(Debug, Clone)]
pub struct Quadratic {
    h: Matrix,
    eigenvalues: Vector,
    grad_noise: f64,
    hvp_noise: f64,
}

fn gaussian(n: usize, rng: &mut SeededRng) -> Vector {
    Vector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Eigenvalues log-spaced over `[kappa^{-1/2}, kappa^{1/2}]`.
pub fn log_spectrum(n: usize, kappa: f64) -> Vector {
    if n == 1 {
        return Vector::from_element(1, 1.0);
    }
    Vector::from_fn(n, |i, _| kappa.powf(-0.5 + i as f64 / (n - 1) as f64))
}

/// Haar-distributed orthogonal matrix from the QR factorization of a Gaussian matrix.
pub fn random_orthogonal(n: usize, rng: &mut SeededRng) -> Matrix {
    let a = Matrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

impl Quadratic {
    pub fn new(n: usize, kappa: f64, grad_noise: f64, hvp_noise: f64, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(PsgdError::InvalidDimension("quadratic of dimension 0".into()));
        }
        if !(kappa >= 1.0) || !kappa.is_finite() {
            return Err(PsgdError::InvalidConfig(format!("condition number {kappa} < 1")));
        }
        if !(grad_noise >= 0.0 && hvp_noise >= 0.0) {
            return Err(PsgdError::InvalidConfig("noise levels must be non-negative".into()));
        }
        let mut rng = SeededRng::seed_from_u64(seed);
        let eigenvalues = log_spectrum(n, kappa);
        let r = random_orthogonal(n, &mut rng);
        let mut h = &r * Matrix::from_diagonal(&eigenvalues) * r.transpose();
        h = (&h + h.transpose()) * 0.5;
        Ok(Self { h, eigenvalues, grad_noise, hvp_noise })
    }

    pub fn hessian(&self) -> &Matrix {
        &self.h
    }

    pub fn eigenvalues(&self) -> &Vector {
        &self.eigenvalues
    }

    fn noise(&self, batch: &Batch, salt: u64) -> Option<Vector> {
        match batch {
            Batch::Sampled(seed) => Some(gaussian(self.h.nrows(), &mut batch_rng(*seed, salt))),
            Batch::Full => None,
        }
    }
}

impl Problem for Quadratic {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.h.nrows()
    }

    fn init(&self, rng: &mut SeededRng) -> Vector {
        gaussian(self.dim(), rng)
    }

    fn loss(&self, theta: &Vector, batch: &Batch) -> f64 {
        let base = 0.5 * theta.dot(&(&self.h * theta));
        match self.noise(batch, 1).filter(|_| self.grad_noise > 0.0) {
            Some(xi) => base + self.grad_noise * xi.dot(theta),
            None => base,
        }
    }

    fn grad(&self, theta: &Vector, batch: &Batch) -> Vector {
        let g = &self.h * theta;
        match self.noise(batch, 1).filter(|_| self.grad_noise > 0.0) {
            Some(xi) => g + xi * self.grad_noise,
            None => g,
        }
    }

    fn hvp(&self, _theta: &Vector, v: &Vector, batch: &Batch) -> Option<Vector> {
        let hv = &self.h * v;
        Some(match self.noise(batch, 2).filter(|_| self.hvp_noise > 0.0) {
            Some(xi) => hv + xi * (self.hvp_noise * v.norm()),
            None => hv,
        })
    }

    fn dense_hessian(&self, _theta: &Vector) -> Option<Matrix> {
        crate::check_oracle_cap(self.dim()).ok()?;
        Some(self.h.clone())
    }

    fn sample_batch(&self, rng: &mut SeededRng) -> Batch {
        if self.grad_noise > 0.0 || self.hvp_noise > 0.0 {
            sampled(rng)
        } else {
            Batch::Full
        }
    }
}
