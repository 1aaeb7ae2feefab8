//! Chained Rosenbrock, `sum 100 (x_{i+1} - x_i^2)^2 + (1 - x_i)^2`.

use rand_distr::{Distribution, Normal};

use super::{Batch, Problem};
use crate::error::{PsgdError, Result};
use crate::{Matrix, SeededRng, Vector};

#[derive(Debug, Clone)]
pub struct Rosenbrock {
    n: usize,
}

impl Rosenbrock {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(PsgdError::InvalidDimension(format!("rosenbrock needs n >= 2, got {n}")));
        }
        Ok(Self { n })
    }
}

impl Problem for Rosenbrock {
    fn name(&self) -> &str {
        "rosenbrock"
    }

    fn dim(&self) -> usize {
        self.n
    }

    /// The classic `(-1.2, 1, -1.2, ...)` start with a small seeded jitter.
    fn init(&self, rng: &mut SeededRng) -> Vector {
        let jitter = Normal::new(0.0, 0.05).unwrap();
        Vector::from_fn(self.n, |i, _| if i % 2 == 0 { -1.2 } else { 1.0 } + jitter.sample(rng))
    }

    fn loss(&self, x: &Vector, _batch: &Batch) -> f64 {
        (0..self.n - 1).map(|i| 100.0 * (x[i + 1] - x[i] * x[i]).powi(2) + (1.0 - x[i]).powi(2)).sum()
    }

    fn grad(&self, x: &Vector, _batch: &Batch) -> Vector {
        let mut g = Vector::zeros(self.n);
        for i in 0..self.n - 1 {
            let r = x[i + 1] - x[i] * x[i];
            g[i] += -400.0 * x[i] * r - 2.0 * (1.0 - x[i]);
            g[i + 1] += 200.0 * r;
        }
        g
    }

    fn hvp(&self, x: &Vector, v: &Vector, _batch: &Batch) -> Option<Vector> {
        let mut hv = Vector::zeros(self.n);
        for i in 0..self.n - 1 {
            let dii = 1200.0 * x[i] * x[i] - 400.0 * x[i + 1] + 2.0;
            let dij = -400.0 * x[i];
            hv[i] += dii * v[i] + dij * v[i + 1];
            hv[i + 1] += dij * v[i] + 200.0 * v[i + 1];
        }
        Some(hv)
    }

    fn dense_hessian(&self, x: &Vector) -> Option<Matrix> {
        crate::check_oracle_cap(self.n).ok()?;
        let mut h = Matrix::zeros(self.n, self.n);
        for i in 0..self.n - 1 {
            h[(i, i)] += 1200.0 * x[i] * x[i] - 400.0 * x[i + 1] + 2.0;
            h[(i, i + 1)] -= 400.0 * x[i];
            h[(i + 1, i)] -= 400.0 * x[i];
            h[(i + 1, i + 1)] += 200.0;
        }
        Some(h)
    }
}
