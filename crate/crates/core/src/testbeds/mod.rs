//! Seeded benchmark problems.

pub mod logreg;
pub mod mnist;
pub mod quadratic;
pub mod rosenbrock;
pub mod xor;

use crate::{Matrix, SeededRng, Vector};

/// Which data a loss or gradient evaluation sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Batch {
    /// The whole dataset, or the noise-free objective.
    Full,
    /// A minibatch (or noise draw) fully determined by this seed.
    Sampled(u64),
}

pub trait Problem {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Initial parameters.
    fn init(&self, rng: &mut SeededRng) -> Vector;

    fn loss(&self, theta: &Vector, batch: &Batch) -> f64;

    fn grad(&self, theta: &Vector, batch: &Batch) -> Vector;

    fn loss_grad(&self, theta: &Vector, batch: &Batch) -> (f64, Vector) {
        (self.loss(theta, batch), self.grad(theta, batch))
    }

    /// Exact Hessian-vector product when available.
    fn hvp(&self, _theta: &Vector, _v: &Vector, _batch: &Batch) -> Option<Vector> {
        None
    }

    /// Dense Hessian of the full objective, for small instances.
    fn dense_hessian(&self, _theta: &Vector) -> Option<Matrix> {
        None
    }

    fn sample_batch(&self, _rng: &mut SeededRng) -> Batch {
        Batch::Full
    }

    /// Whether a run counts as solved given a minibatch loss.
    fn is_solved(&self, _loss: f64) -> bool {
        false
    }
}

pub(crate) fn sampled(rng: &mut SeededRng) -> Batch {
    use rand::Rng;
    Batch::Sampled(rng.random())
}

pub(crate) fn batch_rng(seed: u64, salt: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
