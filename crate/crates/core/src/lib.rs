//! Preconditioned stochastic gradient descent with preconditioners fitted
//! online on matrix Lie groups.
//!
//! The preconditioner is `P = Q^T Q` where `Q` lives on a Lie group and is
//! moved by multiplicative steps `Q <- (I + mu E) Q` that decrease the fitting
//! criterion `h^T P h + v^T P^{-1} v` over curvature pairs `(v, h)`.
//!
//! * [`mfgroups`]: sparse groups induced by permutation subgroups (diagonal,
//!   X-shape, butterfly, dense).
//! * [`lra`]: the low-rank group `scale * (I + U V^T)`.
//! * [`fitting`]: the criterion, online fitting, and dense oracles.
//! * [`optimizer`]: the PSGD step with momentum, clipping and schedules.
//! * [`testbeds`]: seeded benchmark problems.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curvature;
pub mod error;
pub mod fitting;
pub mod lra;
pub mod mfgroups;
pub mod optimizer;
pub mod precond;
pub mod testbeds;

pub use curvature::{CurvaturePair, PairKind, ProbeDistribution};
pub use error::{PsgdError, Result};
pub use lra::{LraElement, LraScale, LraStep};
pub use mfgroups::{GroupKind, MfGroupElement, PermSubgroup};
pub use optimizer::{OptimizerConfig, OptimizerState, Psgd, Schedule};
pub use precond::{GroupPreconditioner, Preconditioner, UpdateStatus, Updated};
pub use testbeds::{Batch, Problem};

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;
/// The seeded generator used for every random stream.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Dense oracles refuse dimensions above this.
pub const DEFAULT_ORACLE_CAP: usize = 512;

pub(crate) fn check_oracle_cap(n: usize) -> Result<()> {
    check_oracle_cap_with(n, DEFAULT_ORACLE_CAP)
}

pub(crate) fn check_oracle_cap_with(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        return Err(PsgdError::OracleCapExceeded { n, cap });
    }
    Ok(())
}
