//! Common interface over the preconditioner groups.

use serde::{Deserialize, Serialize};

use crate::curvature::CurvaturePair;
use crate::error::Result;
use crate::lra::LraElement;
use crate::mfgroups::MfGroupElement;
use crate::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub enum UpdateStatus {
    Applied,
    /// Singular intermediate; the element was left unchanged.
    Rejected(String),
}

#[derive(Debug, Clone)]
pub struct Updated<T> {
    pub element: T,
    pub status: UpdateStatus,
    /// Criterion of the driving pair before the step, when it was computed.
    pub criterion: Option<f64>,
}

impl<T> Updated<T> {
    pub fn applied(element: T) -> Self {
        Self { element, status: UpdateStatus::Applied, criterion: None }
    }

    pub fn rejected(element: T, reason: impl Into<String>) -> Self {
        let reason = reason.into();
        log::warn!("preconditioner update rejected: {reason}");
        Self { element, status: UpdateStatus::Rejected(reason), criterion: None }
    }

    pub fn with_criterion(mut self, criterion: Option<f64>) -> Self {
        self.criterion = criterion;
        self
    }

    pub fn is_applied(&self) -> bool {
        self.status == UpdateStatus::Applied
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Updated<U> {
        Updated { element: f(self.element), status: self.status, criterion: self.criterion }
    }
}

/// A preconditioner `P = Q^T Q` with `Q` on a matrix Lie group.
pub trait GroupPreconditioner: Clone {
    fn dim(&self) -> usize;

    /// `Q x`
    fn apply(&self, x: &Vector) -> Result<Vector>;

    /// `Q^{-T} x`
    fn apply_inv_t(&self, x: &Vector) -> Result<Vector>;

    /// `Q^T Q g`
    fn precondition(&self, g: &Vector) -> Result<Vector>;

    /// Dense `Q`, only below the oracle cap.
    fn to_dense(&self) -> Result<Matrix>;

    /// One descent step on the fitting criterion with normalized step `mu`.
    fn fit_step(&self, pair: &CurvaturePair, mu: f64) -> Updated<Self>;
}

/// Any of the supported preconditioners, or none at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Preconditioner {
    /// `P = I`; fitting steps are no-ops.
    Identity {
        n: usize,
    },
    Mf(MfGroupElement),
    Lra(LraElement),
}

impl Preconditioner {
    pub fn is_identity(&self) -> bool {
        matches!(self, Preconditioner::Identity { .. })
    }

    /// `Q <- factor * Q`; a no-op for the identity.
    pub fn rescale(&mut self, factor: f64) {
        match self {
            Preconditioner::Identity { .. } => {}
            Preconditioner::Mf(q) => q.rescale(factor),
            Preconditioner::Lra(q) => q.rescale(factor),
        }
    }
}

impl GroupPreconditioner for Preconditioner {
    fn dim(&self) -> usize {
        match self {
            Preconditioner::Identity { n } => *n,
            Preconditioner::Mf(q) => q.dim(),
            Preconditioner::Lra(q) => q.dim(),
        }
    }

    fn apply(&self, x: &Vector) -> Result<Vector> {
        match self {
            Preconditioner::Identity { n } => {
                crate::error::check_dim(*n, x.len())?;
                Ok(x.clone())
            }
            Preconditioner::Mf(q) => q.apply(x),
            Preconditioner::Lra(q) => q.apply(x),
        }
    }

    fn apply_inv_t(&self, x: &Vector) -> Result<Vector> {
        match self {
            Preconditioner::Identity { .. } => self.apply(x),
            Preconditioner::Mf(q) => q.apply_inv_t(x),
            Preconditioner::Lra(q) => q.apply_inv_t(x),
        }
    }

    fn precondition(&self, g: &Vector) -> Result<Vector> {
        match self {
            Preconditioner::Identity { .. } => self.apply(g),
            Preconditioner::Mf(q) => q.precondition(g),
            Preconditioner::Lra(q) => q.precondition(g),
        }
    }

    fn to_dense(&self) -> Result<Matrix> {
        match self {
            Preconditioner::Identity { n } => {
                crate::check_oracle_cap(*n)?;
                Ok(Matrix::identity(*n, *n))
            }
            Preconditioner::Mf(q) => q.to_dense(),
            Preconditioner::Lra(q) => q.to_dense(),
        }
    }

    fn fit_step(&self, pair: &CurvaturePair, mu: f64) -> Updated<Self> {
        match self {
            Preconditioner::Identity { .. } => Updated::applied(self.clone()),
            Preconditioner::Mf(q) => q.fit_step(pair, mu).map(Preconditioner::Mf),
            Preconditioner::Lra(q) => q.fit_step(pair, mu).map(Preconditioner::Lra),
        }
    }
}
