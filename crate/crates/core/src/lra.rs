//! Low-rank-approximation preconditioner `Q = scale * (I + U V^T)`.
//!
//! `scale` is a scalar `rho` or a diagonal `diag(d)` (composite form). For a
//! fixed `V` the matrices `I + U V^T` form a group in `U`, and for fixed `U` a
//! group in `V`, so fitting alternates between the scale, `U` and `V`:
//!
//! * scale: `Q <- (1 + mu s) Q` or `Q <- (I + mu diag(e)) Q`
//! * `U`: `Q <- D (I - mu W V^T)(I + U V^T)`, which keeps `V`
//! * `V`: `Q <- Q (I - mu U W^T)`, which keeps `U`
//!
//! Inverses only need an `r x r` solve through the Woodbury identity.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::curvature::CurvaturePair;
use crate::error::{check_dim, PsgdError, Result};
use crate::mfgroups::check_step;
use crate::precond::{GroupPreconditioner, Updated};
use crate::{check_oracle_cap, Matrix, Vector};

const MAX_CORE_CONDITION: f64 = 1e14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LraScale {
    Scalar(f64),
    Diag(Vector),
}

impl LraScale {
    fn mul(&self, x: &Vector) -> Vector {
        match self {
            LraScale::Scalar(r) => x * *r,
            LraScale::Diag(d) => x.component_mul(d),
        }
    }

    fn div(&self, x: &Vector) -> Vector {
        match self {
            LraScale::Scalar(r) => x / *r,
            LraScale::Diag(d) => x.component_div(d),
        }
    }
}

/// Which factor a fitting step moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LraStep {
    Scale,
    U,
    V,
    /// Cycles scale, `U`, `V` across calls. Rank 0 always moves the scale.
    #[default]
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LraRecord", into = "LraRecord")]
pub struct LraElement {
    scale: LraScale,
    u: Matrix,
    v: Matrix,
    cursor: u8,
}

impl LraElement {
    pub fn new(scale: LraScale, u: Matrix, v: Matrix) -> Result<Self> {
        let n = u.nrows();
        if n == 0 {
            return Err(PsgdError::InvalidDimension("LRA dimension 0".into()));
        }
        if v.nrows() != n || v.ncols() != u.ncols() {
            return Err(PsgdError::InvalidDimension(format!(
                "U is {}x{} but V is {}x{}",
                n,
                u.ncols(),
                v.nrows(),
                v.ncols()
            )));
        }
        match &scale {
            LraScale::Scalar(r) if *r == 0.0 || !r.is_finite() => {
                return Err(PsgdError::NotInvertible(format!("scale {r}")))
            }
            LraScale::Diag(d) => {
                check_dim(n, d.len())?;
                if d.iter().any(|x| *x == 0.0 || !x.is_finite()) {
                    return Err(PsgdError::NotInvertible("zero or non-finite diagonal scale".into()));
                }
            }
            _ => {}
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(PsgdError::NonFinite("low-rank factors"));
        }
        let q = Self { scale, u, v, cursor: 0 };
        q.core_inverse()?;
        Ok(q)
    }

    /// `rho * I` with rank-`r` zero factors.
    pub fn scalar_identity(n: usize, r: usize, rho: f64) -> Result<Self> {
        Self::new(LraScale::Scalar(rho), Matrix::zeros(n, r), Matrix::zeros(n, r))
    }

    /// Near-identity start: factors are i.i.d. normal with standard deviation
    /// `(0.1 / sqrt(n r))^{1/2}` so that `U V^T` is small.
    pub fn random_init<R: Rng + ?Sized>(n: usize, r: usize, scale: LraScale, rng: &mut R) -> Result<Self> {
        let sd = if r == 0 { 0.0 } else { (0.1 / ((n * r) as f64).sqrt()).sqrt() };
        let mut draw = |_, _| sd * rng.sample::<f64, _>(StandardNormal);
        let u = Matrix::from_fn(n, r, &mut draw);
        let v = Matrix::from_fn(n, r, &mut draw);
        Self::new(scale, u, v)
    }

    /// Composite `diag(rho 1) (I + U V^T)` with random near-identity factors.
    pub fn composite_init<R: Rng + ?Sized>(n: usize, r: usize, rho: f64, rng: &mut R) -> Result<Self> {
        Self::random_init(n, r, LraScale::Diag(Vector::from_element(n, rho)), rng)
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    /// Multiplies the scale factor, leaving `U` and `V` alone.
    pub fn rescale(&mut self, factor: f64) {
        match &mut self.scale {
            LraScale::Scalar(r) => *r *= factor,
            LraScale::Diag(d) => *d *= factor,
        }
    }

    pub fn scale(&self) -> &LraScale {
        &self.scale
    }

    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    /// `scale * (x + U (V^T x))`.
    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        Ok(self.scale.mul(&(x + &self.u * (self.v.tr_mul(x)))))
    }

    /// `Q^T y = (I + V U^T)(scale * y)`.
    pub fn apply_transpose(&self, y: &Vector) -> Result<Vector> {
        check_dim(self.dim(), y.len())?;
        let z = self.scale.mul(y);
        Ok(&z + &self.v * self.u.tr_mul(&z))
    }

    /// `(I + V^T U)^{-1}`, refused when numerically singular.
    fn core_inverse(&self) -> Result<Matrix> {
        let r = self.rank();
        let core = Matrix::identity(r, r) + cross(&self.v, &self.u);
        let norm = core.amax().max(1.0);
        let inv = core.try_inverse().ok_or_else(|| PsgdError::NotInvertible("I + V^T U is singular".into()))?;
        if !inv.iter().all(|x| x.is_finite()) || norm * inv.amax() > MAX_CORE_CONDITION {
            return Err(PsgdError::NotInvertible("I + V^T U is numerically singular".into()));
        }
        Ok(inv)
    }

    /// `Q^{-1} y = (I - U (I + V^T U)^{-1} V^T)(y / scale)`.
    pub fn apply_inv(&self, y: &Vector) -> Result<Vector> {
        check_dim(self.dim(), y.len())?;
        if self.rank() == 0 {
            return Ok(self.scale.div(y));
        }
        Ok(self.apply_inv_with(&self.core_inverse()?, y))
    }

    /// `Q^{-T} x = (I - V (I + U^T V)^{-1} U^T) x / scale`.
    pub fn apply_inv_t(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        if self.rank() == 0 {
            return Ok(self.scale.div(x));
        }
        Ok(self.apply_inv_t_with(&self.core_inverse()?, x))
    }

    fn apply_inv_with(&self, core_inv: &Matrix, y: &Vector) -> Vector {
        let z = self.scale.div(y);
        let t = core_inv * self.v.tr_mul(&z);
        z - &self.u * t
    }

    fn apply_inv_t_with(&self, core_inv: &Matrix, x: &Vector) -> Vector {
        let t = core_inv.tr_mul(&self.u.tr_mul(x));
        self.scale.div(&(x - &self.v * t))
    }

    /// `Q^T Q g`.
    pub fn precondition(&self, g: &Vector) -> Result<Vector> {
        self.apply_transpose(&self.apply(g)?)
    }

    pub fn to_dense(&self) -> Result<Matrix> {
        check_oracle_cap(self.dim())?;
        let n = self.dim();
        let mut q = Matrix::identity(n, n) + &self.u * self.v.transpose();
        match &self.scale {
            LraScale::Scalar(r) => q *= *r,
            LraScale::Diag(d) => {
                for (i, mut row) in q.row_iter_mut().enumerate() {
                    row *= d[i];
                }
            }
        }
        Ok(q)
    }

    fn next_factor(&self, which: LraStep) -> (Factor, u8) {
        let cycle = if self.rank() == 0 { 1 } else { 3 };
        match which {
            LraStep::Scale => (Factor::Scale, self.cursor),
            LraStep::U => (Factor::U, self.cursor),
            LraStep::V => (Factor::V, self.cursor),
            LraStep::RoundRobin => {
                let f = match self.cursor % cycle {
                    0 => Factor::Scale,
                    1 => Factor::U,
                    _ => Factor::V,
                };
                (f, (self.cursor + 1) % cycle)
            }
        }
    }

    /// Descent direction of the fitting criterion for one factor.
    pub fn descent_direction(&self, pair: &CurvaturePair, factor: Factor) -> Result<LraDirection> {
        self.direction_and_criterion(pair, factor).map(|(dir, _)| dir)
    }

    /// The direction together with the criterion `|a|^2 + |b|^2` at `self`,
    /// sharing one `r x r` inverse.
    fn direction_and_criterion(&self, pair: &CurvaturePair, factor: Factor) -> Result<(LraDirection, f64)> {
        check_dim(self.dim(), pair.dim())?;
        let core_inv = if self.rank() > 0 { Some(self.core_inverse()?) } else { None };
        let a = self.apply(pair.h())?;
        let b = match &core_inv {
            Some(inv) => self.apply_inv_t_with(inv, pair.v()),
            None => self.scale.div(pair.v()),
        };
        let criterion = a.norm_squared() + b.norm_squared();
        let dir = match (factor, &self.scale) {
            (Factor::Scale, LraScale::Scalar(_)) => {
                let (aa, bb) = (a.norm_squared(), b.norm_squared());
                let grad = 2.0 * (aa - bb);
                let s = if aa + bb > 0.0 { -(aa - bb) / (aa + bb) } else { 0.0 };
                LraDirection::Scalar { s, grad }
            }
            (Factor::Scale, LraScale::Diag(_)) => {
                let grad = 2.0 * (a.component_mul(&a) - b.component_mul(&b));
                LraDirection::Diag { e: -&grad / 2.0, grad }
            }
            (Factor::U, _) => {
                // Q' = D (I + s X V^T) B with B = I + U V^T:
                // dc/dX = 2 [(D a)(V^T B h)^T - (B^{-T} v)(V^T D^{-1} b)^T]
                let da = self.scale.mul(&a);
                let a_in = self.scale.div(&a);
                let b_in = self.scale.mul(&b);
                let db = self.scale.div(&b);
                let half = &da * self.v.tr_mul(&a_in).transpose() - &b_in * self.v.tr_mul(&db).transpose();
                let w = gram_solve(&half, &self.v);
                LraDirection::U { w, grad: half * 2.0 }
            }
            (Factor::V, _) => {
                // Q' = Q (I + s U X^T): dc/dX = 2 [h (U^T P h)^T - (P^{-1} v)(U^T v)^T]
                let ph = self.apply_transpose(&a)?;
                let pinv_v = match &core_inv {
                    Some(inv) => self.apply_inv_with(inv, &b),
                    None => self.scale.div(&b),
                };
                let half = pair.h() * self.u.tr_mul(&ph).transpose() - pinv_v * self.u.tr_mul(pair.v()).transpose();
                let w = gram_solve(&half, &self.u);
                LraDirection::V { w, grad: half * 2.0 }
            }
        };
        Ok((dir, criterion))
    }

    /// Moves along `dir` with an explicit (unnormalized) step.
    pub fn step_along(&self, dir: &LraDirection, step: f64) -> Result<Self> {
        let mut next = self.clone();
        match dir {
            LraDirection::Scalar { s, .. } => match &mut next.scale {
                LraScale::Scalar(r) => *r *= 1.0 + step * s,
                LraScale::Diag(_) => return Err(PsgdError::InvalidConfig("scalar direction on diagonal scale".into())),
            },
            LraDirection::Diag { e, .. } => match &mut next.scale {
                LraScale::Diag(d) => d.component_mul_assign(&e.map(|x| 1.0 + step * x)),
                LraScale::Scalar(_) => {
                    return Err(PsgdError::InvalidConfig("diagonal direction on scalar scale".into()))
                }
            },
            LraDirection::U { w, .. } => {
                let r = self.rank();
                let carry = Matrix::identity(r, r) + cross(&self.v, &self.u);
                next.u -= w * carry * step;
            }
            LraDirection::V { w, .. } => {
                let r = self.rank();
                let carry = Matrix::identity(r, r) + cross(&self.u, &self.v);
                next.v -= w * carry * step;
            }
        }
        Ok(next)
    }

    /// One normalized fitting step on the factor chosen by `which`.
    pub fn update(&self, pair: &CurvaturePair, mu: f64, which: LraStep) -> Result<Updated<Self>> {
        check_step(mu)?;
        let (factor, cursor) = self.next_factor(which);
        if self.rank() == 0 && factor != Factor::Scale {
            let mut advanced = self.clone();
            advanced.cursor = cursor;
            return Ok(Updated::applied(advanced));
        }
        let (dir, criterion) = match self.direction_and_criterion(pair, factor) {
            Ok(d) => d,
            Err(PsgdError::NotInvertible(why)) => return Ok(Updated::rejected(self.clone(), why)),
            Err(e) => return Err(e),
        };
        let step = match &dir {
            LraDirection::Scalar { .. } => mu,
            LraDirection::Diag { e, .. } => mu / (e.amax() + f64::MIN_POSITIVE),
            LraDirection::U { w, .. } => mu / (w.norm() * self.v.norm() + f64::MIN_POSITIVE),
            LraDirection::V { w, .. } => mu / (w.norm() * self.u.norm() + f64::MIN_POSITIVE),
        };
        let mut next = self.step_along(&dir, step)?;
        next.cursor = cursor;
        if let Err(e) = next.validate() {
            return Ok(Updated::rejected(self.clone(), e.to_string()));
        }
        Ok(Updated::applied(next).with_criterion(Some(criterion)))
    }

    fn validate(&self) -> Result<()> {
        let finite = match &self.scale {
            LraScale::Scalar(r) => *r != 0.0 && r.is_finite(),
            LraScale::Diag(d) => d.iter().all(|x| *x != 0.0 && x.is_finite()),
        };
        if !finite || self.u.iter().chain(self.v.iter()).any(|x| !x.is_finite()) {
            return Err(PsgdError::NonFinite("LRA factors after update"));
        }
        self.core_inverse().map(|_| ())
    }
}

/// `half (G^T G + tau I)^{-1}` with `tau = 1e-12 trace(G^T G) / r`; zero when `G = 0`.
fn gram_solve(half: &Matrix, g: &Matrix) -> Matrix {
    let r = g.ncols();
    let gram = cross(g, g);
    let tau = 1e-12 * gram.trace() / r as f64;
    if !(tau > 0.0) {
        return Matrix::zeros(half.nrows(), r);
    }
    let reg = gram + Matrix::identity(r, r) * tau;
    match reg.cholesky() {
        Some(ch) => half * ch.inverse(),
        None => Matrix::zeros(half.nrows(), r),
    }
}

/// `a^T b` accumulated over row blocks, so tall factors are streamed once
/// instead of once per output column.
fn cross(a: &Matrix, b: &Matrix) -> Matrix {
    const BLOCK: usize = 256;
    let n = a.nrows();
    let mut out = Matrix::zeros(a.ncols(), b.ncols());
    let mut start = 0;
    while start < n {
        let len = BLOCK.min(n - start);
        out.gemm_tr(1.0, &a.rows(start, len), &b.rows(start, len), 1.0);
        start += len;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    Scale,
    U,
    V,
}

/// A tangent move of one factor together with the criterion gradient for
/// that factor, so the analytic directional derivative is available.
#[derive(Debug, Clone, PartialEq)]
pub enum LraDirection {
    /// `rho <- rho (1 + step s)`
    Scalar { s: f64, grad: f64 },
    /// `d <- d * (1 + step e)`
    Diag { e: Vector, grad: Vector },
    /// `U <- U - step W (I + V^T U)`
    U { w: Matrix, grad: Matrix },
    /// `V <- V - step W (I + U^T V)`
    V { w: Matrix, grad: Matrix },
}

impl LraDirection {
    /// Derivative of the criterion with respect to the step at zero.
    pub fn directional_derivative(&self) -> f64 {
        match self {
            LraDirection::Scalar { s, grad } => grad * s,
            LraDirection::Diag { e, grad } => e.dot(grad),
            LraDirection::U { w, grad } | LraDirection::V { w, grad } => -w.dot(grad),
        }
    }
}

impl GroupPreconditioner for LraElement {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn apply(&self, x: &Vector) -> Result<Vector> {
        self.apply(x)
    }

    fn apply_inv_t(&self, x: &Vector) -> Result<Vector> {
        self.apply_inv_t(x)
    }

    fn precondition(&self, g: &Vector) -> Result<Vector> {
        self.precondition(g)
    }

    fn to_dense(&self) -> Result<Matrix> {
        self.to_dense()
    }

    fn fit_step(&self, pair: &CurvaturePair, mu: f64) -> Updated<Self> {
        self.update(pair, mu, LraStep::RoundRobin).unwrap_or_else(|e| Updated::rejected(self.clone(), e.to_string()))
    }
}

/// A `2 x 2`, rank-1, `rho = 1` element whose `P` has one eigenvalue at
/// least `target_large` and one at most `target_small`.
///
/// Uses the shear `I + c e_1 e_2^T`, whose singular values are `s` and `1/s`
/// with `c = s - 1/s`.
pub fn lra_spectrum_witness(target_large: f64, target_small: f64) -> Result<LraElement> {
    if !(target_large > 1.0 && target_large.is_finite()) || !(target_small > 0.0 && target_small < 1.0) {
        return Err(PsgdError::InvalidConfig(format!(
            "witness targets must satisfy large > 1 and 0 < small < 1, got {target_large}, {target_small}"
        )));
    }
    // a little headroom above the targets so rounding cannot land on the wrong side
    let sigma = (target_large.max(1.0 / target_small) * (1.0 + 1e-9)).sqrt();
    let c = sigma - 1.0 / sigma;
    let u = Matrix::from_column_slice(2, 1, &[c, 0.0]);
    let v = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
    LraElement::new(LraScale::Scalar(1.0), u, v)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LraRecord {
    mode: String,
    n: usize,
    r: usize,
    scale: Vec<f64>,
    /// column-major `n x r`
    u: Vec<f64>,
    v: Vec<f64>,
    #[serde(default)]
    cursor: u8,
}

impl From<LraElement> for LraRecord {
    fn from(q: LraElement) -> Self {
        let (mode, scale) = match &q.scale {
            LraScale::Scalar(r) => ("scalar", vec![*r]),
            LraScale::Diag(d) => ("diag", d.iter().copied().collect()),
        };
        Self {
            mode: mode.into(),
            n: q.dim(),
            r: q.rank(),
            scale,
            u: q.u.as_slice().to_vec(),
            v: q.v.as_slice().to_vec(),
            cursor: q.cursor,
        }
    }
}

impl TryFrom<LraRecord> for LraElement {
    type Error = PsgdError;

    fn try_from(rec: LraRecord) -> Result<Self> {
        let scale = match (rec.mode.as_str(), rec.scale.as_slice()) {
            ("scalar", [r]) => LraScale::Scalar(*r),
            ("diag", d) if d.len() == rec.n => LraScale::Diag(Vector::from_column_slice(d)),
            (mode, _) => return Err(PsgdError::Format(format!("bad LRA scale record (mode {mode})"))),
        };
        if rec.u.len() != rec.n * rec.r || rec.v.len() != rec.n * rec.r {
            return Err(PsgdError::Format("factor length does not match n * r".into()));
        }
        let u = Matrix::from_column_slice(rec.n, rec.r, &rec.u);
        let v = Matrix::from_column_slice(rec.n, rec.r, &rec.v);
        let mut q = Self::new(scale, u, v)?;
        q.cursor = rec.cursor % 3;
        Ok(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::PairKind;
    use crate::fitting::criterion_hat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vec(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn e1_element() -> LraElement {
        let e1 = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        LraElement::new(LraScale::Scalar(1.0), e1.clone(), e1).unwrap()
    }

    fn random(n: usize, r: usize, diag: bool, seed: u64) -> LraElement {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = if diag {
            LraScale::Diag(Vector::from_fn(n, |_, _| rng.random_range(0.5..2.0)))
        } else {
            LraScale::Scalar(rng.random_range(0.5..2.0))
        };
        let u = Matrix::from_fn(n, r, |_, _| rng.random_range(-0.5..0.5));
        let v = Matrix::from_fn(n, r, |_, _| rng.random_range(-0.5..0.5));
        LraElement::new(scale, u, v).unwrap()
    }

    #[test]
    fn apply_examples() {
        let d = LraElement::new(LraScale::Diag(vec(&[2.0, 3.0])), Matrix::zeros(2, 0), Matrix::zeros(2, 0)).unwrap();
        assert_eq!(d.apply(&vec(&[1.0, 1.0])).unwrap(), vec(&[2.0, 3.0]));
        assert_eq!(e1_element().apply(&vec(&[1.0, 1.0])).unwrap(), vec(&[2.0, 1.0]));
        let neg = LraElement::scalar_identity(3, 1, -1.0).unwrap();
        let x = vec(&[1.0, -2.0, 0.5]);
        assert_eq!(neg.apply(&x).unwrap(), -&x);
        assert!(neg.apply(&vec(&[1.0])).is_err());
    }

    #[test]
    fn inverse_transpose_examples() {
        assert_eq!(e1_element().apply_inv_t(&vec(&[1.0, 0.0])).unwrap(), vec(&[0.5, 0.0]));
        let d = LraElement::new(LraScale::Diag(vec(&[2.0, 4.0])), Matrix::zeros(2, 2), Matrix::zeros(2, 2)).unwrap();
        assert_eq!(d.apply_inv_t(&vec(&[1.0, 1.0])).unwrap(), vec(&[0.5, 0.25]));

        for diag in [false, true] {
            let q = random(32, 4, diag, 3);
            let dense_inv_t = q.to_dense().unwrap().try_inverse().unwrap().transpose();
            let x = Vector::from_fn(32, |i, _| (i as f64).sin());
            assert!((q.apply_inv_t(&x).unwrap() - &dense_inv_t * &x).amax() < 1e-10);
            let dense_inv = dense_inv_t.transpose();
            assert!((q.apply_inv(&x).unwrap() - dense_inv * &x).amax() < 1e-10);
        }
    }

    #[test]
    fn precondition_and_dense() {
        let id = LraElement::scalar_identity(3, 2, 1.0).unwrap();
        let g = vec(&[1.0, 2.0, 3.0]);
        assert_eq!(id.precondition(&g).unwrap(), g);
        let d = LraElement::new(LraScale::Diag(vec(&[0.5, 1.0])), Matrix::zeros(2, 0), Matrix::zeros(2, 0)).unwrap();
        assert_eq!(d.precondition(&vec(&[4.0, 1.0])).unwrap(), vec(&[1.0, 1.0]));
        assert_eq!(d.to_dense().unwrap(), Matrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0]));
        assert_eq!(e1_element().to_dense().unwrap(), Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]));

        let q = random(32, 4, true, 8);
        let m = q.to_dense().unwrap();
        let x = Vector::from_fn(32, |i, _| (i as f64 * 0.7).cos());
        assert!((q.apply(&x).unwrap() - &m * &x).amax() < 1e-12);
        assert!((q.precondition(&x).unwrap() - m.transpose() * &m * &x).amax() < 1e-10);
    }

    #[test]
    fn singular_core_rejected() {
        let u = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let v = Matrix::from_column_slice(2, 1, &[-1.0, 0.0]);
        assert!(matches!(LraElement::new(LraScale::Scalar(1.0), u, v), Err(PsgdError::NotInvertible(_))));
        assert!(LraElement::scalar_identity(2, 0, 0.0).is_err());
    }

    #[test]
    fn scalar_update_example() {
        let q = LraElement::scalar_identity(1, 0, 1.0).unwrap();
        let pair = CurvaturePair::new(vec(&[1.0]), vec(&[2.0]), PairKind::ExactHvp).unwrap();
        let out = q.update(&pair, 0.1, LraStep::Scale).unwrap();
        match out.element.scale() {
            LraScale::Scalar(r) => assert!((r - 0.94).abs() < 1e-15),
            _ => unreachable!(),
        }
    }

    #[test]
    fn balanced_pair_is_a_fixed_point() {
        // Q = I and h = v gives a = b, so no factor moves.
        let q = random(6, 2, false, 1);
        let q = LraElement::new(LraScale::Scalar(1.0), q.u().clone() * 0.0, q.v().clone()).unwrap();
        let v = vec(&[0.3, -1.0, 0.2, 0.8, -0.4, 1.1]);
        let pair = CurvaturePair::new(v.clone(), v, PairKind::ExactHvp).unwrap();
        for which in [LraStep::Scale, LraStep::U, LraStep::V] {
            let out = q.update(&pair, 0.5, which).unwrap();
            assert_eq!(out.element.scale(), q.scale());
            assert_eq!(out.element.u(), q.u());
            assert_eq!(out.element.v(), q.v());
        }
    }

    #[test]
    fn updates_hold_the_other_factor() {
        let q = random(8, 2, true, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = Vector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let h = Vector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let pair = CurvaturePair::new(v, h, PairKind::ExactHvp).unwrap();
        let up = q.update(&pair, 0.1, LraStep::U).unwrap().element;
        assert_eq!(up.v(), q.v());
        assert_ne!(up.u(), q.u());
        let vp = q.update(&pair, 0.1, LraStep::V).unwrap().element;
        assert_eq!(vp.u(), q.u());
        assert_ne!(vp.v(), q.v());
    }

    #[test]
    fn round_robin_cycles() {
        let q = random(5, 1, true, 6);
        let pair =
            CurvaturePair::new(vec(&[1.0, 0.0, 2.0, 0.0, 1.0]), vec(&[0.5, 1.0, 0.0, 3.0, 0.0]), PairKind::ExactHvp)
                .unwrap();
        let s1 = q.update(&pair, 0.1, LraStep::RoundRobin).unwrap().element;
        assert_eq!((s1.u(), s1.v()), (q.u(), q.v()));
        let s2 = s1.update(&pair, 0.1, LraStep::RoundRobin).unwrap().element;
        assert_eq!((s2.scale(), s2.v()), (s1.scale(), s1.v()));
        let s3 = s2.update(&pair, 0.1, LraStep::RoundRobin).unwrap().element;
        assert_eq!((s3.scale(), s3.u()), (s2.scale(), s2.u()));
        let s4 = s3.update(&pair, 0.1, LraStep::RoundRobin).unwrap().element;
        assert_ne!(s4.scale(), s3.scale());
    }

    #[test]
    fn small_steps_decrease_criterion() {
        for seed in 0..5 {
            let q = random(2, 1, false, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let v = Vector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let h = Vector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let pair = CurvaturePair::new(v, h, PairKind::ExactHvp).unwrap();
            let c0 = criterion_hat(&q, &pair).unwrap();
            for which in [LraStep::Scale, LraStep::U, LraStep::V] {
                let c1 = criterion_hat(&q.update(&pair, 1e-3, which).unwrap().element, &pair).unwrap();
                assert!(c1 < c0, "seed {seed} {which:?}: {c1} >= {c0}");
            }
        }
    }

    #[test]
    fn witness_spectrum() {
        let q = lra_spectrum_witness(100.0, 0.01).unwrap();
        let m = q.to_dense().unwrap();
        let eig = (m.transpose() * m).symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        assert!(hi >= 100.0 && lo <= 0.01, "{lo} {hi}");
        assert!(lra_spectrum_witness(0.5, 0.1).is_err());
    }

    #[test]
    fn json_round_trip() {
        let q = random(4, 2, true, 12);
        let s = serde_json::to_string(&q).unwrap();
        let back: LraElement = serde_json::from_str(&s).unwrap();
        assert_eq!(back, q);
        assert!(serde_json::from_str::<LraElement>(r#"{"mode":"diag","n":2,"r":0,"scale":[1],"u":[],"v":[]}"#).is_err());
    }
}
