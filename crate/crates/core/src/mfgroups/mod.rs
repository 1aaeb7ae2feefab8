//! Matrix-free preconditioner groups built from permutation subgroups.
//!
//! For a subgroup `K = {sigma_1, ..., sigma_m}` of `S_n`, the maps
//! `T(x) = sum_i a_i * sigma_i(x)` (elementwise products) that are bijective
//! form a subgroup of `GL(n)`. The trivial group gives diagonal matrices, the
//! flip gives X-shape matrices, the half shift gives butterfly matrices and
//! all circular shifts give every dense matrix.
//!
//! Elements are never expanded into dense matrices except by
//! [`MfGroupElement::to_dense`], which exists for oracle checks.

mod perm;

pub use perm::{GroupKind, PermSubgroup, MAX_DEFAULT_ORDER};

use serde::{Deserialize, Serialize};

use crate::curvature::CurvaturePair;
use crate::error::{check_dim, PsgdError, Result};
use crate::precond::{GroupPreconditioner, Updated};
use crate::{check_oracle_cap_with, Matrix, Vector, DEFAULT_ORACLE_CAP};

/// Blocks whose infinity-norm condition estimate exceeds this are treated as singular.
const MAX_BLOCK_CONDITION: f64 = 1e15;

impl PermSubgroup {
    /// The standard group of a given kind. `Custom` groups must be built explicitly.
    pub fn of_kind(kind: GroupKind, n: usize) -> Result<Self> {
        match kind {
            GroupKind::Trivial => Self::trivial(n),
            GroupKind::Flip => Self::flip(n),
            GroupKind::HalfShift => Self::half_shift(n),
            GroupKind::AllShifts => Self::all_shifts(n),
            GroupKind::Custom => Err(PsgdError::InvalidGroup("custom groups need explicit permutations".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MfRecord", into = "MfRecord")]
pub struct MfGroupElement {
    group: PermSubgroup,
    coeffs: Vec<Vector>,
}

impl MfGroupElement {
    /// Builds an element, checking dimensions and invertibility.
    pub fn new(group: PermSubgroup, coeffs: Vec<Vector>) -> Result<Self> {
        if coeffs.len() != group.order() {
            return Err(PsgdError::InvalidGroup(format!(
                "{} coefficient vectors for a group of order {}",
                coeffs.len(),
                group.order()
            )));
        }
        for c in &coeffs {
            check_dim(group.dim(), c.len())?;
            if c.iter().any(|x| !x.is_finite()) {
                return Err(PsgdError::NonFinite("group coefficients"));
            }
        }
        let mut t = Self { group, coeffs };
        t.canonicalize();
        t.inverse()?;
        Ok(t)
    }

    pub fn identity(group: PermSubgroup) -> Self {
        Self::scaled_identity(group, 1.0)
    }

    /// `rho * I`, so that `P` starts at `rho^2 I`.
    pub fn scaled_identity(group: PermSubgroup, rho: f64) -> Self {
        let n = group.dim();
        let mut coeffs = vec![Vector::zeros(n); group.order()];
        coeffs[group.identity_index()].fill(rho);
        Self { group, coeffs }
    }

    pub fn rescale(&mut self, factor: f64) {
        for c in &mut self.coeffs {
            *c *= factor;
        }
    }

    pub fn group(&self) -> &PermSubgroup {
        &self.group
    }

    pub fn coeffs(&self) -> &[Vector] {
        &self.coeffs
    }

    pub fn dim(&self) -> usize {
        self.group.dim()
    }

    /// `sum_i a_i * sigma_i(x)`.
    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        let mut out = Vector::zeros(self.dim());
        for (i, a) in self.coeffs.iter().enumerate() {
            for (k, &s) in self.group.perm(i).iter().enumerate() {
                out[k] += a[k] * x[s];
            }
        }
        Ok(out)
    }

    /// Transpose action `sum_i sigma_i^{-1}(a_i * y)`.
    pub fn apply_transpose(&self, y: &Vector) -> Result<Vector> {
        check_dim(self.dim(), y.len())?;
        let mut out = Vector::zeros(self.dim());
        for (i, a) in self.coeffs.iter().enumerate() {
            for (k, &s) in self.group.perm(i).iter().enumerate() {
                out[s] += a[k] * y[k];
            }
        }
        Ok(out)
    }

    /// `self o rhs`, i.e. `rhs` is applied first.
    pub fn compose(&self, rhs: &Self) -> Result<Self> {
        if self.group != rhs.group {
            return Err(PsgdError::GroupMismatch(format!("{:?} vs {:?}", self.group, rhs.group)));
        }
        Ok(self.compose_unchecked(rhs))
    }

    fn compose_unchecked(&self, rhs: &Self) -> Self {
        let g = &self.group;
        let (m, n) = (g.order(), g.dim());
        let mut coeffs = vec![Vector::zeros(n); m];
        for (i, a) in self.coeffs.iter().enumerate() {
            let p = g.perm(i);
            for (j, b) in rhs.coeffs.iter().enumerate() {
                let b = b.as_slice();
                let c = coeffs[g.product(i, j)].as_mut_slice();
                for ((c, &a), &s) in c.iter_mut().zip(a.as_slice()).zip(p) {
                    *c += a * b[s];
                }
            }
        }
        let mut out = Self { group: g.clone(), coeffs };
        out.canonicalize();
        out
    }

    // Move weight on positions shared by several permutations onto the owner,
    // so each matrix entry has one coefficient.
    fn canonicalize(&mut self) {
        if self.group.is_free() {
            return;
        }
        let g = self.group.clone();
        for i in 0..g.order() {
            for k in 0..g.dim() {
                if g.owns(i, k) || self.coeffs[i][k] == 0.0 {
                    continue;
                }
                let target = g.perm(i)[k];
                let owner = (0..i).find(|&j| g.perm(j)[k] == target).expect("owner precedes");
                let w = std::mem::take(&mut self.coeffs[i][k]);
                self.coeffs[owner][k] += w;
            }
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        if self.group.is_involution_pair() {
            if let Some(inv) = self.involution_inverse() {
                return Ok(inv);
            }
        }
        self.orbit_inverse()
    }

    // Closed form for K = {e, s} with s an involution:
    // T^{-1}(a, b) = T(s(a) / c, -b / c), c = a * s(a) - b * s(b).
    fn involution_inverse(&self) -> Option<Self> {
        let g = &self.group;
        let (id, gen) = (g.identity_index(), 1 - g.identity_index());
        let (a, b) = (&self.coeffs[id], &self.coeffs[gen]);
        let s = g.perm(gen);
        let n = g.dim();
        let mut ai = Vector::zeros(n);
        let mut bi = Vector::zeros(n);
        for k in 0..n {
            let c = a[k] * a[s[k]] - b[k] * b[s[k]];
            let scale = a[k].abs().max(b[k].abs()) * a[s[k]].abs().max(b[s[k]].abs());
            if c == 0.0 || c.abs() < scale / MAX_BLOCK_CONDITION {
                return None;
            }
            ai[k] = a[s[k]] / c;
            bi[k] = -b[k] / c;
        }
        let mut coeffs = vec![Vector::zeros(0); 2];
        coeffs[id] = ai;
        coeffs[gen] = bi;
        let mut out = Self { group: g.clone(), coeffs };
        out.canonicalize();
        Some(out)
    }

    // The action is block diagonal over coordinate orbits; invert each block.
    fn orbit_inverse(&self) -> Result<Self> {
        let g = &self.group;
        let (m, n) = (g.order(), g.dim());
        let mut local = vec![0usize; n];
        let mut coeffs = vec![Vector::zeros(n); m];
        for orbit in g.orbits() {
            for (r, &k) in orbit.iter().enumerate() {
                local[k] = r;
            }
            let s = orbit.len();
            let mut block = Matrix::zeros(s, s);
            for (r, &k) in orbit.iter().enumerate() {
                for i in 0..m {
                    block[(r, local[g.perm(i)[k]])] += self.coeffs[i][k];
                }
            }
            let norm = inf_norm(&block);
            let inv = block
                .try_inverse()
                .filter(|inv| inv.iter().all(|x| x.is_finite()) && norm * inf_norm(inv) < MAX_BLOCK_CONDITION)
                .ok_or_else(|| PsgdError::NotInvertible(format!("singular block on orbit starting at {}", orbit[0])))?;
            for (r, &k) in orbit.iter().enumerate() {
                for i in 0..m {
                    if g.owns(i, k) {
                        coeffs[i][k] = inv[(r, local[g.perm(i)[k]])];
                    }
                }
            }
        }
        Ok(Self { group: g.clone(), coeffs })
    }

    pub fn to_dense(&self) -> Result<Matrix> {
        self.to_dense_capped(DEFAULT_ORACLE_CAP)
    }

    pub fn to_dense_capped(&self, cap: usize) -> Result<Matrix> {
        check_oracle_cap_with(self.dim(), cap)?;
        let n = self.dim();
        let mut m = Matrix::zeros(n, n);
        for (i, a) in self.coeffs.iter().enumerate() {
            for (k, &s) in self.group.perm(i).iter().enumerate() {
                m[(k, s)] += a[k];
            }
        }
        Ok(m)
    }

    /// `T^T T g`.
    pub fn precondition(&self, g: &Vector) -> Result<Vector> {
        self.apply_transpose(&self.apply(g)?)
    }

    /// `T^{-T} x`.
    pub fn apply_inv_t(&self, x: &Vector) -> Result<Vector> {
        self.inverse()?.apply_transpose(x)
    }

    /// Steepest-descent direction of the fitting criterion for one pair.
    pub fn descent_direction(&self, pair: &CurvaturePair) -> Result<MfDirection> {
        check_dim(self.dim(), pair.dim())?;
        let a = self.apply(pair.h())?;
        let b = self.inverse()?.apply_transpose(pair.v())?;
        Ok(MfDirection::from_responses(&self.group, a, b))
    }

    /// Left multiplication by `I + step * E`.
    pub fn step_along(&self, dir: &MfDirection, step: f64) -> Result<Self> {
        if dir.e.len() != self.group.order() {
            return Err(PsgdError::GroupMismatch("direction from another group".into()));
        }
        let mut coeffs: Vec<Vector> = dir.e.iter().map(|e| e * step).collect();
        coeffs[self.group.identity_index()].add_scalar_mut(1.0);
        let mover = Self { group: self.group.clone(), coeffs };
        Ok(mover.compose_unchecked(self))
    }

    /// One normalized fitting step: `T <- (I + mu E / |E|) T`.
    pub fn update(&self, pair: &CurvaturePair, mu: f64) -> Result<Updated<Self>> {
        check_step(mu)?;
        let dir = match self.descent_direction(pair) {
            Ok(d) => d,
            Err(PsgdError::NotInvertible(why)) => return Ok(Updated::rejected(self.clone(), why)),
            Err(e) => return Err(e),
        };
        let criterion = Some(dir.a.norm_squared() + dir.b.norm_squared());
        let bound = dir.norm_bound();
        if bound == 0.0 {
            return Ok(Updated::applied(self.clone()).with_criterion(criterion));
        }
        let next = self.step_along(&dir, mu / (bound + f64::MIN_POSITIVE))?;
        if next.coeffs.iter().any(|c| c.iter().any(|x| !x.is_finite())) {
            return Ok(Updated::rejected(self.clone(), "non-finite coefficients after update"));
        }
        Ok(Updated::applied(next).with_criterion(criterion))
    }
}

impl GroupPreconditioner for MfGroupElement {
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
        self.update(pair, mu).unwrap_or_else(|e| Updated::rejected(self.clone(), e.to_string()))
    }
}

/// Lie-algebra descent direction `E = -Proj(a a^T - b b^T)` in coefficient form,
/// where `a = T h` and `b = T^{-T} v`.
#[derive(Debug, Clone, PartialEq)]
pub struct MfDirection {
    pub a: Vector,
    pub b: Vector,
    pub e: Vec<Vector>,
}

impl MfDirection {
    /// Depends on the element only through `a` and `b`.
    pub fn from_responses(group: &PermSubgroup, a: Vector, b: Vector) -> Self {
        let n = group.dim();
        let e = (0..group.order())
            .map(|i| {
                let p = group.perm(i);
                Vector::from_fn(n, |k, _| if group.owns(i, k) { b[k] * b[p[k]] - a[k] * a[p[k]] } else { 0.0 })
            })
            .collect();
        Self { a, b, e }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.e.iter().map(|c| c.norm_squared()).sum()
    }

    /// Upper bound on the spectral norm of `E`: the smaller of the Frobenius
    /// norm and the sum of per-permutation max-abs coefficients.
    pub fn norm_bound(&self) -> f64 {
        let by_perm: f64 = self.e.iter().map(|c| c.amax()).sum();
        by_perm.min(self.frobenius_sq().sqrt())
    }

    /// `d/ds c(( I + s E) T)` at `s = 0`, which is `-2 |E|_F^2`.
    pub fn directional_derivative(&self) -> f64 {
        -2.0 * self.frobenius_sq()
    }
}

pub(crate) fn check_step(mu: f64) -> Result<()> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(PsgdError::InvalidConfig(format!("fitting step {mu} outside (0, 1)")));
    }
    Ok(())
}

fn inf_norm(m: &Matrix) -> f64 {
    m.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MfRecord {
    kind: GroupKind,
    n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    perms: Option<Vec<Vec<usize>>>,
    coeffs: Vec<Vec<f64>>,
}

impl From<MfGroupElement> for MfRecord {
    fn from(t: MfGroupElement) -> Self {
        let kind = t.group.kind();
        Self {
            kind,
            n: t.dim(),
            perms: (kind == GroupKind::Custom).then(|| t.group.perms().to_vec()),
            coeffs: t.coeffs.iter().map(|c| c.iter().copied().collect()).collect(),
        }
    }
}

impl TryFrom<MfRecord> for MfGroupElement {
    type Error = PsgdError;

    fn try_from(r: MfRecord) -> Result<Self> {
        let group = match (r.kind, r.perms) {
            (GroupKind::Custom, Some(perms)) => PermSubgroup::custom_unbounded(perms)?,
            (GroupKind::Custom, None) => return Err(PsgdError::Format("custom group without permutations".into())),
            (kind, _) => PermSubgroup::of_kind(kind, r.n)?,
        };
        check_dim(r.n, group.dim())?;
        Self::new(group, r.coeffs.into_iter().map(Vector::from_vec).collect())
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

    fn diag(a: &[f64]) -> MfGroupElement {
        MfGroupElement::new(PermSubgroup::trivial(a.len()).unwrap(), vec![vec(a)]).unwrap()
    }

    fn xmat(a: &[f64], b: &[f64]) -> Result<MfGroupElement> {
        MfGroupElement::new(PermSubgroup::flip(a.len()).unwrap(), vec![vec(a), vec(b)])
    }

    fn random_element(group: &PermSubgroup, rng: &mut ChaCha8Rng) -> MfGroupElement {
        let n = group.dim();
        let coeffs = (0..group.order())
            .map(|i| {
                Vector::from_fn(n, |_, _| {
                    let x: f64 = rng.random_range(-0.5..0.5);
                    if i == group.identity_index() {
                        1.5 + x
                    } else {
                        x
                    }
                })
            })
            .collect();
        MfGroupElement::new(group.clone(), coeffs).unwrap()
    }

    fn pair(v: &[f64], h: &[f64]) -> CurvaturePair {
        CurvaturePair::new(vec(v), vec(h), PairKind::ExactHvp).unwrap()
    }

    #[test]
    fn apply_examples() {
        assert_eq!(diag(&[2.0, 3.0]).apply(&vec(&[1.0, 1.0])).unwrap(), vec(&[2.0, 3.0]));
        let x = xmat(&[2.0, 3.0], &[1.0, 1.0]).unwrap();
        assert_eq!(x.apply(&vec(&[1.0, 0.0])).unwrap(), vec(&[2.0, 1.0]));
        let bf = MfGroupElement::identity(PermSubgroup::half_shift(4).unwrap());
        let y = vec(&[0.1, -2.0, 3.0, 4.5]);
        assert_eq!(bf.apply(&y).unwrap(), y);
        assert!(bf.apply(&vec(&[1.0])).is_err());
    }

    #[test]
    fn dense_examples() {
        assert_eq!(diag(&[2.0, 3.0]).to_dense().unwrap(), Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]));
        let x = xmat(&[2.0, 3.0], &[1.0, 1.0]).unwrap();
        let d = x.to_dense().unwrap();
        assert_eq!(d, Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]));
        for j in 0..2 {
            let e = Vector::from_fn(2, |k, _| if k == j { 1.0 } else { 0.0 });
            assert_eq!(x.apply(&e).unwrap(), d.column(j));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bf = random_element(&PermSubgroup::half_shift(4).unwrap(), &mut rng).to_dense().unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let off = (c + 4 - r) % 4;
                if off != 0 && off != 2 {
                    assert_eq!(bf[(r, c)], 0.0);
                }
            }
        }
        let xm = random_element(&PermSubgroup::flip(7).unwrap(), &mut rng).to_dense().unwrap();
        for r in 0..7 {
            for c in 0..7 {
                if r != c && r + c != 6 {
                    assert_eq!(xm[(r, c)], 0.0);
                }
            }
        }
        let big = MfGroupElement::identity(PermSubgroup::trivial(600).unwrap());
        assert!(matches!(big.to_dense(), Err(PsgdError::OracleCapExceeded { .. })));
    }

    #[test]
    fn compose_examples() {
        let t = xmat(&[2.0, 3.0], &[1.0, 1.0]).unwrap();
        let id = xmat(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(t.compose(&id).unwrap(), t);
        assert_eq!(diag(&[2.0, 3.0]).compose(&diag(&[4.0, 5.0])).unwrap(), diag(&[8.0, 15.0]));
        assert!(diag(&[1.0, 1.0]).compose(&t).is_err());

        // closed form for the flip group
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = PermSubgroup::flip(6).unwrap();
        let t1 = random_element(&g, &mut rng);
        let t2 = random_element(&g, &mut rng);
        let (a, b) = (&t1.coeffs()[0], &t1.coeffs()[1]);
        let (u, v) = (&t2.coeffs()[0], &t2.coeffs()[1]);
        let flip = |x: &Vector| Vector::from_iterator(6, x.iter().rev().copied());
        let c = t1.compose(&t2).unwrap();
        let first = a.component_mul(u) + b.component_mul(&flip(v));
        let second = a.component_mul(v) + b.component_mul(&flip(u));
        assert!((&c.coeffs()[0] - first).amax() < 1e-14);
        assert!((&c.coeffs()[1] - second).amax() < 1e-14);
        let dense = t1.to_dense().unwrap() * t2.to_dense().unwrap();
        assert!((c.to_dense().unwrap() - dense).amax() < 1e-12);
    }

    #[test]
    fn inverse_examples() {
        let inv = xmat(&[2.0, 3.0], &[1.0, 1.0]).unwrap().inverse().unwrap();
        assert!((&inv.coeffs()[0] - vec(&[0.6, 0.4])).amax() < 1e-15);
        assert!((&inv.coeffs()[1] - vec(&[-0.2, -0.2])).amax() < 1e-15);
        let expect = Matrix::from_row_slice(2, 2, &[0.6, -0.2, -0.2, 0.4]);
        assert!((inv.to_dense().unwrap() - expect).amax() < 1e-15);

        assert_eq!(diag(&[2.0, 4.0]).inverse().unwrap(), diag(&[0.5, 0.25]));
        assert!(matches!(xmat(&[1.0, 1.0], &[1.0, 1.0]), Err(PsgdError::NotInvertible(_))));
        assert!(MfGroupElement::new(PermSubgroup::trivial(2).unwrap(), vec![vec(&[1.0, 0.0])]).is_err());
    }

    #[test]
    fn odd_flip_middle_entry() {
        // a = b on the fixed point: c = 0 there, but the element is invertible.
        let t = xmat(&[2.0, 1.0, 3.0], &[0.5, 1.0, 0.25]).unwrap();
        let d = t.to_dense().unwrap();
        assert_eq!(d[(1, 1)], 2.0);
        let round = t.compose(&t.inverse().unwrap()).unwrap().to_dense().unwrap();
        assert!((round - Matrix::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn precondition_examples() {
        assert_eq!(diag(&[0.5, 1.0]).precondition(&vec(&[4.0, 1.0])).unwrap(), vec(&[1.0, 1.0]));
        let id = MfGroupElement::identity(PermSubgroup::flip(3).unwrap());
        let g = vec(&[1.0, -2.0, 0.5]);
        assert_eq!(id.precondition(&g).unwrap(), g);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_element(&PermSubgroup::flip(8).unwrap(), &mut rng);
        let g = Vector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let m = t.to_dense().unwrap();
        let expect = m.transpose() * &m * &g;
        assert!((t.precondition(&g).unwrap() - expect).amax() < 1e-12);
    }

    #[test]
    fn update_examples() {
        let q = diag(&[1.0, 1.0]);
        let p = pair(&[1.0, 1.0], &[4.0, 1.0]);
        let dir = q.descent_direction(&p).unwrap();
        assert_eq!(dir.e[0], vec(&[-15.0, 0.0]));
        let next = q.update(&p, 0.1).unwrap();
        assert!(next.is_applied());
        assert!((&next.element.coeffs()[0] - vec(&[0.9, 1.0])).amax() < 1e-15);

        let fixed = diag(&[0.5, 1.0]);
        assert_eq!(fixed.update(&p, 0.1).unwrap().element, fixed);

        for group in [
            PermSubgroup::trivial(4).unwrap(),
            PermSubgroup::flip(4).unwrap(),
            PermSubgroup::half_shift(4).unwrap(),
            PermSubgroup::all_shifts(4).unwrap(),
        ] {
            let id = MfGroupElement::identity(group);
            let v = [0.3, -1.0, 2.0, 0.7];
            let out = id.update(&pair(&v, &v), 0.5).unwrap();
            assert_eq!(out.element, id);
        }
        assert!(q.update(&p, 1.5).is_err());
    }

    #[test]
    fn update_depends_only_on_responses() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = PermSubgroup::half_shift(6).unwrap();
        let t = random_element(&g, &mut rng);
        let p = pair(&[1.0, 0.5, -0.2, 0.3, 0.9, -1.1], &[0.2, 0.1, 1.4, -0.3, 0.8, 0.6]);
        let dir = t.descent_direction(&p).unwrap();
        // identity element fed the transported pair (a, b) sees the same direction
        let id = MfGroupElement::identity(g.clone());
        let transported = CurvaturePair::new(dir.b.clone(), dir.a.clone(), PairKind::ExactHvp).unwrap();
        let from_id = id.descent_direction(&transported).unwrap();
        assert_eq!(from_id.e, dir.e);
    }

    #[test]
    fn rejected_update_leaves_element() {
        // Near-singular X-shape element: inverse fails.
        let t =
            MfGroupElement { group: PermSubgroup::flip(2).unwrap(), coeffs: vec![vec(&[1.0, 1.0]), vec(&[1.0, 1.0])] };
        let out = t.fit_step(&pair(&[1.0, 0.0], &[1.0, 0.0]), 0.1);
        assert!(!out.is_applied());
        assert_eq!(out.element, t);
    }

    #[test]
    fn criterion_decreases_along_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for kind in [GroupKind::Trivial, GroupKind::Flip, GroupKind::HalfShift, GroupKind::AllShifts] {
            let g = PermSubgroup::of_kind(kind, 6).unwrap();
            let t = random_element(&g, &mut rng);
            let p = pair(
                &(0..6).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>(),
                &(0..6).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>(),
            );
            let before = criterion_hat(&t, &p).unwrap();
            let after = criterion_hat(&t.update(&p, 0.01).unwrap().element, &p).unwrap();
            assert!(after < before, "{kind:?}: {after} >= {before}");
        }
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_element(&PermSubgroup::flip(5).unwrap(), &mut rng);
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.contains("\"kind\":\"flip\""));
        let back: MfGroupElement = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);

        let bad = r#"{"kind":"flip","n":2,"coeffs":[[1,1],[1,1]]}"#;
        assert!(serde_json::from_str::<MfGroupElement>(bad).is_err());
        let unknown = r#"{"kind":"trivial","n":1,"coeffs":[[1]],"extra":0}"#;
        assert!(serde_json::from_str::<MfGroupElement>(unknown).is_err());
    }
}
