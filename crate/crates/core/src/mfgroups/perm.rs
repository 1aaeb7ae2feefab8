use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{PsgdError, Result};
use crate::DEFAULT_ORACLE_CAP;

/// Largest subgroup order accepted for custom groups unless explicitly unbounded.
pub const MAX_DEFAULT_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    /// `{e}`: diagonal matrices.
    Trivial,
    /// `{e, flip}`: X-shape matrices.
    Flip,
    /// `{e, shift by n/2}`: butterfly matrices.
    HalfShift,
    /// All circular shifts: the dense general linear group.
    AllShifts,
    Custom,
}

impl GroupKind {
    pub fn name(self) -> &'static str {
        match self {
            GroupKind::Trivial => "diag",
            GroupKind::Flip => "xmat",
            GroupKind::HalfShift => "butterfly",
            GroupKind::AllShifts => "dense",
            GroupKind::Custom => "custom",
        }
    }
}

/// A subgroup `K` of the symmetric group `S_n`, stored as index maps.
///
/// Permutation `i` acts on vectors by `sigma_i(x)[k] = x[perms[i][k]]`.
/// Cloning is cheap; the tables are shared.
#[derive(Clone)]
pub struct PermSubgroup {
    inner: Arc<GroupData>,
}

struct GroupData {
    kind: GroupKind,
    n: usize,
    perms: Vec<Vec<usize>>,
    identity: usize,
    // product[i * m + j] = l with sigma_l = sigma_i o sigma_j
    product: Vec<usize>,
    inverse: Vec<usize>,
    orbits: Vec<Vec<usize>>,
    // owns[i][k]: position (k, perms[i][k]) is not already taken by an
    // earlier permutation. All true when the action is free.
    owns: Option<Vec<Vec<bool>>>,
}

impl std::fmt::Debug for PermSubgroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PermSubgroup")
            .field("kind", &self.inner.kind)
            .field("n", &self.inner.n)
            .field("order", &self.inner.perms.len())
            .finish()
    }
}

impl PartialEq for PermSubgroup {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.kind == other.inner.kind
                && self.inner.n == other.inner.n
                && self.inner.perms == other.inner.perms)
    }
}

impl PermSubgroup {
    pub fn trivial(n: usize) -> Result<Self> {
        check_n(n)?;
        Self::build(GroupKind::Trivial, n, vec![(0..n).collect()])
    }

    pub fn flip(n: usize) -> Result<Self> {
        check_n(n)?;
        if n < 2 {
            return Err(PsgdError::InvalidGroup("flip group needs n >= 2".into()));
        }
        Self::build(GroupKind::Flip, n, vec![(0..n).collect(), (0..n).rev().collect()])
    }

    pub fn half_shift(n: usize) -> Result<Self> {
        check_n(n)?;
        if n < 2 || !n.is_multiple_of(2) {
            return Err(PsgdError::InvalidGroup(format!("butterfly group needs even n >= 2, got {n}")));
        }
        Self::build(GroupKind::HalfShift, n, vec![(0..n).collect(), shift(n, n / 2)])
    }

    /// All circular shifts; the induced group is `GL(n)`. Limited to the oracle cap.
    pub fn all_shifts(n: usize) -> Result<Self> {
        Self::all_shifts_capped(n, DEFAULT_ORACLE_CAP)
    }

    pub fn all_shifts_capped(n: usize, cap: usize) -> Result<Self> {
        check_n(n)?;
        if n > cap {
            return Err(PsgdError::OracleCapExceeded { n, cap });
        }
        Self::build(GroupKind::AllShifts, n, (0..n).map(|s| shift(n, s)).collect())
    }

    /// A user-supplied subgroup of order at most [`MAX_DEFAULT_ORDER`].
    pub fn custom(perms: Vec<Vec<usize>>) -> Result<Self> {
        if perms.len() > MAX_DEFAULT_ORDER {
            return Err(PsgdError::InvalidGroup(format!(
                "order {} exceeds the default limit {MAX_DEFAULT_ORDER}",
                perms.len()
            )));
        }
        Self::custom_unbounded(perms)
    }

    pub fn custom_unbounded(perms: Vec<Vec<usize>>) -> Result<Self> {
        let n = perms.first().map(Vec::len).unwrap_or(0);
        check_n(n)?;
        Self::build(GroupKind::Custom, n, perms)
    }

    fn build(kind: GroupKind, n: usize, perms: Vec<Vec<usize>>) -> Result<Self> {
        let m = perms.len();
        if m == 0 {
            return Err(PsgdError::InvalidGroup("empty permutation set".into()));
        }
        let mut index = HashMap::with_capacity(m);
        for (i, p) in perms.iter().enumerate() {
            if p.len() != n {
                return Err(PsgdError::InvalidGroup(format!("permutation {i} has length {} != {n}", p.len())));
            }
            let mut seen = vec![false; n];
            for &s in p {
                if s >= n || std::mem::replace(&mut seen[s], true) {
                    return Err(PsgdError::InvalidGroup(format!("entry {i} is not a permutation of 0..{n}")));
                }
            }
            if index.insert(p.clone(), i).is_some() {
                return Err(PsgdError::InvalidGroup(format!("permutation {i} is repeated")));
            }
        }
        let id: Vec<usize> = (0..n).collect();
        let identity = *index.get(&id).ok_or_else(|| PsgdError::InvalidGroup("identity permutation missing".into()))?;

        let mut product = vec![0; m * m];
        let mut composed = vec![0; n];
        for i in 0..m {
            for j in 0..m {
                for k in 0..n {
                    composed[k] = perms[j][perms[i][k]];
                }
                product[i * m + j] = *index
                    .get(&composed)
                    .ok_or_else(|| PsgdError::InvalidGroup(format!("not closed: sigma_{i} o sigma_{j}")))?;
            }
        }
        let inverse = (0..m)
            .map(|i| (0..m).find(|&j| product[i * m + j] == identity).expect("closed finite set has inverses"))
            .collect();

        let mut orbit_of = vec![usize::MAX; n];
        let mut orbits = Vec::new();
        for start in 0..n {
            if orbit_of[start] != usize::MAX {
                continue;
            }
            let mut orbit: Vec<usize> = perms.iter().map(|p| p[start]).collect();
            orbit.sort_unstable();
            orbit.dedup();
            for &k in &orbit {
                orbit_of[k] = orbits.len();
            }
            orbits.push(orbit);
        }

        let free = (0..n).all(|k| {
            let mut targets: Vec<usize> = perms.iter().map(|p| p[k]).collect();
            targets.sort_unstable();
            targets.windows(2).all(|w| w[0] != w[1])
        });
        let owns = (!free)
            .then(|| (0..m).map(|i| (0..n).map(|k| (0..i).all(|j| perms[j][k] != perms[i][k])).collect()).collect());

        Ok(Self { inner: Arc::new(GroupData { kind, n, perms, identity, product, inverse, orbits, owns }) })
    }

    pub fn kind(&self) -> GroupKind {
        self.inner.kind
    }

    pub fn dim(&self) -> usize {
        self.inner.n
    }

    pub fn order(&self) -> usize {
        self.inner.perms.len()
    }

    pub fn perms(&self) -> &[Vec<usize>] {
        &self.inner.perms
    }

    pub fn perm(&self, i: usize) -> &[usize] {
        &self.inner.perms[i]
    }

    pub fn identity_index(&self) -> usize {
        self.inner.identity
    }

    /// Index `l` such that `sigma_l = sigma_i o sigma_j` (apply `sigma_j` first).
    pub fn product(&self, i: usize, j: usize) -> usize {
        self.inner.product[i * self.order() + j]
    }

    pub fn inverse_index(&self, i: usize) -> usize {
        self.inner.inverse[i]
    }

    /// Coordinate orbits under the group action; the group acts block-diagonally on them.
    pub fn orbits(&self) -> &[Vec<usize>] {
        &self.inner.orbits
    }

    pub fn is_free(&self) -> bool {
        self.inner.owns.is_none()
    }

    /// Whether permutation `i` is the canonical owner of matrix position `(k, perm_i[k])`.
    #[inline]
    pub fn owns(&self, i: usize, k: usize) -> bool {
        match &self.inner.owns {
            None => true,
            Some(o) => o[i][k],
        }
    }

    /// Order two with an involutive generator, as for the flip and half-shift groups.
    pub fn is_involution_pair(&self) -> bool {
        self.order() == 2 && {
            let g = 1 - self.identity_index();
            self.product(g, g) == self.identity_index()
        }
    }

    /// `sigma_i(x)`.
    pub fn permute(&self, i: usize, x: &[f64]) -> Vec<f64> {
        self.perm(i).iter().map(|&s| x[s]).collect()
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(PsgdError::InvalidDimension("group dimension 0".into()));
    }
    Ok(())
}

fn shift(n: usize, s: usize) -> Vec<usize> {
    (0..n).map(|k| (k + s) % n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_groups_are_closed() {
        for g in [
            PermSubgroup::trivial(5).unwrap(),
            PermSubgroup::flip(5).unwrap(),
            PermSubgroup::half_shift(6).unwrap(),
            PermSubgroup::all_shifts(7).unwrap(),
        ] {
            let m = g.order();
            for i in 0..m {
                let inv = g.inverse_index(i);
                assert_eq!(g.product(i, inv), g.identity_index());
                for j in 0..m {
                    let l = g.product(i, j);
                    let x: Vec<f64> = (0..g.dim()).map(|k| k as f64).collect();
                    assert_eq!(g.permute(l, &x), g.permute(i, &g.permute(j, &x)));
                }
            }
        }
    }

    #[test]
    fn orbits_and_freeness() {
        let flip_odd = PermSubgroup::flip(5).unwrap();
        assert!(!flip_odd.is_free());
        assert_eq!(flip_odd.orbits().len(), 3);
        assert!(flip_odd.owns(0, 2) && !flip_odd.owns(1, 2));
        assert!(flip_odd.is_involution_pair());

        let bf = PermSubgroup::half_shift(8).unwrap();
        assert!(bf.is_free());
        assert_eq!(bf.orbits(), &[vec![0, 4], vec![1, 5], vec![2, 6], vec![3, 7]]);

        let dense = PermSubgroup::all_shifts(4).unwrap();
        assert_eq!(dense.orbits().len(), 1);
    }

    #[test]
    fn rejects_bad_sets() {
        assert!(PermSubgroup::half_shift(5).is_err());
        assert!(PermSubgroup::all_shifts_capped(20, 10).is_err());
        // missing identity
        assert!(PermSubgroup::custom(vec![vec![1, 0]]).is_err());
        // not closed: a 3-cycle without its square
        assert!(PermSubgroup::custom(vec![vec![0, 1, 2], vec![1, 2, 0]]).is_err());
        // not a permutation
        assert!(PermSubgroup::custom(vec![vec![0, 1, 2], vec![0, 0, 2]]).is_err());
        // order above the default limit
        let s5: Vec<Vec<usize>> = (0..5).map(|s| shift(5, s)).collect();
        assert!(PermSubgroup::custom(s5.clone()).is_err());
        assert!(PermSubgroup::custom_unbounded(s5).is_ok());
    }

    #[test]
    fn klein_four_group() {
        // generated by the flip and the half shift on n = 8
        let n = 8;
        let flip: Vec<usize> = (0..n).rev().collect();
        let half = shift(n, n / 2);
        let both: Vec<usize> = (0..n).map(|k| half[flip[k]]).collect();
        let g = PermSubgroup::custom(vec![(0..n).collect(), flip, half, both]).unwrap();
        assert_eq!(g.order(), 4);
        assert!(g.is_free());
        assert_eq!(g.orbits().len(), 2);
    }
}
