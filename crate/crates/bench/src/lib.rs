//! Shared fixtures for the criterion benches.

use psgd_core::curvature::{make_probe, ProbeDistribution};
use psgd_core::{CurvaturePair, LraElement, MfGroupElement, PairKind, PermSubgroup, SeededRng, Vector};
use rand::SeedableRng;

pub fn rng(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

pub fn probe(n: usize, rng: &mut SeededRng) -> Vector {
    make_probe(n, ProbeDistribution::StandardNormal, rng).expect("n > 0")
}

/// A pair with independent Gaussian `v` and `h`.
pub fn pair(n: usize, rng: &mut SeededRng) -> CurvaturePair {
    let v = probe(n, rng);
    let h = probe(n, rng);
    CurvaturePair::new(v, h, PairKind::ExactHvp).expect("matching lengths")
}

/// `2 I` on the given group.
pub fn mf(group: PermSubgroup) -> MfGroupElement {
    MfGroupElement::scaled_identity(group, 2.0)
}

/// Composite `diag(d)(I + U V^T)` with small random factors.
pub fn lra(n: usize, r: usize, rng: &mut SeededRng) -> LraElement {
    LraElement::composite_init(n, r, 1.0, rng).expect("valid shape")
}
