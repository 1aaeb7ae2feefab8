//! Preconditioner spec strings: `none`, `diag`, `xmat`, `butterfly`, `dense`,
//! `lra:r=N` (diagonal scale) and `lra:r=N,scalar`.

use std::fmt;
use std::str::FromStr;

use psgd_core::{GroupKind, LraElement, LraScale, MfGroupElement, PermSubgroup, Preconditioner, SeededRng};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PrecondSpec {
    None,
    Group(GroupKind),
    Lra { rank: usize, scalar: bool },
}

impl PrecondSpec {
    /// Builds `init_scale * I` (plus small random low-rank factors for LRA).
    pub fn build(&self, n: usize, init_scale: f64, rng: &mut SeededRng) -> psgd_core::Result<Preconditioner> {
        Ok(match *self {
            PrecondSpec::None => Preconditioner::Identity { n },
            PrecondSpec::Group(kind) => {
                Preconditioner::Mf(MfGroupElement::scaled_identity(PermSubgroup::of_kind(kind, n)?, init_scale))
            }
            PrecondSpec::Lra { rank, scalar: true } => {
                Preconditioner::Lra(LraElement::random_init(n, rank, LraScale::Scalar(init_scale), rng)?)
            }
            PrecondSpec::Lra { rank, scalar: false } => {
                Preconditioner::Lra(LraElement::composite_init(n, rank, init_scale, rng)?)
            }
        })
    }
}

impl FromStr for PrecondSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let bad = |reason: &str| CliError::PrecondSpec { spec: s.to_string(), reason: reason.to_string() };
        let kind = match s {
            "none" => return Ok(PrecondSpec::None),
            "diag" => GroupKind::Trivial,
            "xmat" => GroupKind::Flip,
            "butterfly" => GroupKind::HalfShift,
            "dense" => GroupKind::AllShifts,
            _ => {
                let rest = s.strip_prefix("lra:").ok_or_else(|| bad("unknown kind"))?;
                let mut parts = rest.split(',');
                let rank = parts
                    .next()
                    .and_then(|p| p.strip_prefix("r="))
                    .ok_or_else(|| bad("expected r=<rank>"))?
                    .parse::<usize>()
                    .map_err(|_| bad("rank must be a non-negative integer"))?;
                let scalar = match parts.next() {
                    None => false,
                    Some("scalar") => true,
                    Some(_) => return Err(bad("only the `scalar` option is known")),
                };
                if parts.next().is_some() {
                    return Err(bad("trailing options"));
                }
                return Ok(PrecondSpec::Lra { rank, scalar });
            }
        };
        Ok(PrecondSpec::Group(kind))
    }
}

impl fmt::Display for PrecondSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrecondSpec::None => f.write_str("none"),
            PrecondSpec::Group(k) => f.write_str(k.name()),
            PrecondSpec::Lra { rank, scalar: false } => write!(f, "lra:r={rank}"),
            PrecondSpec::Lra { rank, scalar: true } => write!(f, "lra:r={rank},scalar"),
        }
    }
}

impl TryFrom<String> for PrecondSpec {
    type Error = CliError;

    fn try_from(s: String) -> Result<Self, CliError> {
        s.parse()
    }
}

impl From<PrecondSpec> for String {
    fn from(s: PrecondSpec) -> String {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn parses_known_specs() {
        assert_eq!("lra:r=5".parse::<PrecondSpec>().unwrap(), PrecondSpec::Lra { rank: 5, scalar: false });
        assert_eq!("lra:r=0,scalar".parse::<PrecondSpec>().unwrap(), PrecondSpec::Lra { rank: 0, scalar: true });
        assert_eq!("xmat".parse::<PrecondSpec>().unwrap(), PrecondSpec::Group(GroupKind::Flip));
        for s in ["none", "diag", "xmat", "butterfly", "dense", "lra:r=10", "lra:r=3,scalar"] {
            assert_eq!(s.parse::<PrecondSpec>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn rejects_malformed_specs() {
        for s in ["lra:r=-1", "lra", "lra:5", "lra:r=2,diag", "lra:r=x", "full", ""] {
            assert!(s.parse::<PrecondSpec>().is_err(), "{s}");
        }
    }

    #[test]
    fn builds_with_dimension() {
        let mut rng = SeededRng::seed_from_u64(0);
        let p = "butterfly".parse::<PrecondSpec>().unwrap().build(6, 2.0, &mut rng).unwrap();
        assert_eq!(psgd_core::GroupPreconditioner::dim(&p), 6);
        assert!("butterfly".parse::<PrecondSpec>().unwrap().build(5, 1.0, &mut rng).is_err());
    }
}
