//! Exact rational arithmetic used throughout the analysis.
//!
//! All throughput values, initiation intervals and transition delays are
//! kept as reduced fractions so that ceiling operations and feasibility
//! comparisons are bit-exact. Floating point is only used for GA operator
//! probabilities, never for analysis results.

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

pub type Rational = Ratio<i128>;

/// Shorthand constructor. Panics on a zero denominator, like `Ratio::new`.
pub fn rat(num: i128, den: i128) -> Rational {
    Ratio::new(num, den)
}

/// Smallest integer greater than or equal to `r`, as u64.
///
/// Callers only apply this to nonnegative quantities (buffer sizes,
/// interval products); a negative input is a logic error upstream.
pub fn ceil_u64(r: Rational) -> u64 {
    assert!(!r.is_negative(), "ceil_u64 on negative rational {r}");
    let c = r.ceil();
    u64::try_from(c.to_integer()).expect("rational ceiling out of u64 range")
}

pub fn is_positive(r: Rational) -> bool {
    r > Rational::zero()
}

/// Serialized form of a rational: an explicit numerator/denominator pair.
/// Used by every JSON interface so values survive round trips exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationalRepr {
    pub num: i128,
    pub den: i128,
}

impl From<Rational> for RationalRepr {
    fn from(r: Rational) -> Self {
        RationalRepr {
            num: *r.numer(),
            den: *r.denom(),
        }
    }
}

impl TryFrom<RationalRepr> for Rational {
    type Error = String;

    fn try_from(r: RationalRepr) -> Result<Self, String> {
        if r.den == 0 {
            return Err("rational denominator must be nonzero".to_string());
        }
        Ok(Ratio::new(r.num, r.den))
    }
}

/// serde adapter for struct fields holding a `Rational`.
pub mod rational_serde {
    use super::{Rational, RationalRepr};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        RationalRepr::from(*r).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let repr = RationalRepr::deserialize(d)?;
        Rational::try_from(repr).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_exact_boundary_does_not_over_round() {
        assert_eq!(ceil_u64(rat(70, 35)), 2);
        assert_eq!(ceil_u64(rat(71, 35)), 3);
        assert_eq!(ceil_u64(rat(0, 5)), 0);
    }

    #[test]
    fn repr_round_trip_reduces() {
        let r = Rational::try_from(RationalRepr { num: 6, den: 4 }).unwrap();
        assert_eq!(r, rat(3, 2));
        let back = RationalRepr::from(r);
        assert_eq!(back, RationalRepr { num: 3, den: 2 });
    }

    #[test]
    fn zero_denominator_rejected() {
        assert!(Rational::try_from(RationalRepr { num: 1, den: 0 }).is_err());
    }
}
