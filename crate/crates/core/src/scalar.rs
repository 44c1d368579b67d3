//! Scalar types usable as membership degrees.

use std::fmt::Debug;

use num_rational::Rational64;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// A number type that can carry a membership degree.
///
/// Implemented for `f32`, `f64` and [`Rational64`]. The rational instance
/// makes every consensus score exact, which the tests use as an oracle for
/// the floating point paths.
pub trait Scalar:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    /// Slack used when comparing two scores for a strict improvement.
    fn slack() -> Self;

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar")
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    /// `true` when the value lies in the closed unit interval. NaN fails.
    fn in_unit_interval(self) -> bool {
        self >= Self::zero() && self <= Self::one()
    }
}

impl Scalar for f32 {
    fn slack() -> Self {
        1e-6
    }
}

impl Scalar for f64 {
    fn slack() -> Self {
        1e-12
    }
}

impl Scalar for Rational64 {
    fn slack() -> Self {
        Rational64::from_integer(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_interval_membership() {
        assert!(0.0f64.in_unit_interval());
        assert!(1.0f64.in_unit_interval());
        assert!(!1.3f64.in_unit_interval());
        assert!(!f64::NAN.in_unit_interval());
        assert!(Rational64::new(2, 3).in_unit_interval());
        assert!(!Rational64::new(4, 3).in_unit_interval());
    }

    #[test]
    fn min_max_helpers() {
        assert_eq!(0.4f64.min_of(0.7), 0.4);
        assert_eq!(0.4f32.max_of(0.7), 0.7);
    }
}
