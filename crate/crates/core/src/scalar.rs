//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type for distributions, networks and losses.
///
/// Implemented for `f32` and `f64`. `prob_tolerance` is the slack allowed
/// when checking that a probability vector sums to one.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Absolute tolerance on `sum(p) == 1` for a [`ProbDist`](crate::ProbDist).
    fn prob_tolerance() -> Self;

    /// Converts an `f64` literal. Never fails for finite input.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal fits every scalar type")
    }

    /// Converts a count.
    #[inline]
    fn count(n: usize) -> Self {
        Self::from_usize(n).expect("count fits every scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn prob_tolerance() -> Self {
        1e-9
    }
}

impl Scalar for f32 {
    fn prob_tolerance() -> Self {
        1e-5
    }
}
