//! Scalar abstractions shared by the numerical kernels.
//!
//! Sampling is always done in `f64`; everything downstream of a sampled
//! cascade (dendrite coordinates, resistance networks, pencils, the dense
//! oracle) is generic so the same code runs in `f32`, `f64` and, for the
//! purely algebraic dendrite construction, exact rationals.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, Neg, SubAssign};

use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Floating point scalar used by networks, pencils and eigen-counting.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; every `Real` can represent (a rounding of) any finite f64.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to every Real")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Ring scalar for planar coordinates of the dendrite. Only ring operations
/// and halving are needed, so exact rationals qualify.
pub trait Coord: Clone + Num + Neg<Output = Self> + PartialOrd + Debug {
    fn half() -> Self {
        Self::one() / (Self::one() + Self::one())
    }
}

impl<T> Coord for T where T: Clone + Num + Neg<Output = T> + PartialOrd + Debug {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_is_exact_for_rationals() {
        use num_rational::Ratio;
        assert_eq!(<Ratio<i64> as Coord>::half(), Ratio::new(1, 2));
        assert_eq!(<f32 as Coord>::half(), 0.5);
    }

    #[test]
    fn real_roundtrip() {
        assert_eq!(f32::of(0.25).as_f64(), 0.25);
        assert_eq!(f64::of(1.0 / 3.0), 1.0 / 3.0);
    }
}
