//! Scalar abstractions.
//!
//! Cost formulas that only need field arithmetic and ordering (collective
//! times, pipeline schedules, per-bit path energy, validation metrics) are
//! written against [`Scalar`], so they run unchanged on `f32`, `f64`, exact
//! rationals, or plain integers. Anything that interpolates in log space
//! needs [`Real`].

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Ordered field-like number usable by the analytical formulas.
pub trait Scalar:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    /// Lossless-where-possible conversion from an integer count.
    fn from_count(n: u128) -> Self {
        Self::from_u128(n).expect("count not representable in scalar type")
    }

    /// Conversion from a literal constant (ratios, tolerances).
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("constant not representable in scalar type")
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

    fn abs_val(self) -> Self {
        if self < Self::zero() {
            Self::zero() - self
        } else {
            self
        }
    }
}

impl<T> Scalar for T where
    T: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
}

/// Floating-point scalar (`f32` or `f64`).
pub trait Real: Scalar + Float {}

impl Real for f32 {}
impl Real for f64 {}
