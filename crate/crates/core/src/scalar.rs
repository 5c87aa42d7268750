//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar the crate is generic over.
///
/// Implemented for `f32` and `f64`. Random draws are produced in `f64` and
/// narrowed through [`Real::lit`], so a given seed yields the same stream of
/// values for every scalar type up to rounding.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal into this scalar type.
    fn lit(x: f64) -> Self;

    /// Widens to `f64` for reporting.
    fn as_f64(self) -> f64;

    /// Converts a count.
    fn from_count(n: usize) -> Self {
        Self::lit(n as f64)
    }
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn lit(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Tolerance used for probability-mass checks. Tight for `f64`, scaled to the
/// type's precision otherwise.
pub fn mass_tolerance<T: Real>() -> T {
    T::lit(1e-12).max(T::epsilon() * T::lit(64.0))
}
