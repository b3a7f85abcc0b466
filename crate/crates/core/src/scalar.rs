//! Scalar abstraction shared by every numerical module.
//!
//! All matrix code is written against [`Real`], which bundles the
//! `nalgebra` field traits with the `num-traits` conversions we need for
//! turning configuration constants into the working precision.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point type usable by the solvers (`f32` or `f64`).
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    /// Converts an `f64` constant into the working precision.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite constant")
    }

    /// Converts a count into the working precision.
    #[inline]
    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("representable count")
    }

    /// Lossy conversion back to `f64` for reporting.
    #[inline]
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Unit roundoff of the type.
    fn unit_roundoff() -> Self;
}

impl Real for f32 {
    fn unit_roundoff() -> Self {
        f32::EPSILON
    }
}

impl Real for f64 {
    fn unit_roundoff() -> Self {
        f64::EPSILON
    }
}
