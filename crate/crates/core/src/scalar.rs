//! Scalar abstraction shared by the geometric kernels.

use nalgebra as na;
use num_traits as nt;

/// Floating point type usable by the geometry routines (`f32` or `f64`).
pub trait Real:
    Copy + nt::FloatConst + nt::FromPrimitive + nt::ToPrimitive + na::RealField
{
    /// Converts an `f64` literal into `Self`.
    fn lit(v: f64) -> Self {
        <Self as nt::FromPrimitive>::from_f64(v).expect("representable literal")
    }

    /// Lossy conversion to `f64` for reporting.
    fn as_f64(self) -> f64 {
        nt::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Converts a count.
    fn from_count(n: usize) -> Self {
        Self::lit(n as f64)
    }
}

impl Real for f32 {}
impl Real for f64 {}
