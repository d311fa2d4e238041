//! Scalar abstraction shared by the numeric modules.
//!
//! Learning, descriptor extraction and alignment are written once over
//! [`Real`] and instantiated for `f32` and `f64`. The on-disk formats fix
//! their own precision (features `f32`, models `f64`) and convert at the
//! boundary.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use rustfft::FftNum;

/// Floating point scalar usable by every numeric routine in the crate.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + FftNum {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

/// Lossy conversion of `T` into `f64`.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    ToPrimitive::to_f64(&x).unwrap_or(f64::NAN)
}

/// Lossy conversion between two scalar types.
#[inline]
pub fn cast<T: Real, U: Real>(x: T) -> U {
    lit(to_f64(x))
}

#[inline]
pub(crate) fn is_finite<T: Real>(x: T) -> bool {
    to_f64(x).is_finite()
}
