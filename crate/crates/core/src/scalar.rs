//! Scalar abstraction shared by every numeric module.
//!
//! All simulation, regression and conformal code is written against [`Real`]
//! so it runs unchanged on `f32` and `f64`. The crate root exposes `f64`
//! aliases for the common case.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, NumCast};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar usable throughout the crate.
///
/// Automatically implemented for every type meeting the bounds, which in
/// practice means `f32` and `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
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
    /// Converts an `f64` literal, rounding to the nearest representable value.
    #[inline]
    fn of(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("f64 literal is representable")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        <Self as NumCast>::from(n).expect("count is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
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
}

/// Total order for finite values; NaN sorts last.
#[inline]
pub fn total_cmp<T: Real>(a: &T, b: &T) -> std::cmp::Ordering {
    a.partial_cmp(b).unwrap_or_else(|| match (a.is_nan(), b.is_nan()) {
        (true, true) => std::cmp::Ordering::Equal,
        (true, false) => std::cmp::Ordering::Greater,
        _ => std::cmp::Ordering::Less,
    })
}

/// Speed conversion factor, mph per m/s.
pub const MPH_PER_MPS: f64 = 2.23694;

#[inline]
pub fn mps_to_mph<T: Real>(v: T) -> T {
    v * T::of(MPH_PER_MPS)
}

#[inline]
pub fn mph_to_mps<T: Real>(v: T) -> T {
    v / T::of(MPH_PER_MPS)
}
