//! Scalar abstraction shared by every numeric routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar the library is generic over: `f32` or `f64`.
///
/// `RealField` supplies the transcendental functions and the linear algebra
/// (SVD, inverses); `num-traits` supplies lossless-enough conversion from the
/// `f64` literals used for thresholds and tolerances.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    /// Tolerance for the orthonormality / unit-norm checks on validated types.
    const VALIDATION_TOL: f64;

    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    const VALIDATION_TOL: f64 = 1e-9;
}

impl Real for f32 {
    const VALIDATION_TOL: f64 = 2e-5;
}

/// Shorthand for [`Real::lit`].
#[inline]
pub(crate) fn c<T: Real>(x: f64) -> T {
    T::lit(x)
}
