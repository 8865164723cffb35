//! Scalar abstraction for the numeric kernels.

use ndarray::NdFloat;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable throughout the crate.
///
/// `NdFloat` brings the arithmetic and `ScalarOperand` bounds needed by
/// `ndarray`; the primitive conversions let constants and tolerances be
/// written once as `f64` literals.
pub trait Scalar: NdFloat + FromPrimitive + ToPrimitive + std::iter::Sum {
    /// Convert an `f64` constant; panics only on NaN-free literal misuse.
    fn c(value: f64) -> Self {
        Self::from_f64(value).expect("f64 constant not representable")
    }

    /// Lossy view as `f64`, for reporting and error messages.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl<T> Scalar for T where T: NdFloat + FromPrimitive + ToPrimitive + std::iter::Sum {}
