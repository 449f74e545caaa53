//! Scalar abstraction for the numeric core.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, NumCast};

/// Floating-point scalar the numeric core is generic over.
///
/// Implemented for `f32` and `f64`. Gradient checks and the acceptance
/// tolerances assume `f64`; `f32` is supported for forward-heavy use.
pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy-but-total conversion for literals and counts.
    fn cast<U: NumCast>(x: U) -> Self {
        <Self as NumCast>::from(x).expect("value representable in scalar type")
    }

    fn as_f64(self) -> f64;

    /// Numerically stable logistic function.
    fn sigmoid(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }
}

impl Scalar for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn as_f64(self) -> f64 {
        self
    }
}
