//! Floating-point scalar abstraction shared by every numeric type in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar the engine computes in: `f32` or `f64`.
///
/// Everything above the tensor layer is written against this trait, so a model
/// can be instantiated at either precision. Gradient checking at tight
/// tolerances requires `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal or hyperparameter into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar always converts to f64")
    }

    /// Converts from a stored 32-bit embedding value.
    #[inline]
    fn from_f32_value(x: f32) -> Self {
        Self::lit(x as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
