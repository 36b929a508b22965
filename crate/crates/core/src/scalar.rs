//! Scalar abstraction shared by the tensor engine and the model.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type usable as a tensor element.
///
/// Production code runs on `f32`; gradient checks use `f64` so that finite
/// differences are not dominated by rounding noise.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Lossy conversion from `f64` (rounds to nearest for `f32`).
    fn from_f(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 converts to every Real")
    }

    fn to_f(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("every Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
