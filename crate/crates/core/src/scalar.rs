//! Floating-point element type shared by every kernel.
//!
//! Storage is generic (`f32` or `f64`); reductions (dot products, sums,
//! moments, norms) always accumulate in `f64` and round once on the way out.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Widen to the accumulation type.
    #[inline]
    fn wide(self) -> f64 {
        // Every `Float` we implement for is representable in f64.
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Narrow from the accumulation type.
    #[inline]
    fn narrow(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    #[inline]
    fn lit(v: f64) -> Self {
        Self::narrow(v)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
