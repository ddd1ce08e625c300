use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// Element type of gradient-feature matrices.
///
/// Storage may be single or double precision; every dot product, mean, and
/// norm in this crate widens to `f64` before accumulating.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumCast
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless conversion to the accumulation type.
    fn widen(self) -> f64;

    /// Round an accumulated value back to storage precision.
    fn narrow(value: f64) -> Self;
}

impl Scalar for f32 {
    #[inline(always)]
    fn widen(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn narrow(value: f64) -> Self {
        value as f32
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn widen(self) -> f64 {
        self
    }

    #[inline(always)]
    fn narrow(value: f64) -> Self {
        value
    }
}

/// Sequential `f64` dot product, left to right.
#[inline]
pub(crate) fn dot_widened<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += x.widen() * y.widen();
    }
    acc
}
