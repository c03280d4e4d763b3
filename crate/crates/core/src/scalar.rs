//! Floating-point abstraction shared by every numeric routine in the crate.
//!
//! Features are stored on disk as `f32`; the same code paths run in `f64`
//! for gradient audits and other high-precision checks.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar usable for features, model parameters and losses.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; panics only for values unrepresentable in `Self`.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("value representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    /// Converts a count (batch size, row count) into the scalar type.
    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::of(v as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
