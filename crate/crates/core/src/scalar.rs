//! Scalar abstraction shared by the differentiable core, the model and the
//! trainer.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real floating point scalar (`f32` or `f64`).
///
/// Everything that trains or evaluates a model is generic over this trait.
/// Data generation and the checkpoint format always use `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, rounding to the nearest representable value.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("real scalar converts to f64")
    }

    /// Hyperbolic tangent used by network activations. Must agree with
    /// [`Real::tanh_slice`] bit for bit.
    #[inline]
    fn activation_tanh(self) -> Self {
        self.tanh()
    }

    /// Applies [`Real::activation_tanh`] to every element.
    fn tanh_slice(xs: &mut [Self]) {
        xs.iter_mut().for_each(|x| *x = x.activation_tanh());
    }
}

impl Real for f32 {
    #[inline]
    fn activation_tanh(self) -> Self {
        crate::fastmath::tanh_f32(self)
    }

    fn tanh_slice(xs: &mut [Self]) {
        crate::fastmath::tanh_slice_f32(xs)
    }
}

impl Real for f64 {
    #[inline]
    fn activation_tanh(self) -> Self {
        crate::fastmath::tanh(self)
    }

    fn tanh_slice(xs: &mut [Self]) {
        crate::fastmath::tanh_slice(xs)
    }
}
