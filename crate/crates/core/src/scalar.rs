//! Floating point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::str::FromStr;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar the interpolants, tracers and maps are generic over: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Default
    + Send
    + Sync
    + 'static
{
    /// Default offset of the derivative-transport clusters, as a fraction of a cell width.
    ///
    /// Second and third mixed differences divide by powers of the offset, so the
    /// single precision default is much larger.
    const DEFAULT_EPSILON_REL: f64;

    /// Converts a literal. Panics only if the literal is not representable at all.
    #[inline(always)]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline(always)]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline(always)]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    const DEFAULT_EPSILON_REL: f64 = 1e-4;
}

impl Scalar for f32 {
    const DEFAULT_EPSILON_REL: f64 = 5e-2;
}

/// A point or vector in `D` dimensions.
pub type Point<T, const D: usize> = [T; D];

#[inline]
pub(crate) fn sub<T: Scalar, const D: usize>(a: &[T; D], b: &[T; D]) -> [T; D] {
    std::array::from_fn(|i| a[i] - b[i])
}

#[inline]
pub(crate) fn axpy<T: Scalar, const D: usize>(alpha: T, x: &[T; D], y: &[T; D]) -> [T; D] {
    std::array::from_fn(|i| alpha * x[i] + y[i])
}

#[inline]
pub(crate) fn norm<T: Scalar, const D: usize>(a: &[T; D]) -> T {
    a.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
}

#[inline]
pub(crate) fn distance<T: Scalar, const D: usize>(a: &[T; D], b: &[T; D]) -> T {
    norm(&sub(a, b))
}

#[inline]
pub(crate) fn is_finite_point<T: Scalar, const D: usize>(a: &[T; D]) -> bool {
    a.iter().all(|v| v.is_finite())
}
