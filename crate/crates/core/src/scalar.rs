//! Scalar abstraction: the whole core is generic over the real type.
//!
//! `f64` is what the experiment drivers use; `f32` instantiates too and is
//! exercised by a couple of smoke tests. Concrete aliases live at the crate
//! root.

use num_complex::Complex;

/// Real scalar the spectral and many-body machinery is generic over.
///
/// `FftNum` pulls in what rustfft needs; the rest is ordinary float calculus.
/// Note `FftNum` implies `Signed`, so `.abs()` is ambiguous against
/// `Float::abs` — generic code spells it `Float::abs(x)`.
pub trait Real:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + rustfft::FftNum
    + std::iter::Sum
    + std::fmt::Display
    + std::fmt::LowerExp
    + Default
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex number over a [`Real`] scalar.
pub type Cx<R> = Complex<R>;

/// Lift an `f64` constant into the generic scalar.
#[inline]
pub fn cast<R: Real>(x: f64) -> R {
    R::from_f64(x).expect("constant not representable in scalar type")
}

/// Lift a `usize` into the generic scalar.
#[inline]
pub fn cast_usize<R: Real>(n: usize) -> R {
    R::from_usize(n).expect("usize not representable in scalar type")
}

/// i (the imaginary unit).
#[inline]
pub fn im<R: Real>() -> Cx<R> {
    Cx::new(R::zero(), R::one())
}

/// Real number promoted to complex.
#[inline]
pub fn re<R: Real>(x: R) -> Cx<R> {
    Cx::new(x, R::zero())
}
