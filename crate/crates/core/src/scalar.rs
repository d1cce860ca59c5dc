//! Scalar abstractions shared by the numerical modules.
//!
//! Everything that only needs elementary functions is generic over [`Scalar`]
//! (`f32` or `f64`). Code that also needs dense eigen-solvers requires
//! [`Real`], which adds `nalgebra::RealField`. Both traits expose methods with
//! the same names (`sqrt`, `exp`, ...), so inside `Real`-bounded code scalar
//! functions are called through `Float::` explicitly.

use std::fmt::{Debug, Display};

use num_complex::Complex;
use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating point type usable by the ansatz, lattice and signal modules.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal, panicking only for types that cannot
    /// represent finite `f64` values (never for `f32`/`f64`).
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Scalar that also supports nalgebra's dense decompositions.
pub trait Real: Scalar + nalgebra::RealField {}

impl Real for f32 {}
impl Real for f64 {}

/// Complex scalar with real and imaginary parts of type `T`.
pub type C<T> = Complex<T>;

#[inline]
pub(crate) fn cplx<T: Scalar>(re: T, im: T) -> C<T> {
    Complex::new(re, im)
}

#[inline]
pub(crate) fn is_finite_c<T: Scalar>(z: C<T>) -> bool {
    Float::is_finite(z.re) && Float::is_finite(z.im)
}
