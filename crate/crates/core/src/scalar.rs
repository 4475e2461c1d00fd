//! Scalar abstraction so the simulator runs at any floating-point width.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Real scalar type the whole engine is generic over.
///
/// `f64` is the production width; `f32` is available for quick sweeps where
/// the tolerances in the test suite do not apply.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Conversion from an `f64` literal, used for constants and tolerances.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal must be representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Complex amplitude over the chosen real scalar.
pub type C<T> = Complex<T>;

/// i^1 as a complex constant.
pub fn imag_unit<T: Scalar>() -> C<T> {
    C::new(T::zero(), T::one())
}

/// e^{i phi}.
pub fn cis<T: Scalar>(phi: T) -> C<T> {
    C::new(phi.cos(), phi.sin())
}
