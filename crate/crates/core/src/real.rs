use num_traits::{FromPrimitive, ToPrimitive};

/// Scalar type for every numeric kernel in this crate: `f32` or `f64`.
///
/// `RealField` supplies the linear algebra and transcendental functions,
/// `FromPrimitive`/`ToPrimitive` the conversions to and from literals and
/// index arithmetic.
pub trait Real: nalgebra::RealField + Copy + FromPrimitive + ToPrimitive {}

impl<T> Real for T where T: nalgebra::RealField + Copy + FromPrimitive + ToPrimitive {}

/// Converts an `f64` literal into the working scalar type.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal not representable in scalar type")
}
