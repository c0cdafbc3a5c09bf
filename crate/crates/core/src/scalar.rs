//! Floating-point scalar abstraction shared by every numeric routine.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar type the library is generic over: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal or computed value into this scalar type.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every supported scalar")
    }

    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to every supported scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Standard normal CDF.
pub fn normal_cdf<T: Scalar>(z: T) -> T {
    let z = z.as_f64();
    T::of(0.5 * libm::erfc(-z / std::f64::consts::SQRT_2))
}

/// Standard normal density.
pub fn normal_pdf<T: Scalar>(z: T) -> T {
    let z = z.as_f64();
    T::of((-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt())
}

/// Logistic sigmoid, evaluated without overflow for large |z|.
pub fn logistic<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_known_points() {
        assert!((normal_cdf(0.0_f64) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959963984540054_f64) - 0.975).abs() < 1e-12);
        assert!((normal_cdf(-1.0_f32) - 0.158_655_25).abs() < 1e-6);
    }

    #[test]
    fn logistic_is_stable() {
        assert_eq!(logistic(0.0_f64), 0.5);
        assert!(logistic(800.0_f64) == 1.0);
        assert!(logistic(-800.0_f64) >= 0.0);
        assert!((logistic(0.5_f64) - 0.622_459_331_201_854_6).abs() < 1e-15);
    }
}
