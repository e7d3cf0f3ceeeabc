//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type the library computes in. Implemented for `f32` and `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from `f64`; infallible for the implemented types.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Real")
    }

    /// Widening conversion to `f64`.
    fn f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }

    /// `usize` to scalar.
    fn count(n: usize) -> Self {
        Self::of(n as f64)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Numerically stable `ln Σ exp(x_i)`.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    if m == T::infinity() {
        return m;
    }
    let s: T = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Standard normal CDF.
pub fn norm_cdf<T: Real>(x: T) -> T {
    let v = x.f64();
    if v == f64::INFINITY {
        return T::one();
    }
    if v == f64::NEG_INFINITY {
        return T::zero();
    }
    T::of(0.5 * libm::erfc(-v / std::f64::consts::SQRT_2))
}

/// Standard normal density.
pub fn norm_pdf<T: Real>(x: T) -> T {
    let v = x.f64();
    T::of((-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt())
}

/// Logistic sigmoid `1 / (1 + e^{-x})`, evaluated without overflow.
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Dot product of equal-length slices.
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Squared Euclidean distance.
pub fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_points() {
        assert_eq!(norm_cdf(0.0f64), 0.5);
        assert!((norm_cdf(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-14);
        assert!((norm_cdf(-1.96f64) - 0.024_997_895_148_220_43).abs() < 1e-14);
    }

    #[test]
    fn lse_handles_large_and_empty() {
        assert!((log_sum_exp(&[1000.0f64, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn sigmoid_is_symmetric() {
        for x in [-40.0f64, -3.0, 0.0, 0.7, 40.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }
}
