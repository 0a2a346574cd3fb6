//! Scalar abstraction for the numeric kernels.
//!
//! Everything numeric (embeddings, similarity search, classifier weights,
//! degradation metrics) is generic over [`Scalar`] so the same code runs in
//! f32 or f64. The pipeline instantiates f64 through the aliases at the
//! crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum<Self>
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from f64 used when statistics computed in
    /// double precision (counts, idf, RNG draws) enter the generic kernels.
    fn from_f64_lossy(value: f64) -> Self {
        Self::from_f64(value).expect("f64 conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("conversion to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Logistic sigmoid, computed in a branch that avoids overflow for large
/// negative inputs.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// ln(sigmoid(x)) without intermediate underflow.
pub fn log_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        -(T::one() + (-x).exp()).ln()
    } else {
        x - (T::one() + x.exp()).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert_eq!(sigmoid(0.0f32), 0.5);
    }

    #[test]
    fn sigmoid_extremes_stay_finite() {
        assert!(sigmoid(1000.0f64) <= 1.0);
        assert!(sigmoid(-1000.0f64) >= 0.0);
        assert!(log_sigmoid(-1000.0f64).is_finite());
        assert!(log_sigmoid(50.0f64) <= 0.0);
    }

    #[test]
    fn log_sigmoid_matches_direct_form_in_safe_range() {
        for i in -40..=40 {
            let x = i as f64 / 4.0;
            let direct = sigmoid(x).ln();
            assert!((log_sigmoid(x) - direct).abs() < 1e-12);
        }
    }
}
