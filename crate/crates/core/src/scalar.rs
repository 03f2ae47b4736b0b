//! Numeric abstraction shared by the score matrix, the aligner and the
//! reference aggregation.
//!
//! Everything that only needs ordered field arithmetic is written against
//! [`Scalar`], so the same code runs on `f32`, `f64`, or exact rationals.
//! The exact instantiation is what the brute-force oracles in the test suite
//! compare against without any rounding slack.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// An ordered field element usable as an alignment or metric score.
pub trait Scalar:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    /// `false` for NaN and infinities. Exact types are always finite.
    fn is_finite_value(self) -> bool;

    /// `n` as a scalar, used for averaging.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Lossy conversion used for reporting.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f64 {
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for Ratio<i64> {
    fn is_finite_value(self) -> bool {
        true
    }
}

impl Scalar for Ratio<i32> {
    fn is_finite_value(self) -> bool {
        true
    }
}

/// Sum that does not depend on the order of `values`.
///
/// Terms are sorted before accumulation, so any permutation of the same
/// multiset produces a bit-identical result for floating point types.
pub fn order_independent_sum<T: Scalar>(values: &[T]) -> T {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    sorted.into_iter().fold(T::zero(), |acc, v| acc + v)
}

/// Arithmetic mean of `values` with [`order_independent_sum`]. `None` when empty.
pub fn order_independent_mean<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    Some(order_independent_sum(values) / T::from_count(values.len()))
}
