//! Scalar abstraction shared by the forward solver and the identification
//! algebra.
//!
//! Everything numeric in the crate is generic over [`Real`]. Estimation and
//! simulation run in plain `f64`; the exact-CCP identification path runs in
//! [`QuadDouble`]. The early-period columns of the closed-form system are
//! small differences of order-one values, so with five or more states even
//! 106-bit arithmetic leaves errors far above 1e-6 in the recovered discounts.

mod matrix;
mod quad;

pub use quad::QuadDouble;
pub use matrix::{solve_upper, Mat, Qr};

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Real scalar used throughout the numerical code.
pub trait Real:
    Copy
    + Debug
    + Default
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
{
    /// Unit roundoff of the representation.
    const EPSILON: f64;
    /// Default relative singular-value threshold for rank decisions.
    const DEFAULT_RANK_TOL: f64;

    fn from_f64(value: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
}

impl Real for f64 {
    const EPSILON: f64 = f64::EPSILON;
    const DEFAULT_RANK_TOL: f64 = 1e-10;

    #[inline]
    fn from_f64(value: f64) -> Self {
        value
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Converts a nested table between scalar types.
pub fn convert2<A: Real, B: Real>(table: &[Vec<A>]) -> Vec<Vec<B>> {
    table
        .iter()
        .map(|row| row.iter().map(|v| B::from_f64(v.to_f64())).collect())
        .collect()
}

/// Lossy conversion of a rank-3 table to `f64`.
pub fn to_f64_3<R: Real>(table: &[Vec<Vec<R>>]) -> Vec<Vec<Vec<f64>>> {
    table
        .iter()
        .map(|m| m.iter().map(|row| row.iter().map(|v| v.to_f64()).collect()).collect())
        .collect()
}

/// Lossy conversion of a rank-2 table to `f64`.
pub fn to_f64_2<R: Real>(table: &[Vec<R>]) -> Vec<Vec<f64>> {
    table
        .iter()
        .map(|row| row.iter().map(|v| v.to_f64()).collect())
        .collect()
}
