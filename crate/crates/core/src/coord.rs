//! Scalar types for torus coordinates: `f64` for numerics, `Exact` for
//! identity checks on rational sample points.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};

use crate::schedule::{rational_to_f64, Rational};

/// Fixed-width exact rational. Dyadic points with denominators up to `2^60`
/// and every schedule time used by the library fit comfortably.
pub type Exact = Ratio<i128>;

pub trait Coord:
    Copy
    + Debug
    + PartialOrd
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    const EXACT: bool;

    fn from_i64(v: i64) -> Self;
    fn from_ratio(n: i64, d: i64) -> Self;
    fn from_exact(v: &Exact) -> Self;
    fn from_rational(r: &Rational) -> Self;
    fn floor_i64(&self) -> i64;
    fn to_f64(&self) -> f64;

    fn zero() -> Self {
        Self::from_i64(0)
    }

    fn one() -> Self {
        Self::from_i64(1)
    }

    fn pow2(e: i32) -> Self {
        if e >= 0 {
            Self::from_i64(1i64 << e)
        } else {
            Self::one() / Self::from_i64(1i64 << (-e))
        }
    }

    fn abs(self) -> Self {
        if self < Self::zero() {
            -self
        } else {
            self
        }
    }

    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }

    /// Representative in `[0, 1)`.
    fn frac(self) -> Self {
        self - Self::from_i64(self.floor_i64())
    }
}

impl Coord for f64 {
    const EXACT: bool = false;

    fn from_i64(v: i64) -> Self {
        v as f64
    }
    fn from_ratio(n: i64, d: i64) -> Self {
        n as f64 / d as f64
    }
    fn from_exact(v: &Exact) -> Self {
        *v.numer() as f64 / *v.denom() as f64
    }
    fn from_rational(r: &Rational) -> Self {
        rational_f64(r)
    }
    fn floor_i64(&self) -> i64 {
        self.floor() as i64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn frac(self) -> Self {
        let r = self - self.floor();
        if r >= 1.0 {
            0.0
        } else {
            r
        }
    }
}

impl Coord for Exact {
    const EXACT: bool = true;

    fn from_i64(v: i64) -> Self {
        Exact::from_integer(v as i128)
    }
    fn from_ratio(n: i64, d: i64) -> Self {
        Exact::new(n as i128, d as i128)
    }
    fn from_exact(v: &Exact) -> Self {
        *v
    }
    fn from_rational(r: &Rational) -> Self {
        exact_from_rational(r)
            .unwrap_or_else(|| panic!("{r} does not fit the exact coordinate type"))
    }
    fn floor_i64(&self) -> i64 {
        self.floor().to_integer() as i64
    }
    fn to_f64(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}

/// Narrow a big rational to `Exact`; `None` when it does not fit.
pub fn exact_from_rational(r: &Rational) -> Option<Exact> {
    Some(Exact::new(r.numer().to_i128()?, r.denom().to_i128()?))
}

pub fn rational_from_exact(e: &Exact) -> Rational {
    Rational::new(BigInt::from(*e.numer()), BigInt::from(*e.denom()))
}

pub fn rational_f64(r: &Rational) -> f64 {
    if r.is_zero() {
        0.0
    } else {
        rational_to_f64(r)
    }
}
