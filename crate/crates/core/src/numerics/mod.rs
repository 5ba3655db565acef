//! Exact scalars, abelian groups and the two auxiliary number types used for
//! irrational witnesses: [`Surd`] (exact sums of square roots) and [`Fixed`]
//! (binary fixed point with a tracked error bound).

mod fixed;
mod groups;
mod surd;
pub mod series;

pub use fixed::{Fixed, FRAC_BITS};
pub use groups::{group_combine, integer_multiple, Group, GroupElement, GroupError};
pub use surd::Surd;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use std::str::FromStr;
use thiserror::Error;

pub type Rational = BigRational;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed rational literal {0:?}")]
pub struct ParseRationalError(pub String);

/// Parses `"p/q"` or `"p"`; the result is in lowest terms.
pub fn parse_rational(s: &str) -> Result<Rational, ParseRationalError> {
    let t = s.trim();
    let bad = || ParseRationalError(s.to_string());
    match t.split_once('/') {
        Some((p, q)) => {
            let p = BigInt::from_str(p.trim()).map_err(|_| bad())?;
            let q = BigInt::from_str(q.trim()).map_err(|_| bad())?;
            if q.is_zero() {
                return Err(bad());
            }
            Ok(Rational::new(p, q))
        }
        None => Ok(Rational::from_integer(BigInt::from_str(t).map_err(|_| bad())?)),
    }
}

/// Canonical text form: `"p"` for integers, `"p/q"` otherwise.
pub fn format_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn ser_rational<S: serde::Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format_rational(r))
}

pub fn ser_rationals<S: serde::Serializer>(v: &[Rational], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(format_rational))
}

pub fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Membership in the closed box `[1/2, 2]`.
pub fn in_unit_range(r: &Rational) -> bool {
    *r >= rat(1, 2) && *r <= int(2)
}

/// Lossy conversion for display and reporting only.
pub fn to_f64(r: &Rational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or_else(|| {
        let neg = r.is_negative();
        let v = (r.numer().bits() as f64) - (r.denom().bits() as f64);
        let m = 2f64.powf(v);
        if neg {
            -m
        } else {
            m
        }
    })
}

/// Arithmetic shared by the exact witness types, so gadget witnesses can be
/// computed once and evaluated either exactly or as truncated series.
pub trait RingValue: Clone + std::fmt::Debug {
    fn from_rational(r: &Rational) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    /// Non-negative square root, if it exists in the carrier.
    fn sqrt(&self) -> Option<Self>;
    fn recip(&self) -> Option<Self>;

    fn from_int(n: i64) -> Self {
        Self::from_rational(&int(n))
    }
    fn scale(&self, r: &Rational) -> Self {
        self.mul(&Self::from_rational(r))
    }
}

impl RingValue for Rational {
    fn from_rational(r: &Rational) -> Self {
        r.clone()
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn sqrt(&self) -> Option<Self> {
        rational_sqrt(self)
    }
    fn recip(&self) -> Option<Self> {
        if self.is_zero() {
            None
        } else {
            Some(Rational::recip(self))
        }
    }
}

/// Exact square root of a non-negative rational, when it is rational.
pub fn rational_sqrt(r: &Rational) -> Option<Rational> {
    if r.is_negative() {
        return None;
    }
    let n = r.numer().sqrt();
    let d = r.denom().sqrt();
    if &(&n * &n) == r.numer() && &(&d * &d) == r.denom() {
        Some(Rational::new(n, d))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_round_trip() {
        for s in ["0", "-3", "1/2", "-7/64", "123456789012345678901234567891/1000"] {
            assert_eq!(format_rational(&parse_rational(s).unwrap()), s);
        }
        assert_eq!(format_rational(&parse_rational("4/8").unwrap()), "1/2");
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("x").is_err());
    }

    #[test]
    fn rational_sqrt_exactness() {
        assert_eq!(rational_sqrt(&rat(9, 4)), Some(rat(3, 2)));
        assert_eq!(rational_sqrt(&rat(1, 2)), None);
        assert_eq!(rational_sqrt(&rat(-1, 4)), None);
    }
}
