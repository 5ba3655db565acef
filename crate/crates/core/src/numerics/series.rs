//! Truncated power series in an infinitesimal `q`: `c0 + c1 q + c2 q^2`,
//! computed modulo `q^3` with certified fixed-point coefficients.
//!
//! Truncation is a ring homomorphism, so any polynomial identity between
//! honest values survives it exactly (up to coefficient rounding), and order
//! comparisons are lexicographic, which is exact for small enough `q`.

use super::{Fixed, Rational, RingValue};
use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive};
use std::cmp::Ordering;
use std::sync::OnceLock;

pub const ORDER: usize = 2;

/// Two coefficients are treated as equal when certified within `2^-128`.
pub fn eps_num() -> &'static Rational {
    static E: OnceLock<Rational> = OnceLock::new();
    E.get_or_init(|| Rational::new(1.into(), BigInt::from(1) << 128))
}

fn eps_mant() -> &'static BigInt {
    static M: OnceLock<BigInt> = OnceLock::new();
    M.get_or_init(|| Fixed::from_rational(eps_num()).mant)
}

fn close(a: &Fixed, b: &Fixed) -> bool {
    let diff = (&a.mant - &b.mant).abs();
    let slack = a.err.ceil() + b.err.ceil();
    if !slack.is_finite() {
        return false;
    }
    diff + BigInt::from(slack as u128) <= *eps_mant()
}

#[derive(Clone, Debug)]
pub struct QSeries {
    pub c: [Fixed; ORDER + 1],
}

impl QSeries {
    pub fn zero() -> Self {
        QSeries { c: [Fixed::zero(), Fixed::zero(), Fixed::zero()] }
    }

    pub fn one() -> Self {
        Self::constant(Fixed::one())
    }

    pub fn constant(f: Fixed) -> Self {
        QSeries { c: [f, Fixed::zero(), Fixed::zero()] }
    }

    /// The indeterminate `q` itself.
    pub fn q() -> Self {
        QSeries { c: [Fixed::zero(), Fixed::one(), Fixed::zero()] }
    }

    pub fn from_coeffs(c0: &Rational, c1: &Rational, c2: &Rational) -> Self {
        QSeries { c: [Fixed::from_rational(c0), Fixed::from_rational(c1), Fixed::from_rational(c2)] }
    }

    pub fn coeff_is_zero(&self, i: usize) -> bool {
        close(&self.c[i], &Fixed::zero())
    }

    /// Index of the first coefficient not certified zero.
    pub fn valuation(&self) -> Option<usize> {
        (0..=ORDER).find(|&i| !self.coeff_is_zero(i))
    }

    pub fn certified_eq(&self, o: &QSeries) -> bool {
        (0..=ORDER).all(|i| close(&self.c[i], &o.c[i]))
    }

    pub fn mul_int(&self, k: &BigInt) -> QSeries {
        QSeries { c: [self.c[0].mul_int(k), self.c[1].mul_int(k), self.c[2].mul_int(k)] }
    }

    pub fn mul_rational(&self, r: &Rational) -> QSeries {
        QSeries { c: [self.c[0].mul_rational(r), self.c[1].mul_rational(r), self.c[2].mul_rational(r)] }
    }

    /// `exp(s)` for `s` with zero constant term.
    pub fn exp_small(&self) -> QSeries {
        debug_assert!(self.coeff_is_zero(0));
        // 1 + s + s^2/2 with s = c1 q + c2 q^2
        let half_sq = self.c[1].mul(&self.c[1]).mul_rational(&Rational::new(1.into(), 2.into()));
        QSeries { c: [Fixed::one(), self.c[1].clone(), self.c[2].add(&half_sq)] }
    }

    /// `log(v)` for `v` with constant term 1.
    pub fn log_near_one(&self) -> QSeries {
        debug_assert!(close(&self.c[0], &Fixed::one()));
        // s - s^2/2 with s = v - 1
        let half_sq = self.c[1].mul(&self.c[1]).mul_rational(&Rational::new(1.into(), 2.into()));
        QSeries { c: [Fixed::zero(), self.c[1].clone(), self.c[2].sub(&half_sq)] }
    }

    /// Lexicographic sign, `None` when every coefficient is certified zero.
    pub fn sign(&self) -> Option<Ordering> {
        let v = self.valuation()?;
        Some(if self.c[v].mant.is_positive() { Ordering::Greater } else { Ordering::Less })
    }

    /// Membership in `[1/2, 2]` for infinitesimal `q`.
    pub fn in_unit_range(&self) -> bool {
        let lo = self.sub(&QSeries::from_rational(&Rational::new(1.into(), 2.into())));
        let hi = QSeries::from_int(2).sub(self);
        lo.sign() != Some(Ordering::Less) && hi.sign() != Some(Ordering::Less)
    }

    pub fn to_f64_coeffs(&self) -> [f64; ORDER + 1] {
        [self.c[0].to_f64(), self.c[1].to_f64(), self.c[2].to_f64()]
    }
}

impl PartialEq for QSeries {
    fn eq(&self, o: &Self) -> bool {
        self.certified_eq(o)
    }
}

impl RingValue for QSeries {
    fn from_rational(r: &Rational) -> Self {
        QSeries::constant(Fixed::from_rational(r))
    }
    fn add(&self, o: &Self) -> Self {
        QSeries { c: [self.c[0].add(&o.c[0]), self.c[1].add(&o.c[1]), self.c[2].add(&o.c[2])] }
    }
    fn sub(&self, o: &Self) -> Self {
        QSeries { c: [self.c[0].sub(&o.c[0]), self.c[1].sub(&o.c[1]), self.c[2].sub(&o.c[2])] }
    }
    fn mul(&self, o: &Self) -> Self {
        let (a, b) = (&self.c, &o.c);
        QSeries {
            c: [
                a[0].mul(&b[0]),
                a[0].mul(&b[1]).add(&a[1].mul(&b[0])),
                a[0].mul(&b[2]).add(&a[1].mul(&b[1])).add(&a[2].mul(&b[0])),
            ],
        }
    }
    /// Square root in the truncated ring: `s` with `s^2 = self` modulo `q^3`.
    fn sqrt(&self) -> Option<Self> {
        match self.valuation() {
            None => Some(QSeries::zero()),
            Some(0) => {
                if self.c[0].mant.is_negative() {
                    return None;
                }
                let s0 = self.c[0].sqrt()?;
                let inv2s0 = QSeries::constant(s0.clone()).recip()?.c[0].mul_rational(&Rational::new(1.into(), 2.into()));
                let s1 = self.c[1].mul(&inv2s0);
                let s2 = self.c[2].sub(&s1.mul(&s1)).mul(&inv2s0);
                Some(QSeries { c: [s0, s1, s2] })
            }
            Some(2) if self.c[2].mant.is_positive() => {
                Some(QSeries { c: [Fixed::zero(), self.c[2].sqrt()?, Fixed::zero()] })
            }
            _ => None,
        }
    }
    fn recip(&self) -> Option<Self> {
        if self.coeff_is_zero(0) {
            return None;
        }
        // mantissa of 1/c0 is 2^(2P) / mant; propagated error is err / c0^2
        let c0 = &self.c[0];
        let lo = c0.lower_mant();
        if lo.sign() != c0.upper_mant().sign() {
            return None;
        }
        let num = BigInt::from(1) << (2 * super::FRAC_BITS);
        let mant = &num / &c0.mant;
        let inv_f = 1.0 / lo.abs().min(c0.upper_mant().abs()).to_f64().unwrap_or(f64::INFINITY)
            * 2f64.powi(super::FRAC_BITS as i32);
        let y = Fixed { mant, err: (c0.err * inv_f * inv_f + 1.0) * 1.01 };
        let i0 = y;
        let i1 = self.c[1].mul(&i0).mul(&i0).neg();
        let i2 = self.c[1].mul(&i1).add(&self.c[2].mul(&i0)).mul(&i0).neg();
        Some(QSeries { c: [i0, i1, i2] })
    }
}

impl crate::constraint_core::Scalar for QSeries {
    fn in_box(&self) -> bool {
        self.in_unit_range()
    }
}
