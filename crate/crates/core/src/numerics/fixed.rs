use super::Rational;
use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use std::cmp::Ordering;
use std::fmt;

/// Fractional bits of every [`Fixed`] value.
pub const FRAC_BITS: u32 = 256;

/// Relative inflation applied to every propagated error bound so that the
/// `f64` bookkeeping itself never under-reports.
const ERR_SLACK: f64 = 1.0 + 1e-12;

/// Binary fixed point `mant / 2^FRAC_BITS` together with an upper bound on the
/// distance to the true value, measured in units of the last place.
#[derive(Clone, PartialEq)]
pub struct Fixed {
    pub mant: BigInt,
    pub err: f64,
}

impl fmt::Debug for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.20e}±{:.1e}ulp", self.to_f64(), self.err)
    }
}

fn shifted_err(mag: &BigInt, err: f64) -> f64 {
    // |mag| * err / 2^P, rounded up
    if err == 0.0 || mag.is_zero() {
        return 0.0;
    }
    let bits = mag.bits() as i64 - FRAC_BITS as i64;
    let lead = mag.abs().to_f64().unwrap_or(f64::INFINITY);
    let scaled = if bits > 900 || lead.is_infinite() {
        f64::INFINITY
    } else {
        lead * 2f64.powi(-(FRAC_BITS as i32))
    };
    (scaled * err * ERR_SLACK).ceil()
}

impl Fixed {
    pub fn zero() -> Self {
        Fixed { mant: BigInt::zero(), err: 0.0 }
    }

    pub fn one() -> Self {
        Fixed { mant: BigInt::from(1) << FRAC_BITS, err: 0.0 }
    }

    pub fn from_int(n: &BigInt) -> Self {
        Fixed { mant: n << FRAC_BITS, err: 0.0 }
    }

    pub fn from_rational(r: &Rational) -> Self {
        let num = r.numer() << FRAC_BITS;
        let (q, rem) = (num.clone() / r.denom(), num % r.denom());
        let q = if rem.is_negative() { q - 1 } else { q };
        Fixed { mant: q, err: if rem.is_zero() { 0.0 } else { 1.0 } }
    }

    /// `a^(1/p)` for a positive integer `a`, correct to one ulp.
    pub fn integer_root(a: &BigInt, p: u32) -> Self {
        let scaled: BigInt = a << (FRAC_BITS * p);
        let mant = scaled.nth_root(p);
        let exact = mant.pow(p) == scaled;
        Fixed { mant, err: if exact { 0.0 } else { 1.0 } }
    }

    pub fn add(&self, o: &Fixed) -> Fixed {
        Fixed { mant: &self.mant + &o.mant, err: (self.err + o.err) * ERR_SLACK }
    }

    pub fn sub(&self, o: &Fixed) -> Fixed {
        Fixed { mant: &self.mant - &o.mant, err: (self.err + o.err) * ERR_SLACK }
    }

    pub fn neg(&self) -> Fixed {
        Fixed { mant: -&self.mant, err: self.err }
    }

    pub fn mul(&self, o: &Fixed) -> Fixed {
        let prod = &self.mant * &o.mant;
        let exact = prod.trailing_zeros().map_or(true, |z| z >= FRAC_BITS as u64);
        let mant = prod >> FRAC_BITS;
        let cross = shifted_err(&self.mant, o.err) + shifted_err(&o.mant, self.err);
        let both = (self.err * o.err * 2f64.powi(-(FRAC_BITS as i32))).ceil();
        let round = if exact { 0.0 } else { 1.0 };
        Fixed { mant, err: (cross + both + round) * ERR_SLACK }
    }

    pub fn mul_int(&self, k: &BigInt) -> Fixed {
        let kf = k.abs().to_f64().unwrap_or(f64::INFINITY);
        Fixed { mant: &self.mant * k, err: self.err * kf * ERR_SLACK }
    }

    pub fn mul_rational(&self, r: &Rational) -> Fixed {
        let num = &self.mant * r.numer();
        let q = num.clone() / r.denom();
        let exact = (num % r.denom()).is_zero();
        let q = if !exact && self.mant.sign() != r.numer().sign() { q - 1 } else { q };
        let factor = (r.numer().abs().to_f64().unwrap_or(f64::INFINITY))
            / r.denom().to_f64().unwrap_or(f64::INFINITY);
        let err = self.err * factor * ERR_SLACK + if exact { 0.0 } else { 1.0 };
        Fixed { mant: q, err }
    }

    /// Non-negative square root; `None` if the value is certainly negative.
    pub fn sqrt(&self) -> Option<Fixed> {
        if self.mant.is_zero() && self.err == 0.0 {
            return Some(Fixed::zero());
        }
        let hi = self.upper_mant();
        if hi.is_negative() {
            return None;
        }
        let m = if self.mant.is_negative() { BigInt::zero() } else { self.mant.clone() };
        let root = (&m << FRAC_BITS).sqrt();
        let lo = self.lower_mant();
        let lo_val = if lo.is_positive() { lo.to_f64().unwrap_or(f64::INFINITY) } else { 0.0 };
        let ulp = 2f64.powi(-(FRAC_BITS as i32));
        let err = if lo_val > 0.0 && lo_val.is_finite() {
            // |sqrt(a) - sqrt(b)| <= |a - b| / (2 sqrt(min))
            let s = (lo_val * ulp).sqrt();
            (self.err * ulp) / (2.0 * s) / ulp
        } else {
            // near zero: |sqrt(a) - sqrt(b)| <= sqrt(|a - b|)
            (self.err * 2.0 * ulp).sqrt() / ulp
        };
        Some(Fixed { mant: root, err: (err + 1.0) * 1.01 })
    }

    fn err_big(&self) -> BigInt {
        if self.err.is_finite() {
            BigInt::from(self.err.ceil() as u128)
        } else {
            BigInt::from(1) << (FRAC_BITS + 4096)
        }
    }

    pub fn lower_mant(&self) -> BigInt {
        &self.mant - self.err_big()
    }

    pub fn upper_mant(&self) -> BigInt {
        &self.mant + self.err_big()
    }

    pub fn to_f64(&self) -> f64 {
        let shift = self.mant.bits() as i64 - 60;
        if shift > 0 {
            let top = (&self.mant >> shift as usize).to_f64().unwrap();
            top * 2f64.powi(shift as i32 - FRAC_BITS as i32)
        } else {
            self.mant.to_f64().unwrap() * 2f64.powi(-(FRAC_BITS as i32))
        }
    }

    /// True iff the true values are certainly within `eps` of each other.
    pub fn certified_close(&self, o: &Fixed, eps: &Rational) -> bool {
        let diff = (&self.mant - &o.mant).abs() + self.err_big() + o.err_big();
        Fixed::from_rational(eps).mant >= diff
    }

    /// True iff the true value certainly lies in `[lo, hi]`.
    pub fn certified_in(&self, lo: &Rational, hi: &Rational) -> bool {
        self.lower_mant() >= Fixed::from_rational(lo).upper_mant()
            && self.upper_mant() <= Fixed::from_rational(hi).lower_mant()
    }

    /// Compares approximations; only meaningful when the error bounds are
    /// disjoint, which callers check with [`Fixed::certified_close`].
    pub fn cmp_approx(&self, o: &Fixed) -> Ordering {
        self.mant.cmp(&o.mant)
    }

    pub fn is_certainly_zero(&self) -> bool {
        self.mant.is_zero() && self.err == 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rat;

    #[test]
    fn sqrt_two_squared() {
        let two = Fixed::from_int(&BigInt::from(2));
        let s = two.sqrt().unwrap();
        let sq = s.mul(&s);
        assert!(sq.certified_close(&two, &Rational::new(1.into(), BigInt::from(10).pow(60))));
        assert!((s.to_f64() - std::f64::consts::SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn integer_root_cube() {
        let r = Fixed::integer_root(&BigInt::from(2), 3);
        let c = r.mul(&r).mul(&r);
        assert!(c.certified_close(&Fixed::from_int(&2.into()), &rat(1, 1_000_000_000_000)));
    }

    #[test]
    fn rational_conversion_floor() {
        let f = Fixed::from_rational(&rat(-1, 3));
        assert!(f.certified_in(&rat(-1, 2), &rat(-1, 4)));
        assert!((f.to_f64() + 1.0 / 3.0).abs() < 1e-15);
    }
}
