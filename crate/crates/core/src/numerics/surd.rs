use super::{format_rational, int, rat, Fixed, Rational, RingValue};
use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

/// Trial division bound used when splitting off square factors.
const TRIAL_LIMIT: u64 = 1 << 16;

/// An exact element of `Q(√s1, √s2, ...)`: a finite sum of rational multiples
/// of square roots of distinct squarefree positive integers.
///
/// Canonical as long as every radicand is truly squarefree; square factors are
/// removed by trial division up to 2^16 plus a perfect-square test on the
/// cofactor, which covers every radicand this crate produces.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Surd {
    terms: BTreeMap<BigUint, Rational>,
}

impl fmt::Debug for Surd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Surd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        let mut first = true;
        for (s, c) in &self.terms {
            if !first {
                f.write_str(" + ")?;
            }
            first = false;
            if s.is_one() {
                f.write_str(&format_rational(c))?;
            } else {
                write!(f, "{}*sqrt({s})", format_rational(c))?;
            }
        }
        Ok(())
    }
}

/// Splits `n = a^2 * b` with `b` squarefree (see the caveat on [`Surd`]).
fn square_split(n: &BigUint) -> (BigUint, BigUint) {
    let mut rest = n.clone();
    let mut out = BigUint::one();
    let mut p = 2u64;
    while p <= TRIAL_LIMIT {
        let pb = BigUint::from(p);
        let p2 = &pb * &pb;
        if p2 > rest {
            break;
        }
        while (&rest % &p2).is_zero() {
            rest /= &p2;
            out *= &pb;
        }
        p += if p == 2 { 1 } else { 2 };
    }
    let r = rest.sqrt();
    if &r * &r == rest {
        out *= r;
        rest = BigUint::one();
    }
    (out, rest)
}

impl Surd {
    pub fn zero() -> Self {
        Surd::default()
    }

    pub fn one() -> Self {
        Surd::from_rational(&Rational::one())
    }

    pub fn from_rational(r: &Rational) -> Self {
        let mut terms = BTreeMap::new();
        if !r.is_zero() {
            terms.insert(BigUint::one(), r.clone());
        }
        Surd { terms }
    }

    /// `√r` for a non-negative rational `r`.
    pub fn sqrt_rational(r: &Rational) -> Option<Surd> {
        if r.is_negative() {
            return None;
        }
        if r.is_zero() {
            return Some(Surd::zero());
        }
        // √(n/d) = √(n d) / d
        let nd = (r.numer() * r.denom()).to_biguint().unwrap();
        let (a, b) = square_split(&nd);
        let coeff = Rational::new(BigInt::from(a), r.denom().clone());
        let mut terms = BTreeMap::new();
        terms.insert(b, coeff);
        Some(Surd { terms })
    }

    pub fn as_rational(&self) -> Option<Rational> {
        match self.terms.len() {
            0 => Some(Rational::zero()),
            1 => self.terms.get(&BigUint::one()).cloned(),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn radicands(&self) -> impl Iterator<Item = &BigUint> {
        self.terms.keys()
    }

    fn insert(&mut self, s: BigUint, c: Rational) {
        if c.is_zero() {
            return;
        }
        let e = self.terms.entry(s.clone()).or_insert_with(Rational::zero);
        *e += c;
        if e.is_zero() {
            self.terms.remove(&s);
        }
    }

    pub fn add(&self, o: &Surd) -> Surd {
        let mut out = self.clone();
        for (s, c) in &o.terms {
            out.insert(s.clone(), c.clone());
        }
        out
    }

    pub fn neg(&self) -> Surd {
        Surd { terms: self.terms.iter().map(|(s, c)| (s.clone(), -c)).collect() }
    }

    pub fn sub(&self, o: &Surd) -> Surd {
        self.add(&o.neg())
    }

    pub fn scale(&self, r: &Rational) -> Surd {
        if r.is_zero() {
            return Surd::zero();
        }
        Surd { terms: self.terms.iter().map(|(s, c)| (s.clone(), c * r)).collect() }
    }

    pub fn mul(&self, o: &Surd) -> Surd {
        let mut out = Surd::zero();
        for (a, ca) in &self.terms {
            for (b, cb) in &o.terms {
                // √a √b = g √(a' b'), a = g a', b = g b'
                let g = a.gcd(b);
                let rad = (a / &g) * (b / &g);
                let c = ca * cb * Rational::from_integer(BigInt::from(g));
                out.insert(rad, c);
            }
        }
        out
    }

    /// Flips the sign of every term whose radicand is divisible by `g`.
    fn conjugate(&self, g: &BigUint) -> Surd {
        Surd {
            terms: self
                .terms
                .iter()
                .map(|(s, c)| (s.clone(), if (s % g).is_zero() { -c } else { c.clone() }))
                .collect(),
        }
    }

    /// Pairwise coprime integers whose products give every radicand.
    fn coprime_base(&self) -> Vec<BigUint> {
        let mut base: Vec<BigUint> = self.terms.keys().filter(|s| !s.is_one()).cloned().collect();
        loop {
            let mut changed = false;
            'outer: for i in 0..base.len() {
                for j in (i + 1)..base.len() {
                    let g = base[i].gcd(&base[j]);
                    if !g.is_one() {
                        let a = &base[i] / &g;
                        let b = &base[j] / &g;
                        base.remove(j);
                        base.remove(i);
                        for v in [g, a, b] {
                            if !v.is_one() && !base.contains(&v) {
                                base.push(v);
                            }
                        }
                        changed = true;
                        break 'outer;
                    }
                }
            }
            if !changed {
                return base;
            }
        }
    }

    /// Multiplicative inverse, or `None` for zero.
    pub fn inv(&self) -> Option<Surd> {
        if self.is_zero() {
            return None;
        }
        let mut acc = Surd::one();
        let mut y = self.clone();
        for g in self.coprime_base() {
            let c = y.conjugate(&g);
            acc = acc.mul(&c);
            y = y.mul(&c);
        }
        let norm = y.as_rational().expect("norm of a surd is rational");
        Some(acc.scale(&norm.recip()))
    }

    /// Rigorous enclosure of the value at `bits` bits of precision.
    fn enclosure(&self, bits: u32) -> (BigInt, BigInt) {
        let mut lo = BigInt::zero();
        let mut hi = BigInt::zero();
        for (s, c) in &self.terms {
            let sc = BigInt::from(s << (2 * bits as usize));
            let r = sc.sqrt();
            let exact = &r * &r == sc;
            let (rl, rh) = if exact { (r.clone(), r) } else { (r.clone(), r + 1) };
            // c * [rl, rh], rounded outward
            let (n, d) = (c.numer(), c.denom());
            let (a, b) = if n.is_positive() { (n * rl, n * rh) } else { (n * rh, n * rl) };
            lo += a.div_floor(d);
            hi += b.div_ceil(d);
        }
        (lo, hi)
    }

    pub fn signum(&self) -> i32 {
        if self.is_zero() {
            return 0;
        }
        let mut bits = 64;
        loop {
            let (lo, hi) = self.enclosure(bits);
            if lo.is_positive() {
                return 1;
            }
            if hi.is_negative() {
                return -1;
            }
            assert!(bits < 1 << 20, "sign refinement did not converge");
            bits *= 2;
        }
    }

    pub fn cmp_value(&self, o: &Surd) -> Ordering {
        self.sub(o).signum().cmp(&0)
    }

    pub fn in_unit_range(&self) -> bool {
        self.cmp_value(&Surd::from_rational(&rat(1, 2))) != Ordering::Less
            && self.cmp_value(&Surd::from_rational(&int(2))) != Ordering::Greater
    }

    pub fn to_fixed(&self) -> Fixed {
        let mut acc = Fixed::zero();
        for (s, c) in &self.terms {
            let root = Fixed::integer_root(&BigInt::from(s.clone()), 2);
            acc = acc.add(&root.mul_rational(c));
        }
        acc
    }

    pub fn to_f64(&self) -> f64 {
        self.to_fixed().to_f64()
    }
}

impl RingValue for Surd {
    fn recip(&self) -> Option<Self> {
        self.inv()
    }
    fn from_rational(r: &Rational) -> Self {
        Surd::from_rational(r)
    }
    fn add(&self, o: &Self) -> Self {
        Surd::add(self, o)
    }
    fn sub(&self, o: &Self) -> Self {
        Surd::sub(self, o)
    }
    fn mul(&self, o: &Self) -> Self {
        Surd::mul(self, o)
    }
    fn sqrt(&self) -> Option<Self> {
        Surd::sqrt_rational(&self.as_rational()?)
    }
    fn scale(&self, r: &Rational) -> Self {
        Surd::scale(self, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(r: Rational) -> Surd {
        Surd::sqrt_rational(&r).unwrap()
    }

    #[test]
    fn square_roots_normalize() {
        assert_eq!(s(int(8)), s(int(2)).scale(&int(2)));
        assert_eq!(s(rat(1, 2)), s(int(2)).scale(&rat(1, 2)));
        assert_eq!(s(rat(9, 4)).as_rational(), Some(rat(3, 2)));
        let r2 = s(int(2));
        assert_eq!(r2.mul(&r2).as_rational(), Some(int(2)));
        let r6 = s(int(2)).mul(&s(int(3)));
        assert_eq!(r6, s(int(6)));
    }

    #[test]
    fn inverse_multi_radicand() {
        let x = Surd::one().add(&s(int(2))).add(&s(int(3)).scale(&rat(1, 3))).add(&s(int(6)));
        let y = x.inv().unwrap();
        assert_eq!(x.mul(&y), Surd::one());
    }

    #[test]
    fn signs() {
        // √2 - 7/5 > 0, √2 - 3/2 < 0
        let r2 = s(int(2));
        assert_eq!(r2.sub(&Surd::from_rational(&rat(7, 5))).signum(), 1);
        assert_eq!(r2.sub(&Surd::from_rational(&rat(3, 2))).signum(), -1);
        // √3 + √2 vs √10 (3.146 vs 3.162)
        let lhs = s(int(3)).add(&r2);
        assert_eq!(lhs.cmp_value(&s(int(10))), Ordering::Less);
    }
}
