use super::{format_rational, Rational};
use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupError {
    #[error("cannot combine elements of {0} and {1}")]
    Mismatch(Group, Group),
    #[error("multiplicative carrier requires a positive rational, got {0}")]
    NonPositive(String),
    #[error("modulus must be at least 2")]
    BadModulus,
}

/// The abelian groups the midpoint code is instantiated over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    AddQ,
    MulQ,
    ModP(u64),
    Int,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::AddQ => write!(f, "(Q,+)"),
            Group::MulQ => write!(f, "(Q>0,*)"),
            Group::ModP(p) => write!(f, "Z/{p}"),
            Group::Int => write!(f, "(Z,+)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum GroupElement {
    AddQ(Rational),
    MulQ(Rational),
    ModP { p: u64, v: u64 },
    Int(BigInt),
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupElement::AddQ(r) | GroupElement::MulQ(r) => f.write_str(&format_rational(r)),
            GroupElement::ModP { v, .. } => write!(f, "{v}"),
            GroupElement::Int(n) => write!(f, "{n}"),
        }
    }
}

impl Group {
    pub fn identity(&self) -> GroupElement {
        match *self {
            Group::AddQ => GroupElement::AddQ(Rational::zero()),
            Group::MulQ => GroupElement::MulQ(Rational::one()),
            Group::ModP(p) => GroupElement::ModP { p, v: 0 },
            Group::Int => GroupElement::Int(BigInt::zero()),
        }
    }

    /// Embeds an integer through the canonical map `Z -> G` for the additive
    /// groups; for the multiplicative group, `n` must be positive and is used
    /// as the rational value itself.
    pub fn element_from_int(&self, n: i64) -> Result<GroupElement, GroupError> {
        match *self {
            Group::AddQ => Ok(GroupElement::AddQ(Rational::from_integer(n.into()))),
            Group::MulQ => self.element(Rational::from_integer(n.into())),
            Group::ModP(p) => Ok(GroupElement::ModP { p, v: n.rem_euclid(p as i64) as u64 }),
            Group::Int => Ok(GroupElement::Int(n.into())),
        }
    }

    /// Builds an element from a rational payload, validating the carrier.
    pub fn element(&self, r: Rational) -> Result<GroupElement, GroupError> {
        match *self {
            Group::AddQ => Ok(GroupElement::AddQ(r)),
            Group::MulQ => {
                if r.is_positive() {
                    Ok(GroupElement::MulQ(r))
                } else {
                    Err(GroupError::NonPositive(format_rational(&r)))
                }
            }
            Group::ModP(p) => {
                if p < 2 {
                    return Err(GroupError::BadModulus);
                }
                let pb = BigInt::from(p);
                let num = r.numer().mod_floor(&pb);
                let den = r.denom().mod_floor(&pb);
                let inv = mod_inverse(&den, &pb).ok_or(GroupError::BadModulus)?;
                let v = (num * inv).mod_floor(&pb);
                Ok(GroupElement::ModP { p, v: v.to_u64().unwrap() })
            }
            Group::Int => Ok(GroupElement::Int(r.to_integer())),
        }
    }

    pub fn combine(&self, a: &GroupElement, b: &GroupElement) -> Result<GroupElement, GroupError> {
        self.check(a)?;
        self.check(b)?;
        group_combine(a, b)
    }

    fn check(&self, a: &GroupElement) -> Result<(), GroupError> {
        if a.group() == *self {
            Ok(())
        } else {
            Err(GroupError::Mismatch(*self, a.group()))
        }
    }
}

fn mod_inverse(a: &BigInt, m: &BigInt) -> Option<BigInt> {
    let e = a.extended_gcd(m);
    if e.gcd.is_one() {
        Some(e.x.mod_floor(m))
    } else {
        None
    }
}

impl GroupElement {
    pub fn group(&self) -> Group {
        match self {
            GroupElement::AddQ(_) => Group::AddQ,
            GroupElement::MulQ(_) => Group::MulQ,
            GroupElement::ModP { p, .. } => Group::ModP(*p),
            GroupElement::Int(_) => Group::Int,
        }
    }

    pub fn inverse(&self) -> GroupElement {
        match self {
            GroupElement::AddQ(r) => GroupElement::AddQ(-r),
            GroupElement::MulQ(r) => GroupElement::MulQ(r.recip()),
            GroupElement::ModP { p, v } => GroupElement::ModP { p: *p, v: (p - v) % p },
            GroupElement::Int(n) => GroupElement::Int(-n),
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == self.group().identity()
    }

    /// The rational payload, for the two rational carriers.
    pub fn as_rational(&self) -> Option<&Rational> {
        match self {
            GroupElement::AddQ(r) | GroupElement::MulQ(r) => Some(r),
            _ => None,
        }
    }
}

/// `a ∘ b`, exact.
pub fn group_combine(a: &GroupElement, b: &GroupElement) -> Result<GroupElement, GroupError> {
    use GroupElement::*;
    match (a, b) {
        (AddQ(x), AddQ(y)) => Ok(AddQ(x + y)),
        (MulQ(x), MulQ(y)) => Ok(MulQ(x * y)),
        (ModP { p, v }, ModP { p: p2, v: w }) if p == p2 => {
            Ok(ModP { p: *p, v: ((*v as u128 + *w as u128) % *p as u128) as u64 })
        }
        (Int(x), Int(y)) => Ok(Int(x + y)),
        _ => Err(GroupError::Mismatch(a.group(), b.group())),
    }
}

/// The Z-linear action `d·a`; negative `d` goes through the inverse.
pub fn integer_multiple(d: &BigInt, a: &GroupElement) -> GroupElement {
    use GroupElement::*;
    match a {
        AddQ(x) => AddQ(x * Rational::from_integer(d.clone())),
        MulQ(x) => {
            let base = if d.sign() == Sign::Minus { x.recip() } else { x.clone() };
            MulQ(rational_pow(&base, &d.magnitude().clone().into()))
        }
        ModP { p, v } => {
            let pb = BigInt::from(*p);
            let k = d.mod_floor(&pb).to_u64().unwrap();
            ModP { p: *p, v: ((k as u128 * *v as u128) % *p as u128) as u64 }
        }
        Int(x) => Int(x * d),
    }
}

fn rational_pow(base: &Rational, e: &BigInt) -> Rational {
    let mut acc = Rational::one();
    let mut sq = base.clone();
    let mut e = e.clone();
    let two = BigInt::from(2);
    while e.is_positive() {
        if e.is_odd() {
            acc *= &sq;
        }
        e /= &two;
        if e.is_positive() {
            sq = &sq * &sq;
        }
    }
    acc
}
