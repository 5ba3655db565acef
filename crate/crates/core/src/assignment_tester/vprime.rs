use crate::constraint_core::Constraint;
use crate::linear_test::{kernel_basis_rref, IntegerMatrix, KernelBasis};
use crate::numerics::series::QSeries;
use crate::numerics::{Rational, RingValue};
use crate::reductions::{AtomCounts, Program, ShrunkAtom, Shrinker, Step};
use num_bigint::{BigInt, BigUint};
use num_traits::{One, Zero};
use serde::Serialize;

use super::TesterError;

/// Per-atom ceilings on the shrinking tables' output.
pub const MAX_ADD_PER_ATOM: usize = 52;
pub const MAX_MUL_PER_ATOM: usize = 18;

/// The three-constraint system `V'` equivalent to `V` under `x' = q x`:
/// additive atoms (`V1`), `(1+a)(1+b) = 1+c` atoms (`V2`) and the single
/// `a = q` atom (`V3`). Variables `0..n_src` are the scaled sources.
#[derive(Debug, Clone, PartialEq)]
pub struct VPrime {
    pub source: Vec<Constraint>,
    pub n_src: usize,
    pub n_vars: usize,
    pub aq: usize,
    pub add: Vec<(usize, usize, usize)>,
    pub mul: Vec<(usize, usize, usize)>,
    pub program: Program,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VPrimeStats {
    pub n_src: usize,
    pub n_vars: usize,
    pub m: usize,
    /// `1 + 22 n_src`, the conversion count for `n_src` variables.
    pub m_formula: usize,
    pub counts: AtomCounts,
}

pub fn build_vprime(v: &[Constraint], n_src: usize) -> Result<VPrime, TesterError> {
    for c in v {
        if c.is_etrinv() {
            return Err(TesterError::NotCq(c.tag()));
        }
        if let Some(&bad) = c.vars().iter().find(|&&x| x >= n_src) {
            return Err(TesterError::VarOutOfRange { var: bad, n: n_src });
        }
    }
    let mut s = Shrinker::new(n_src);
    let aq = s.fresh();
    s.atoms.push(ShrunkAtom::IsQ(aq));
    s.program.steps.push((aq, Step::Q));
    for c in v.iter().filter(|c| **c != Constraint::Null) {
        s.table_row(c, |x| x, aq);
    }
    for x in 0..n_src {
        s.upper_bound(x, aq);
        s.lower_bound(x, aq);
    }
    let mut vp = VPrime { source: v.to_vec(), n_src, n_vars: s.n, aq, add: vec![], mul: vec![], program: s.program };
    for a in s.atoms {
        match a {
            ShrunkAtom::Add(x, y, z) => vp.add.push((x, y, z)),
            ShrunkAtom::Mul1(x, y, z) => vp.mul.push((x, y, z)),
            ShrunkAtom::IsQ(_) => {}
        }
    }
    Ok(vp)
}

impl VPrime {
    /// A hand-written system, used to exercise small configurations.
    pub fn from_atoms(
        n_src: usize,
        n_vars: usize,
        aq: usize,
        add: Vec<(usize, usize, usize)>,
        mul: Vec<(usize, usize, usize)>,
        program: Program,
    ) -> Self {
        VPrime { source: vec![], n_src, n_vars, aq, add, mul, program }
    }

    pub fn m(&self) -> usize {
        self.n_vars - self.n_src
    }

    pub fn stats(&self) -> VPrimeStats {
        VPrimeStats {
            n_src: self.n_src,
            n_vars: self.n_vars,
            m: self.m(),
            m_formula: 1 + 22 * self.n_src,
            counts: AtomCounts { q_atoms: 1, add: self.add.len(), mul: self.mul.len() },
        }
    }

    /// Full assignment from source values: `q x` on the sources, then the
    /// tables' witness program. `None` when a range square root fails.
    pub fn witness<T: RingValue>(&self, x: &[T], q: &T) -> Option<Vec<T>> {
        let mut v = vec![T::from_int(0); self.n_vars];
        for (slot, xi) in v.iter_mut().zip(x) {
            *slot = q.mul(xi);
        }
        self.program.run(&mut v, q)?;
        Some(v)
    }

    pub fn holds<T: RingValue + PartialEq>(&self, v: &[T], q: &T) -> bool {
        let one = T::from_int(1);
        v[self.aq] == *q
            && self.add.iter().all(|&(a, b, c)| v[a].add(&v[b]) == v[c])
            && self.mul.iter().all(|&(a, b, c)| one.add(&v[a]).mul(&one.add(&v[b])) == one.add(&v[c]))
    }

    /// Index of the first violated atom, for diagnostics.
    pub fn first_violation(&self, v: &[QSeries]) -> Option<String> {
        let q = QSeries::q();
        let one = QSeries::one();
        if v[self.aq] != q {
            return Some(format!("alpha_{} = q", self.aq));
        }
        if let Some((a, b, c)) = self.add.iter().find(|&&(a, b, c)| v[a].add(&v[b]) != v[c]) {
            return Some(format!("alpha_{a} + alpha_{b} = alpha_{c}"));
        }
        self.mul
            .iter()
            .find(|&&(a, b, c)| one.add(&v[a]).mul(&one.add(&v[b])) != one.add(&v[c]))
            .map(|(a, b, c)| format!("(1+alpha_{a})(1+alpha_{b}) = 1+alpha_{c}"))
    }

    /// The log-linear rows `e_a + e_b - e_c` of the multiplicative atoms.
    pub fn mul_matrix(&self) -> Option<IntegerMatrix> {
        if self.mul.is_empty() {
            return None;
        }
        let rows = self
            .mul
            .iter()
            .map(|&(a, b, c)| {
                let mut r = vec![BigInt::zero(); self.n_vars];
                r[a] += 1;
                r[b] += 1;
                r[c] -= 1;
                r
            })
            .collect();
        Some(IntegerMatrix::from_big_rows(rows, self.n_vars))
    }

    /// Kernel of the multiplicative system, with the identity basis when
    /// there are no multiplicative atoms.
    pub fn mul_kernel(&self) -> KernelBasis {
        match self.mul_matrix() {
            Some(m) => kernel_basis_rref(&m),
            None => {
                let n = self.n_vars;
                let basis = (0..n)
                    .map(|i| (0..n).map(|j| if i == j { BigInt::one() } else { BigInt::zero() }).collect())
                    .collect();
                KernelBasis { basis, denominator: BigInt::one(), pivots: (0..n).collect(), kept_rows: vec![] }
            }
        }
    }
}

/// `q = 2^-exponent`; the exponents involved are far beyond any rational
/// that could be written out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QChoice {
    #[serde(serialize_with = "ser_big")]
    pub exponent: BigUint,
    /// Each range condition with the exponent it requires.
    pub conditions: Vec<(String, String)>,
}

fn ser_big<S: serde::Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&v.to_string())
}

impl QChoice {
    /// The rational value, when the exponent is small enough to expand.
    pub fn as_rational(&self) -> Option<Rational> {
        let e: u32 = self.exponent.clone().try_into().ok().filter(|&e: &u32| e <= 1 << 16)?;
        Some(Rational::new(BigInt::one(), BigInt::one() << e))
    }

    pub fn satisfies_six_q(&self) -> bool {
        // 6 q <= 1/2  iff  q <= 1/12  iff  e >= 4
        self.exponent >= BigUint::from(4u32)
    }
}

fn ceil_log2(x: &BigUint) -> BigUint {
    if x <= &BigUint::one() {
        return BigUint::zero();
    }
    let b = x.bits();
    let pow = BigUint::one() << (b - 1);
    BigUint::from(if &pow == x { b - 1 } else { b })
}

/// Upper bound on the auxiliary count for `n_src` source variables.
pub fn m_bound(n_src: usize) -> usize {
    1 + 22 * n_src
}

/// `q` for a `2n`-variable input, with `N = 2n + m_bound(2n)`.
pub fn select_q(n: usize) -> QChoice {
    let n = n.max(1);
    select_q_for(n, 2 * n + m_bound(2 * n))
}

/// The largest power of two meeting every range condition for an input of
/// `n` coordinates per codeword and a `V'` with `n_vars` variables.
pub fn select_q_for(n: usize, n_vars: usize) -> QChoice {
    let big = |x: u64| BigUint::from(x);
    let nn = n_vars as u64;
    let n = n as u64;
    let mut conds: Vec<(String, BigUint)> = vec![];
    // q <= 1/(3n+1) < log 2 / (2n)
    conds.push(("codeword range q < log2/(2n)".into(), ceil_log2(&big(3 * n + 1))));
    // 6 q N <= 1/2 keeps every u in [1/2, 2]
    conds.push(("u range 6qN <= 1/2".into(), ceil_log2(&big(12 * nn))));
    // (1+2q)^(512 n^3) <= 2 via 2q 512 n^3 <= 1/2
    conds.push(("L range".into(), ceil_log2(&(big(2048) * big(n).pow(3)))));
    let a1 = big(6144) * big(nn).pow(4) * BigUint::from(3u32).pow((nn - 1) as u32);
    conds.push(("A1 range 6q 512 N^4 3^(N-1) <= 1/2".into(), ceil_log2(&a1)));
    // d2 512 2^(2N) 4^(2^N-1) ((1+6q)^N-1) <= 1/2 with d2 <= 2^N, (1+6q)^N-1 <= 12qN
    let a2 = big(3 * nn + 7) + (BigUint::one() << (nn + 1)) + ceil_log2(&big(24 * nn));
    conds.push(("A2 range".into(), a2));
    conds.push(("6q <= 1/2".into(), big(4)));
    let exponent = conds.iter().map(|(_, e)| e.clone()).max().unwrap();
    QChoice { exponent, conditions: conds.into_iter().map(|(k, e)| (k, e.to_string())).collect() }
}
