//! Approximation algorithms for MAX-ETR-INV: a {1,2} assignment with an
//! exact per-constraint probability table (randomized or derandomized by
//! conditional expectations), and a 2-approximation via exact MAX-FS on the
//! affine part.

use crate::constraint_core::{evaluate, Constraint, Instance};
use crate::numerics::{int, rat, ser_rational, ser_rationals, Rational};
use crate::seeds;
use num_traits::{One, Signed, Zero};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ApproxError {
    #[error("approximation needs an ETR-INV instance")]
    NotEtrInv,
    #[error("MAX-FS search exceeded its budget of {0} nodes")]
    Budget(u64),
}

/// The split used by both algorithms: `a` holds EQ1/INV indices, `b` the
/// ADD indices, `impossible` the atoms `x + y = x` (in any orientation) and
/// `x + x = x`, which no positive value satisfies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitSystem {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub impossible: Vec<usize>,
    pub feasible: Vec<usize>,
}

pub fn is_impossible(c: &Constraint) -> bool {
    matches!(*c, Constraint::Add(x, y, z) if z == x || z == y)
}

impl SplitSystem {
    pub fn new(inst: &Instance) -> Result<SplitSystem, ApproxError> {
        if inst.is_cq() {
            return Err(ApproxError::NotEtrInv);
        }
        let mut s = SplitSystem { a: vec![], b: vec![], impossible: vec![], feasible: vec![] };
        for (i, c) in inst.constraints.iter().enumerate() {
            match c {
                Constraint::Eq1(_) | Constraint::Inv(..) => s.a.push(i),
                Constraint::Add(..) => s.b.push(i),
                _ => return Err(ApproxError::NotEtrInv),
            }
            if is_impossible(c) {
                s.impossible.push(i);
            } else {
                s.feasible.push(i);
            }
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Randomized,
    Derandomized,
    AllOnes,
    MaxFs,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApproxResult {
    #[serde(serialize_with = "ser_rational")]
    pub fraction: Rational,
    pub satisfied: usize,
    pub total: usize,
    #[serde(serialize_with = "ser_rationals")]
    pub assignment: Vec<Rational>,
    pub method: Method,
    pub seed: Option<u64>,
    /// Expected satisfied count of a uniform {1,2} assignment (approx8).
    pub expected: Option<String>,
    pub budget_exceeded: bool,
}

fn result(inst: &Instance, assignment: Vec<Rational>, method: Method, seed: Option<u64>) -> ApproxResult {
    let rep = evaluate(inst, &assignment).expect("assignment has instance length");
    ApproxResult {
        fraction: rep.fraction(),
        satisfied: rep.satisfied,
        total: rep.total,
        assignment,
        method,
        seed,
        expected: None,
        budget_exceeded: false,
    }
}

// --------------------------------------------------------------- approx8

/// Probability that `c` holds when the variables in `fixed` are set and the
/// rest are independent uniform over {1, 2}.
pub fn probability(c: &Constraint, fixed: &[Option<u8>]) -> Rational {
    let mut free: Vec<usize> = c.vars().into_iter().filter(|&v| fixed[v].is_none()).collect();
    free.sort_unstable();
    free.dedup();
    let mut hits = 0i64;
    let total = 1i64 << free.len();
    for mask in 0..total {
        let val = |v: usize| -> i64 {
            match fixed[v] {
                Some(x) => x as i64,
                None => {
                    let k = free.iter().position(|&f| f == v).unwrap();
                    1 + ((mask >> k) & 1)
                }
            }
        };
        let ok = match *c {
            Constraint::Eq1(x) => val(x) == 1,
            Constraint::Inv(x, y) => val(x) * val(y) == 1,
            Constraint::Add(x, y, z) => val(x) + val(y) == val(z),
            _ => false,
        };
        hits += ok as i64;
    }
    rat(hits, total)
}

pub fn expected_satisfied(inst: &Instance, fixed: &[Option<u8>]) -> Rational {
    inst.constraints.iter().map(|c| probability(c, fixed)).sum()
}

fn to_values(bits: &[u8]) -> Vec<Rational> {
    bits.iter().map(|&b| int(b as i64)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Approx8Mode {
    Randomized { seed: u64, trials: u64 },
    Derandomized,
}

pub fn approx8(inst: &Instance, mode: Approx8Mode) -> Result<ApproxResult, ApproxError> {
    SplitSystem::new(inst)?;
    let expected = expected_satisfied(inst, &vec![None; inst.n]);
    let mut res = match mode {
        Approx8Mode::Derandomized => {
            let mut fixed: Vec<Option<u8>> = vec![None; inst.n];
            for v in 0..inst.n {
                fixed[v] = Some(1);
                let e1 = expected_satisfied(inst, &fixed);
                fixed[v] = Some(2);
                let e2 = expected_satisfied(inst, &fixed);
                fixed[v] = Some(if e1 >= e2 { 1 } else { 2 });
            }
            let bits: Vec<u8> = fixed.into_iter().map(|b| b.unwrap()).collect();
            result(inst, to_values(&bits), Method::Derandomized, None)
        }
        Approx8Mode::Randomized { seed, trials } => {
            let mut rng = seeds::stream(seed, 8);
            let mut best: Option<ApproxResult> = None;
            for _ in 0..trials.max(1) {
                let bits: Vec<u8> = (0..inst.n).map(|_| rng.gen_range(1..=2)).collect();
                let r = result(inst, to_values(&bits), Method::Randomized, Some(seed));
                if best.as_ref().map_or(true, |b| r.satisfied > b.satisfied) {
                    best = Some(r);
                }
            }
            best.unwrap()
        }
    };
    res.expected = Some(crate::numerics::format_rational(&expected));
    Ok(res)
}

// ----------------------------------------------------------------- MAX-FS

/// One affine equation `coeffs . x = rhs`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffineEq {
    pub coeffs: Vec<Rational>,
    pub rhs: Rational,
}

impl AffineEq {
    pub fn from_atom(c: &Constraint, n: usize) -> Option<AffineEq> {
        let mut coeffs = vec![Rational::zero(); n];
        let rhs = match *c {
            Constraint::Add(x, y, z) => {
                coeffs[x] += int(1);
                coeffs[y] += int(1);
                coeffs[z] -= int(1);
                Rational::zero()
            }
            Constraint::Eq1(x) => {
                coeffs[x] = int(1);
                int(1)
            }
            _ => return None,
        };
        Some(AffineEq { coeffs, rhs })
    }
}

/// `coeffs . x <= bound`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Ineq {
    coeffs: Vec<Rational>,
    bound: Rational,
}

fn normalise(mut q: Ineq) -> Ineq {
    if let Some(lead) = q.coeffs.iter().find(|c| !c.is_zero()).map(|c| c.abs()) {
        for c in q.coeffs.iter_mut() {
            *c /= &lead;
        }
        q.bound /= &lead;
    }
    q
}

/// Interval for `x_k` implied by `ineqs`, whose other variables are all
/// already fixed in `x`.
fn interval(ineqs: &[Ineq], k: usize, x: &[Option<Rational>]) -> (Option<Rational>, Option<Rational>) {
    let (mut lo, mut hi): (Option<Rational>, Option<Rational>) = (None, None);
    for q in ineqs {
        let a = &q.coeffs[k];
        if a.is_zero() {
            continue;
        }
        let mut rest = q.bound.clone();
        for (j, c) in q.coeffs.iter().enumerate() {
            if j != k && !c.is_zero() {
                rest -= c * x[j].as_ref().expect("later variables are fixed");
            }
        }
        let v = rest / a;
        if a.is_positive() {
            hi = Some(hi.map_or(v.clone(), |h: Rational| h.min(v)));
        } else {
            lo = Some(lo.map_or(v.clone(), |l: Rational| l.max(v)));
        }
    }
    (lo, hi)
}

/// Exact feasibility of `eqs` with every variable in `[lo, hi]`, by
/// Gauss-Jordan elimination followed by Fourier-Motzkin on the free
/// variables. The witness prefers the value 1 wherever the remaining
/// constraints allow it.
pub fn feasible_point(n: usize, eqs: &[AffineEq], lo: &Rational, hi: &Rational) -> Option<Vec<Rational>> {
    // reduced row echelon form
    let mut rows: Vec<(Vec<Rational>, Rational)> = eqs.iter().map(|e| (e.coeffs.clone(), e.rhs.clone())).collect();
    let mut pivots: Vec<(usize, usize)> = vec![];
    let mut r = 0;
    for c in 0..n {
        let Some(p) = (r..rows.len()).find(|&i| !rows[i].0[c].is_zero()) else { continue };
        rows.swap(r, p);
        let inv = rows[r].0[c].recip();
        for v in rows[r].0.iter_mut() {
            *v *= &inv;
        }
        rows[r].1 *= &inv;
        let (pr, pb) = rows[r].clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if i != r && !row.0[c].is_zero() {
                let f = row.0[c].clone();
                for j in 0..n {
                    row.0[j] -= &f * &pr[j];
                }
                row.1 -= &f * &pb;
            }
        }
        pivots.push((r, c));
        r += 1;
    }
    if rows[r..].iter().any(|(_, b)| !b.is_zero()) {
        return None;
    }
    let is_pivot: Vec<bool> = (0..n).map(|c| pivots.iter().any(|&(_, pc)| pc == c)).collect();
    let free: Vec<usize> = (0..n).filter(|&c| !is_pivot[c]).collect();
    let m = free.len();
    // box constraints in terms of the free variables
    let mut ineqs: Vec<Ineq> = vec![];
    let unit = |k: usize, s: i64| {
        let mut v = vec![Rational::zero(); m];
        v[k] = int(s);
        v
    };
    for k in 0..m {
        ineqs.push(Ineq { coeffs: unit(k, 1), bound: hi.clone() });
        ineqs.push(Ineq { coeffs: unit(k, -1), bound: -lo });
    }
    for &(ri, _) in &pivots {
        // x_p = b - sum_f a_f x_f
        let a: Vec<Rational> = free.iter().map(|&f| rows[ri].0[f].clone()).collect();
        let b = &rows[ri].1;
        ineqs.push(Ineq { coeffs: a.iter().map(|v| -v).collect(), bound: hi - b });
        ineqs.push(Ineq { coeffs: a, bound: b - lo });
    }
    // Fourier-Motzkin, eliminating the last free variable first
    let mut stages: Vec<Vec<Ineq>> = vec![];
    let mut cur: Vec<Ineq> = dedup(ineqs.into_iter().map(normalise).collect());
    for k in (0..m).rev() {
        let (mut pos, mut neg, mut rest) = (vec![], vec![], vec![]);
        for q in &cur {
            let c = &q.coeffs[k];
            if c.is_positive() {
                pos.push(q.clone());
            } else if c.is_negative() {
                neg.push(q.clone());
            } else {
                rest.push(q.clone());
            }
        }
        for p in &pos {
            for q in &neg {
                let (a, b) = (p.coeffs[k].clone(), -q.coeffs[k].clone());
                let coeffs: Vec<Rational> = (0..m).map(|j| &p.coeffs[j] * &b + &q.coeffs[j] * &a).collect();
                let bound = &p.bound * &b + &q.bound * &a;
                rest.push(normalise(Ineq { coeffs, bound }));
            }
        }
        stages.push(cur);
        cur = dedup(rest);
    }
    if cur.iter().any(|q| q.bound.is_negative()) {
        return None;
    }
    // back substitution: x_0 first (its stage mentions only x_0)
    let mut xf: Vec<Option<Rational>> = vec![None; m];
    for k in 0..m {
        let stage = &stages[m - 1 - k];
        let (l, h) = interval(stage, k, &xf);
        let one = Rational::one();
        let v = match (l, h) {
            (Some(l), Some(h)) => {
                debug_assert!(l <= h);
                if l <= one && one <= h {
                    one
                } else if one < l {
                    l
                } else {
                    h
                }
            }
            (Some(l), None) => l.max(one),
            (None, Some(h)) => h.min(one),
            (None, None) => one,
        };
        xf[k] = Some(v);
    }
    let mut x = vec![Rational::zero(); n];
    for (k, &f) in free.iter().enumerate() {
        x[f] = xf[k].clone().unwrap();
    }
    for &(ri, pc) in &pivots {
        let mut v = rows[ri].1.clone();
        for &f in &free {
            v -= &rows[ri].0[f] * &x[f];
        }
        x[pc] = v;
    }
    Some(x)
}

fn dedup(mut v: Vec<Ineq>) -> Vec<Ineq> {
    let mut seen = std::collections::HashSet::new();
    v.retain(|q| {
        // drop trivially true rows
        if q.coeffs.iter().all(|c| c.is_zero()) && !q.bound.is_negative() {
            return false;
        }
        seen.insert(q.clone())
    });
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxFs {
    /// Indices into the atom list.
    pub subset: Vec<usize>,
    pub witness: Vec<Rational>,
    pub nodes: u64,
}

/// Maximum-cardinality subset of `atoms` simultaneously satisfiable with
/// every variable in `[1/2, 2]`, by depth-first include/exclude search;
/// infeasible partial subsets prune all their supersets.
pub fn maxfs_exact(atoms: &[AffineEq], n: usize, budget: u64) -> Result<MaxFs, ApproxError> {
    let (lo, hi) = (rat(1, 2), int(2));
    let base = feasible_point(n, &[], &lo, &hi).expect("empty system is feasible");
    let mut best = MaxFs { subset: vec![], witness: base, nodes: 0 };
    let mut chosen: Vec<usize> = vec![];
    let mut nodes = 0u64;
    #[allow(clippy::too_many_arguments)]
    fn go(
        i: usize,
        atoms: &[AffineEq],
        n: usize,
        chosen: &mut Vec<usize>,
        best: &mut MaxFs,
        nodes: &mut u64,
        budget: u64,
        lo: &Rational,
        hi: &Rational,
    ) -> Result<(), ApproxError> {
        if chosen.len() + (atoms.len() - i) <= best.subset.len() {
            return Ok(());
        }
        if i == atoms.len() {
            return Ok(());
        }
        *nodes += 1;
        if *nodes > budget {
            return Err(ApproxError::Budget(budget));
        }
        chosen.push(i);
        let sys: Vec<AffineEq> = chosen.iter().map(|&j| atoms[j].clone()).collect();
        if let Some(w) = feasible_point(n, &sys, lo, hi) {
            if chosen.len() > best.subset.len() {
                best.subset = chosen.clone();
                best.witness = w;
            }
            go(i + 1, atoms, n, chosen, best, nodes, budget, lo, hi)?;
        }
        chosen.pop();
        go(i + 1, atoms, n, chosen, best, nodes, budget, lo, hi)
    }
    go(0, atoms, n, &mut chosen, &mut best, &mut nodes, budget, &lo, &hi)?;
    best.nodes = nodes;
    Ok(best)
}

// --------------------------------------------------------------- approx2

/// Better of the all-ones assignment (satisfies every EQ1/INV atom) and an
/// optimal point of the ADD subsystem within the box. The MAX-FS point is
/// then extended greedily by EQ1 atoms that stay consistent with it.
pub fn approx2(inst: &Instance, maxfs_budget: u64) -> Result<ApproxResult, ApproxError> {
    let split = SplitSystem::new(inst)?;
    let ones = result(inst, vec![Rational::one(); inst.n], Method::AllOnes, None);
    let atoms: Vec<AffineEq> =
        split.b.iter().map(|&i| AffineEq::from_atom(&inst.constraints[i], inst.n).unwrap()).collect();
    let fs = match maxfs_exact(&atoms, inst.n, maxfs_budget) {
        Ok(fs) => fs,
        Err(ApproxError::Budget(_)) => {
            let mut r = ones;
            r.budget_exceeded = true;
            return Ok(r);
        }
        Err(e) => return Err(e),
    };
    let (lo, hi) = (rat(1, 2), int(2));
    let mut sys: Vec<AffineEq> = fs.subset.iter().map(|&j| atoms[j].clone()).collect();
    let mut witness = fs.witness;
    for &i in &split.a {
        if let Constraint::Eq1(_) = inst.constraints[i] {
            sys.push(AffineEq::from_atom(&inst.constraints[i], inst.n).unwrap());
            match feasible_point(inst.n, &sys, &lo, &hi) {
                Some(w) => witness = w,
                None => {
                    sys.pop();
                }
            }
        }
    }
    let cand = result(inst, witness, Method::MaxFs, None);
    Ok(if cand.satisfied > ones.satisfied { cand } else { ones })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Constraint::*;

    fn inst(n: usize, cs: Vec<Constraint>) -> Instance {
        Instance::etrinv(n, cs).unwrap()
    }

    #[test]
    fn probability_table() {
        let none = vec![None; 3];
        assert_eq!(probability(&Eq1(0), &none), rat(1, 2));
        assert_eq!(probability(&Inv(0, 1), &none), rat(1, 4));
        assert_eq!(probability(&Inv(0, 0), &none), rat(1, 2));
        assert_eq!(probability(&Add(0, 1, 2), &none), rat(1, 8));
        assert_eq!(probability(&Add(0, 0, 1), &none), rat(1, 4));
        assert_eq!(probability(&Add(0, 1, 0), &none), rat(0, 1));
        assert_eq!(probability(&Add(0, 0, 0), &none), rat(0, 1));
    }

    #[test]
    fn split_flags_impossible() {
        let s = SplitSystem::new(&inst(2, vec![Eq1(0), Add(0, 0, 0), Add(1, 0, 0), Inv(0, 1)])).unwrap();
        assert_eq!(s.a, vec![0, 3]);
        assert_eq!(s.b, vec![1, 2]);
        assert_eq!(s.impossible, vec![1, 2]);
        assert_eq!(s.feasible, vec![0, 3]);
    }

    #[test]
    fn approx8_examples() {
        let r = approx8(&inst(1, vec![Eq1(0)]), Approx8Mode::Derandomized).unwrap();
        assert_eq!(r.assignment, vec![int(1)]);
        assert_eq!(r.fraction, int(1));
        let r = approx8(&inst(1, vec![Add(0, 0, 0)]), Approx8Mode::Derandomized).unwrap();
        assert_eq!(r.fraction, int(0));
        let r = approx8(&inst(3, vec![Add(0, 1, 2)]), Approx8Mode::Derandomized).unwrap();
        assert_eq!(r.expected.as_deref(), Some("1/8"));
        assert_eq!(r.fraction, int(1));
    }

    #[test]
    fn randomized_is_reproducible() {
        let i = inst(4, vec![Add(0, 1, 2), Inv(2, 3), Eq1(1), Add(3, 3, 0)]);
        let m = Approx8Mode::Randomized { seed: 9, trials: 5 };
        assert_eq!(approx8(&i, m).unwrap(), approx8(&i, m).unwrap());
    }

    #[test]
    fn approx2_example() {
        // A = {x = 1}, B = {y + y = x}
        let i = inst(2, vec![Eq1(0), Add(1, 1, 0)]);
        let r = approx2(&i, 1000).unwrap();
        assert_eq!(r.fraction, int(1));
        assert_eq!(r.assignment, vec![int(1), rat(1, 2)]);
    }

    #[test]
    fn maxfs_examples() {
        let a = AffineEq::from_atom(&Add(0, 1, 2), 3).unwrap();
        let fs = maxfs_exact(&[a], 3, 100).unwrap();
        assert_eq!(fs.subset, vec![0]);
        let w = &fs.witness;
        assert_eq!(&w[0] + &w[1], w[2]);
        let b = AffineEq::from_atom(&Add(0, 0, 0), 1).unwrap();
        assert!(maxfs_exact(&[b], 1, 100).unwrap().subset.is_empty());
    }

    #[test]
    fn infeasible_chain() {
        // x + x = y, y + y = z forces z = 4x >= 2, so x = 1/2, z = 2
        let eqs: Vec<AffineEq> = [Add(0, 0, 1), Add(1, 1, 2)].iter().map(|c| AffineEq::from_atom(c, 3).unwrap()).collect();
        let w = feasible_point(3, &eqs, &rat(1, 2), &int(2)).unwrap();
        assert_eq!(w, vec![rat(1, 2), int(1), int(2)]);
        let mut more = eqs.clone();
        more.push(AffineEq::from_atom(&Eq1(0), 3).unwrap());
        assert!(feasible_point(3, &more, &rat(1, 2), &int(2)).is_none());
    }

    #[test]
    fn budget_degrades() {
        let cs: Vec<Constraint> = (0..6).map(|i| Add(i, i + 1, i + 2)).collect();
        let r = approx2(&inst(8, cs), 1).unwrap();
        assert!(r.budget_exceeded);
        assert_eq!(r.method, Method::AllOnes);
    }
}
