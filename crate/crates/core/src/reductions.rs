//! Instance-level compilers: constraint shrinking into the small-value
//! system `V'`, the ETR-C(q) to ETR-INV reduction with uniform blocks, and
//! the embedding of `{x=1, x+y=z, xy=z}` instances into C(q).

use crate::constraint_core::{evaluate_with, Constraint, CoreError, Instance};
use crate::numerics::{format_rational, int, rat, Rational, RingValue, Surd};
use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReductionError {
    #[error("q must be 2^-k with k >= 6 (got k = {0})")]
    BadK(u32),
    #[error("source instance must be an ETR-C(q) instance with q = 2^-k")]
    NotCq,
    #[error("assignment has {got} values, trace expects {want}")]
    TraceMismatch { got: usize, want: usize },
    #[error("atom {0} has no counterpart in C(q)")]
    Unsupported(&'static str),
    #[error(transparent)]
    Core(#[from] CoreError),
}

// ------------------------------------------------------- witness programs

/// How an auxiliary value is computed from values already known.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    /// `c + sum coef * v`
    Lin(Vec<(usize, Rational)>, Rational),
    Prod(usize, usize),
    /// `sqrt(v_a * v_b)`
    SqrtProd(usize, usize),
    Recip(usize),
    /// the value of `q`
    Q,
}

/// Straight-line program filling auxiliary slots in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Program {
    pub steps: Vec<(usize, Step)>,
}

impl Program {
    fn push(&mut self, slot: usize, s: Step) {
        self.steps.push((slot, s));
    }

    fn lin(&mut self, slot: usize, terms: &[(usize, Rational)], c: Rational) {
        self.push(slot, Step::Lin(terms.to_vec(), c));
    }

    /// Runs the program; `None` when a square root or reciprocal fails.
    pub fn run<T: RingValue>(&self, vals: &mut [T], q: &T) -> Option<()> {
        for (slot, s) in &self.steps {
            let v = match s {
                Step::Lin(terms, c) => terms
                    .iter()
                    .fold(T::from_rational(c), |acc, (i, k)| acc.add(&vals[*i].scale(k))),
                Step::Prod(a, b) => vals[*a].mul(&vals[*b]),
                Step::SqrtProd(a, b) => vals[*a].mul(&vals[*b]).sqrt()?,
                Step::Recip(a) => vals[*a].recip()?,
                Step::Q => q.clone(),
            };
            vals[*slot] = v;
        }
        Some(())
    }
}

// --------------------------------------------------------------- shrinking

/// Atoms of the shrunk system, over values near 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ShrunkAtom {
    /// `a = q`
    IsQ(usize),
    /// `a + b = c`
    Add(usize, usize, usize),
    /// `(1+a)(1+b) = 1+c`
    Mul1(usize, usize, usize),
}

impl ShrunkAtom {
    pub fn holds<T: RingValue + PartialEq>(&self, v: &[T], q: &T) -> bool {
        match *self {
            ShrunkAtom::IsQ(a) => &v[a] == q,
            ShrunkAtom::Add(a, b, c) => v[a].add(&v[b]) == v[c],
            ShrunkAtom::Mul1(a, b, c) => {
                let one = T::from_int(1);
                one.add(&v[a]).mul(&one.add(&v[b])) == one.add(&v[c])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct AtomCounts {
    pub q_atoms: usize,
    pub add: usize,
    pub mul: usize,
}

/// The shrunk system for one C(q) atom. Local variables `0..src.len()` are
/// the atom's distinct source variables (holding `q x`), the rest auxiliary.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrunkSystem {
    pub source: Constraint,
    pub src: Vec<usize>,
    pub n_local: usize,
    pub aq: Option<usize>,
    pub atoms: Vec<ShrunkAtom>,
    pub program: Program,
}

impl ShrunkSystem {
    pub fn counts(&self) -> AtomCounts {
        let mut c = AtomCounts::default();
        for a in &self.atoms {
            match a {
                ShrunkAtom::IsQ(_) => c.q_atoms += 1,
                ShrunkAtom::Add(..) => c.add += 1,
                ShrunkAtom::Mul1(..) => c.mul += 1,
            }
        }
        c
    }

    pub fn n_aux(&self) -> usize {
        self.n_local - self.src.len()
    }

    /// Full local assignment from the scaled source values `q x`.
    pub fn witness<T: RingValue>(&self, scaled_src: &[T], q: &T) -> Option<Vec<T>> {
        let mut v = vec![T::from_int(0); self.n_local];
        v[..self.src.len()].clone_from_slice(scaled_src);
        self.program.run(&mut v, q)?;
        Some(v)
    }

    pub fn all_hold<T: RingValue + PartialEq>(&self, v: &[T], q: &T) -> bool {
        self.atoms.iter().all(|a| a.holds(v, q))
    }
}

pub(crate) struct Shrinker {
    pub(crate) n: usize,
    pub(crate) atoms: Vec<ShrunkAtom>,
    pub(crate) program: Program,
}

impl Shrinker {
    pub(crate) fn new(n: usize) -> Self {
        Shrinker { n, atoms: vec![], program: Program::default() }
    }

    pub(crate) fn fresh(&mut self) -> usize {
        self.n += 1;
        self.n - 1
    }

    /// `u1 u2 = u3 u4` with five auxiliaries.
    fn product_eq(&mut self, u1: usize, u2: usize, u3: usize, u4: usize) {
        let a: Vec<usize> = (0..5).map(|_| self.fresh()).collect();
        self.atoms.extend([
            ShrunkAtom::Mul1(u1, u2, a[0]),
            ShrunkAtom::Add(a[1], u1, a[0]),
            ShrunkAtom::Add(a[2], u2, a[1]),
            ShrunkAtom::Mul1(u3, u4, a[3]),
            ShrunkAtom::Add(a[4], u3, a[3]),
            ShrunkAtom::Add(a[2], u4, a[4]),
        ]);
        let one = Rational::one();
        self.program.push(a[2], Step::Prod(u1, u2));
        self.program.lin(a[0], &[(a[2], one.clone()), (u1, one.clone()), (u2, one.clone())], Rational::zero());
        self.program.lin(a[1], &[(a[2], one.clone()), (u2, one.clone())], Rational::zero());
        self.program.lin(a[3], &[(a[2], one.clone()), (u3, one.clone()), (u4, one.clone())], Rational::zero());
        self.program.lin(a[4], &[(a[2], one.clone()), (u4, one)], Rational::zero());
    }

    pub(crate) fn upper_bound(&mut self, x: usize, aq: usize) {
        let (a1, a2, a3) = (self.fresh(), self.fresh(), self.fresh());
        self.atoms.push(ShrunkAtom::Add(a1, a1, x));
        self.atoms.push(ShrunkAtom::Add(a1, a2, aq));
        self.program.lin(a1, &[(x, rat(1, 2))], Rational::zero());
        self.program.lin(a2, &[(aq, int(1)), (x, rat(-1, 2))], Rational::zero());
        self.program.push(a3, Step::SqrtProd(aq, a2));
        self.product_eq(aq, a2, a3, a3);
    }

    pub(crate) fn lower_bound(&mut self, x: usize, aq: usize) {
        let (a1, a2, a3) = (self.fresh(), self.fresh(), self.fresh());
        self.atoms.push(ShrunkAtom::Add(x, x, a1));
        self.atoms.push(ShrunkAtom::Add(a2, aq, a1));
        self.program.lin(a1, &[(x, int(2))], Rational::zero());
        self.program.lin(a2, &[(x, int(2)), (aq, int(-1))], Rational::zero());
        self.program.push(a3, Step::SqrtProd(aq, a2));
        self.product_eq(aq, a2, a3, a3);
    }

    /// The table rows for one C(q) atom, with `local` mapping its variables.
    pub(crate) fn table_row(&mut self, c: &Constraint, local: impl Fn(usize) -> usize, aq: usize) {
        match *c {
            Constraint::Eq(x, y) => {
                let (x, y, a) = (local(x), local(y), self.fresh());
                self.atoms.push(ShrunkAtom::Add(x, a, y));
                self.atoms.push(ShrunkAtom::Add(y, a, x));
                self.program.lin(a, &[], Rational::zero());
            }
            Constraint::Add3(x, y, z) => self.atoms.push(ShrunkAtom::Add(local(x), local(y), local(z))),
            Constraint::Add4(x, y, z, w) => {
                let a = self.fresh();
                self.atoms.push(ShrunkAtom::Add(local(x), local(y), a));
                self.atoms.push(ShrunkAtom::Add(local(z), local(w), a));
                self.program.lin(a, &[(local(x), int(1)), (local(y), int(1))], Rational::zero());
            }
            Constraint::Scale(x, y) => {
                let a = self.fresh();
                self.atoms.push(ShrunkAtom::Mul1(aq, local(y), a));
                self.atoms.push(ShrunkAtom::Add(local(x), aq, a));
                self.program.lin(a, &[(local(x), int(1)), (aq, int(1))], Rational::zero());
            }
            Constraint::Mul3(x, y, z) => self.product_eq(local(x), local(y), local(z), aq),
            Constraint::Mul4(x, y, z, w) => self.product_eq(local(x), local(y), local(z), local(w)),
            _ => unreachable!("ETR-INV atoms rejected above"),
        }
    }
}

/// Rewrites one C(q) atom as at most one `a = q` atom plus additive and
/// `(1+a)(1+b) = 1+c` atoms, including both range bounds per variable.
pub fn shrink(c: &Constraint) -> Result<ShrunkSystem, ReductionError> {
    if c.is_etrinv() {
        return Err(ReductionError::Unsupported(c.tag()));
    }
    let mut src: Vec<usize> = vec![];
    for v in c.vars() {
        if !src.contains(&v) {
            src.push(v);
        }
    }
    let local = |v: usize| src.iter().position(|&s| s == v).unwrap();
    let mut s = Shrinker::new(src.len());
    if *c == Constraint::Null {
        return Ok(ShrunkSystem { source: *c, src, n_local: s.n, aq: None, atoms: vec![], program: s.program });
    }
    let aq = s.fresh();
    s.atoms.push(ShrunkAtom::IsQ(aq));
    s.program.push(aq, Step::Q);
    s.table_row(c, local, aq);
    for v in 0..src.len() {
        s.upper_bound(v, aq);
        s.lower_bound(v, aq);
    }
    Ok(ShrunkSystem { source: *c, src, n_local: s.n, aq: Some(aq), atoms: s.atoms, program: s.program })
}

/// A representative atom of every C(q) kind, with distinct variables.
pub fn cq_kinds() -> Vec<Constraint> {
    use Constraint::*;
    vec![Eq(0, 1), Scale(0, 1), Add3(0, 1, 2), Add4(0, 1, 2, 3), Mul3(0, 1, 2), Mul4(0, 1, 2, 3), Null]
}

// ------------------------------------------------------- ETR-INV gadgets

/// Per-block constant variables `V_1, V_1/2, V_3/2, V_3/4, V_7/4, V_7/8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Consts {
    pub one: usize,
    pub half: usize,
    pub three_halves: usize,
    pub three_quarters: usize,
    pub seven_quarters: usize,
    pub seven_eighths: usize,
}

/// Output of one gadget: its constraints and how to fill its auxiliaries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gadget {
    pub constraints: Vec<Constraint>,
    pub aux: Vec<usize>,
    pub program: Program,
}

impl Gadget {
    fn add(&mut self, a: usize, b: usize, c: usize) {
        self.constraints.push(Constraint::Add(a, b, c));
    }
    fn inv(&mut self, a: usize, b: usize) {
        self.constraints.push(Constraint::Inv(a, b));
    }
    fn lin(&mut self, slot: usize, terms: &[(usize, Rational)], c: Rational) {
        self.program.lin(slot, terms, c);
    }
}

pub fn constants_block(alloc: &mut impl FnMut() -> usize) -> (Consts, Gadget) {
    let k = Consts {
        one: alloc(),
        half: alloc(),
        three_halves: alloc(),
        three_quarters: alloc(),
        seven_quarters: alloc(),
        seven_eighths: alloc(),
    };
    let mut g = Gadget { aux: vec![k.one, k.half, k.three_halves, k.three_quarters, k.seven_quarters, k.seven_eighths], ..Default::default() };
    g.constraints.push(Constraint::Eq1(k.one));
    g.add(k.half, k.half, k.one);
    g.add(k.half, k.one, k.three_halves);
    g.add(k.three_quarters, k.three_quarters, k.three_halves);
    g.add(k.three_quarters, k.one, k.seven_quarters);
    g.add(k.seven_eighths, k.seven_eighths, k.seven_quarters);
    for (slot, v) in [(k.one, int(1)), (k.half, rat(1, 2)), (k.three_halves, rat(3, 2)), (k.three_quarters, rat(3, 4)), (k.seven_quarters, rat(7, 4)), (k.seven_eighths, rat(7, 8))] {
        g.lin(slot, &[], v);
    }
    (k, g)
}

/// `x + y = z + 1` with seven auxiliaries.
pub fn add_gadget(x: usize, y: usize, z: usize, k: &Consts, alloc: &mut impl FnMut() -> usize) -> Gadget {
    let a: Vec<usize> = (0..7).map(|_| alloc()).collect();
    let mut g = Gadget { aux: a.clone(), ..Default::default() };
    g.add(x, k.half, a[0]);
    g.add(y, k.half, a[1]);
    g.add(z, k.half, a[2]);
    g.add(a[3], a[3], a[0]);
    g.add(a[4], a[4], a[1]);
    g.add(a[5], a[5], a[2]);
    g.add(a[5], k.three_quarters, a[6]);
    g.add(a[3], a[4], a[6]);
    let h = rat(1, 2);
    g.lin(a[0], &[(x, int(1))], h.clone());
    g.lin(a[1], &[(y, int(1))], h.clone());
    g.lin(a[2], &[(z, int(1))], h.clone());
    g.lin(a[3], &[(a[0], h.clone())], Rational::zero());
    g.lin(a[4], &[(a[1], h.clone())], Rational::zero());
    g.lin(a[5], &[(a[2], h)], Rational::zero());
    g.lin(a[6], &[(a[5], int(1))], rat(3, 4));
    g
}

pub type MultGadget = Gadget;

/// `x y = z` from `xy = 1` and `x + y = z` atoms, via
/// `xy = 2(h^2 + h/2) - (x^2 + x/2 + y^2 + y/2)/2 - h/2` with `h = (x+y)/2`,
/// each `t^2 + t/2` obtained as `1 / (1/t - 1/(t + 1/2))` scaled by 2.
/// For `x, y` in `[7/8, 9/8]` every auxiliary stays inside `[1/2, 2]`.
pub fn mult_gadget(x: usize, y: usize, z: usize, k: &Consts, alloc: &mut impl FnMut() -> usize) -> MultGadget {
    let mut g = Gadget::default();
    let mut fresh = |g: &mut Gadget| {
        let v = alloc();
        g.aux.push(v);
        v
    };
    let h2 = rat(1, 2);
    let one = int(1);
    let (ax1, ax2, ay1, ay2, hh, h) = (fresh(&mut g), fresh(&mut g), fresh(&mut g), fresh(&mut g), fresh(&mut g), fresh(&mut g));
    g.add(x, k.half, ax1);
    g.add(ax2, ax2, ax1);
    g.add(y, k.half, ay1);
    g.add(ay2, ay2, ay1);
    g.add(ax2, ay2, hh);
    g.add(h, k.half, hh);
    g.lin(ax1, &[(x, one.clone())], h2.clone());
    g.lin(ax2, &[(ax1, h2.clone())], Rational::zero());
    g.lin(ay1, &[(y, one.clone())], h2.clone());
    g.lin(ay2, &[(ay1, h2.clone())], Rational::zero());
    g.lin(hh, &[(ax2, one.clone()), (ay2, one.clone())], Rational::zero());
    g.lin(h, &[(hh, one.clone())], -h2.clone());

    // P = t^2 + t/2, given t and tc = t + 1/2
    let mut square = |g: &mut Gadget, t: usize, tc: usize| -> usize {
        let (ia, ib, e, f, ff, w, p) = (fresh(g), fresh(g), fresh(g), fresh(g), fresh(g), fresh(g), fresh(g));
        g.inv(t, ia);
        g.inv(tc, ib);
        g.add(ia, k.half, e);
        g.add(f, ib, e);
        g.add(f, f, ff);
        g.add(w, k.one, ff);
        g.inv(p, w);
        g.program.push(ia, Step::Recip(t));
        g.program.push(ib, Step::Recip(tc));
        g.lin(e, &[(ia, int(1))], rat(1, 2));
        g.lin(f, &[(e, int(1)), (ib, int(-1))], Rational::zero());
        g.lin(ff, &[(f, int(2))], Rational::zero());
        g.lin(w, &[(ff, int(1))], int(-1));
        g.program.push(p, Step::Recip(w));
        p
    };
    let px = square(&mut g, x, ax1);
    let py = square(&mut g, y, ay1);
    let ph = square(&mut g, h, hh);

    let (px2, py2, n1, n2, n7, n1p, zq, h34, hq, hq2) =
        (fresh(&mut g), fresh(&mut g), fresh(&mut g), fresh(&mut g), fresh(&mut g), fresh(&mut g), fresh(&mut g), fresh(&mut g), fresh(&mut g), fresh(&mut g));
    g.add(px2, px2, px);
    g.add(py2, py2, py);
    g.add(n1, px2, ph);
    g.add(n2, py2, ph);
    g.add(n1, k.seven_eighths, n7);
    g.add(n1p, k.three_quarters, n7);
    g.add(n1p, n2, zq);
    g.add(h, k.three_quarters, h34);
    g.add(hq, k.half, h34);
    g.add(hq2, hq2, hq);
    g.add(z, hq2, zq);
    g.lin(px2, &[(px, h2.clone())], Rational::zero());
    g.lin(py2, &[(py, h2.clone())], Rational::zero());
    g.lin(n1, &[(ph, int(1)), (px2, int(-1))], Rational::zero());
    g.lin(n2, &[(ph, int(1)), (py2, int(-1))], Rational::zero());
    g.lin(n7, &[(n1, int(1))], rat(7, 8));
    g.lin(n1p, &[(n7, int(1))], rat(-3, 4));
    g.lin(zq, &[(n1p, int(1)), (n2, int(1))], Rational::zero());
    g.lin(h34, &[(h, int(1))], rat(3, 4));
    g.lin(hq, &[(h34, int(1))], -h2.clone());
    g.lin(hq2, &[(hq, h2)], Rational::zero());
    g
}

/// `target = 1 + 2^-k` through the doubling chain anchored at `V_3/2`.
pub fn q_chain(target: usize, kq: u32, k: &Consts, alloc: &mut impl FnMut() -> usize) -> Gadget {
    let mut g = Gadget::default();
    let mut alpha = k.three_halves;
    for i in 1..kq {
        let beta = alloc();
        g.aux.push(beta);
        let next = if i + 1 == kq {
            target
        } else {
            let a = alloc();
            g.aux.push(a);
            a
        };
        g.add(beta, beta, alpha);
        g.add(beta, k.half, next);
        let p = Rational::new(1.into(), num_bigint::BigInt::from(2).pow(i + 1));
        g.lin(beta, &[], rat(1, 2) + &p);
        if next != target {
            g.lin(next, &[], int(1) + &p);
        }
        alpha = next;
    }
    g
}

// ------------------------------------------------------------- reduction

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockTrace {
    pub source_id: usize,
    pub source_tag: &'static str,
    /// Half-open range of target constraint indices.
    pub target_range: (usize, usize),
    /// Half-open range of auxiliary target variables.
    pub aux_range: (usize, usize),
    pub gadget_kinds: AtomCounts,
    /// Constraints before padding.
    pub unpadded: usize,
    #[serde(skip)]
    shrunk: ShrunkSystem,
    /// Target variable for each local variable of `shrunk`.
    #[serde(skip)]
    local_to_target: Vec<usize>,
    #[serde(skip)]
    program: Program,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionTrace {
    pub k: u32,
    pub q: String,
    pub source_vars: usize,
    pub target_vars: usize,
    pub block_size: usize,
    /// `1266 + 2k`, the count quoted for the 47-constraint gadget.
    pub reference_block_size: usize,
    pub mult_gadget_constraints: usize,
    pub mult_gadget_aux: usize,
    pub blocks: Vec<BlockTrace>,
}

impl ReductionTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

pub fn k_of_q(q: &Rational) -> Option<u32> {
    if !q.numer().is_one() {
        return None;
    }
    let d = q.denom();
    let k = d.bits() - 1;
    (num_bigint::BigInt::from(2).pow(k as u32) == *d).then_some(k as u32)
}

fn compile_block(
    source_id: usize,
    c: &Constraint,
    kq: u32,
    next_var: &mut usize,
    out: &mut Vec<Constraint>,
) -> Result<BlockTrace, ReductionError> {
    let shrunk = shrink(c)?;
    let start_c = out.len();
    let start_v = *next_var;
    let mut alloc = || {
        *next_var += 1;
        *next_var - 1
    };
    let mut program = Program::default();
    let (k, consts) = constants_block(&mut alloc);
    out.extend(consts.constraints);
    program.steps.extend(consts.program.steps);
    let mut local_to_target: Vec<usize> = shrunk.src.clone();
    for _ in shrunk.src.len()..shrunk.n_local {
        local_to_target.push(alloc());
    }
    for atom in &shrunk.atoms {
        let g = match *atom {
            ShrunkAtom::IsQ(a) => q_chain(local_to_target[a], kq, &k, &mut alloc),
            ShrunkAtom::Add(a, b, c) => add_gadget(local_to_target[a], local_to_target[b], local_to_target[c], &k, &mut alloc),
            ShrunkAtom::Mul1(a, b, c) => mult_gadget(local_to_target[a], local_to_target[b], local_to_target[c], &k, &mut alloc),
        };
        out.extend(g.constraints);
        program.steps.extend(g.program.steps);
    }
    let unpadded = out.len() - start_c;
    Ok(BlockTrace {
        source_id,
        source_tag: c.tag(),
        target_range: (start_c, out.len()),
        aux_range: (start_v, *next_var),
        gadget_kinds: shrunk.counts(),
        unpadded,
        shrunk,
        local_to_target,
        program,
    })
}

/// Uniform block size: the largest unpadded block over all C(q) kinds.
pub fn block_size(kq: u32) -> usize {
    cq_kinds()
        .iter()
        .map(|c| {
            let mut next = 4;
            let mut out = vec![];
            compile_block(0, c, kq, &mut next, &mut out).expect("C(q) kind").unpadded
        })
        .max()
        .unwrap_or(0)
}

pub fn mult_gadget_size() -> (usize, usize) {
    let mut next = 0;
    let mut alloc = || {
        next += 1;
        next - 1
    };
    let (k, _) = constants_block(&mut alloc);
    let (x, y, z) = (alloc(), alloc(), alloc());
    let g = mult_gadget(x, y, z, &k, &mut alloc);
    (g.constraints.len(), g.aux.len())
}

/// Compiles an ETR-C(q) instance with `q = 2^-k`, `k >= 6`, into ETR-INV.
/// Target variables `0..n` hold `1 + q x` for the source variables; each
/// source constraint owns one block of exactly [`block_size`] constraints,
/// padded by repeating the block's first constraint.
pub fn reduce_cq_to_etrinv(phi: &Instance) -> Result<(Instance, ReductionTrace), ReductionError> {
    let q = phi.q.clone().ok_or(ReductionError::NotCq)?;
    let kq = k_of_q(&q).ok_or(ReductionError::NotCq)?;
    if kq < 6 {
        return Err(ReductionError::BadK(kq));
    }
    let bsize = block_size(kq);
    let mut next_var = phi.n;
    let mut out = vec![];
    let mut blocks = vec![];
    for (i, c) in phi.constraints.iter().enumerate() {
        let b = compile_block(i, c, kq, &mut next_var, &mut out)?;
        let first = out[b.target_range.0];
        while out.len() < b.target_range.0 + bsize {
            out.push(first);
        }
        let mut b = b;
        b.target_range.1 = out.len();
        blocks.push(b);
    }
    let (mg_c, mg_a) = mult_gadget_size();
    let psi = Instance::etrinv(next_var, out)?;
    let trace = ReductionTrace {
        k: kq,
        q: format_rational(&q),
        source_vars: phi.n,
        target_vars: next_var,
        block_size: bsize,
        reference_block_size: 1266 + 2 * kq as usize,
        mult_gadget_constraints: mg_c,
        mult_gadget_aux: mg_a,
        blocks,
    };
    Ok((psi, trace))
}

fn q_value(trace: &ReductionTrace) -> Rational {
    Rational::new(1.into(), num_bigint::BigInt::from(2).pow(trace.k))
}

/// Target assignment from a source assignment: `x'' = 1 + q x`, and honest
/// auxiliaries for every block whose source constraint holds. Blocks of
/// violated constraints get auxiliaries equal to 1.
pub fn forward_witness(phi: &Instance, trace: &ReductionTrace, x: &[Rational]) -> Result<Vec<Surd>, ReductionError> {
    if x.len() != trace.source_vars {
        return Err(ReductionError::TraceMismatch { got: x.len(), want: trace.source_vars });
    }
    let q = q_value(trace);
    let report = crate::constraint_core::evaluate(phi, x)?;
    let mut vals: Vec<Surd> = vec![Surd::one(); trace.target_vars];
    for (i, xi) in x.iter().enumerate() {
        vals[i] = Surd::from_rational(&(int(1) + &q * xi));
    }
    let qs = Surd::from_rational(&q);
    for b in &trace.blocks {
        if !report.pass[b.source_id] {
            continue;
        }
        let scaled: Vec<Surd> = b.shrunk.src.iter().map(|&v| Surd::from_rational(&(&q * &x[v]))).collect();
        let Some(local) = b.shrunk.witness(&scaled, &qs) else { continue };
        let mut work = vals.clone();
        for (l, &t) in local.iter().zip(&b.local_to_target).skip(b.shrunk.src.len()) {
            work[t] = Surd::one().add(l);
        }
        if b.program.run(&mut work, &Surd::from_rational(&q)).is_some() {
            for v in b.aux_range.0..b.aux_range.1 {
                vals[v] = work[v].clone();
            }
        }
    }
    Ok(vals)
}

/// `x = (x'' - 1) / q`, or `1` when that lies outside `[-2, 2]`.
pub fn extract_assignment(psi: &[Surd], trace: &ReductionTrace) -> Result<Vec<Surd>, ReductionError> {
    if psi.len() != trace.target_vars {
        return Err(ReductionError::TraceMismatch { got: psi.len(), want: trace.target_vars });
    }
    let qinv = int(1) / q_value(trace);
    Ok(psi[..trace.source_vars]
        .iter()
        .map(|v| {
            let x = v.sub(&Surd::one()).scale(&qinv);
            let lo = x.add(&Surd::from_int(2)).signum() >= 0;
            let hi = Surd::from_int(2).sub(&x).signum() >= 0;
            if lo && hi {
                x
            } else {
                Surd::one()
            }
        })
        .collect())
}

pub fn extract_rational(psi: &[Rational], trace: &ReductionTrace) -> Result<Vec<Rational>, ReductionError> {
    let s: Vec<Surd> = psi.iter().map(Surd::from_rational).collect();
    Ok(extract_assignment(&s, trace)?
        .into_iter()
        .map(|v| v.as_rational().expect("rational input stays rational"))
        .collect())
}

/// Which blocks have every constraint satisfied under `report`.
pub fn satisfied_blocks(trace: &ReductionTrace, pass: &[bool]) -> Vec<bool> {
    trace.blocks.iter().map(|b| pass[b.target_range.0..b.target_range.1].iter().all(|&p| p)).collect()
}

/// Perturbs every auxiliary value of one block by a random nonzero offset.
pub fn corrupt_block<R: Rng + ?Sized>(psi: &mut [Surd], trace: &ReductionTrace, block: usize, rng: &mut R) {
    let b = &trace.blocks[block];
    for v in b.aux_range.0..b.aux_range.1 {
        if rng.gen_bool(0.5) {
            let off = rat(rng.gen_range(1..=7), 64) * if rng.gen_bool(0.5) { int(1) } else { int(-1) };
            psi[v] = psi[v].add(&Surd::from_rational(&off));
        }
    }
    let v = rng.gen_range(b.aux_range.0..b.aux_range.1);
    psi[v] = psi[v].add(&Surd::from_rational(&rat(1, 32)));
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorruptionReport {
    pub target_satisfied: usize,
    pub target_total: usize,
    pub blocks_fully_satisfied: usize,
    pub source_satisfied: usize,
    pub source_total: usize,
    /// `UNSAT(source extract) <= B * UNSAT(target)`.
    pub bound_holds: bool,
}

/// Evaluates a target assignment and the extracted source assignment.
pub fn corruption_report(phi: &Instance, psi_inst: &Instance, trace: &ReductionTrace, psi: &[Surd]) -> Result<CorruptionReport, ReductionError> {
    let t = evaluate_with(psi_inst, psi)?;
    let full = satisfied_blocks(trace, &t.pass).iter().filter(|&&b| b).count();
    let x = extract_assignment(psi, trace)?;
    let s = evaluate_with(phi, &x)?;
    let lhs = int((s.total - s.satisfied) as i64) / int(s.total.max(1) as i64);
    let rhs = int(trace.block_size as i64) * int((t.total - t.satisfied) as i64) / int(t.total.max(1) as i64);
    Ok(CorruptionReport {
        target_satisfied: t.satisfied,
        target_total: t.total,
        blocks_fully_satisfied: full,
        source_satisfied: s.satisfied,
        source_total: s.total,
        bound_holds: lhs <= rhs,
    })
}

// ------------------------------------------------------------- embedding

/// Rewrites `x = 1` as `x x = x`; `x + y = z` and `x y = z` pass through.
pub fn embed_one_plus_times(phi: &Instance, q: Rational) -> Result<Instance, ReductionError> {
    let cs = phi
        .constraints
        .iter()
        .map(|c| match *c {
            Constraint::Eq1(x) => Ok(Constraint::Mul3(x, x, x)),
            Constraint::Add(x, y, z) => Ok(Constraint::Add3(x, y, z)),
            Constraint::Inv(..) => Err(ReductionError::Unsupported("INV")),
            other => Ok(other),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Instance::etrcq(q, phi.n, cs)?)
}

// ------------------------------------------------------------- generators

fn grid_value<R: Rng + ?Sized>(rng: &mut R) -> Rational {
    rat(rng.gen_range(4..=16), 8)
}

/// A random C(q) instance with `m` constraints together with a rational
/// witness satisfying all of them.
pub fn random_satisfiable_cq<R: Rng + ?Sized>(rng: &mut R, q: &Rational, m: usize) -> (Instance, Vec<Rational>) {
    let in_range = |v: &Rational| *v >= rat(1, 2) && *v <= int(2);
    let mut vals: Vec<Rational> = (0..3).map(|_| grid_value(rng)).collect();
    let mut cs = vec![];
    let var_for = |vals: &mut Vec<Rational>, rng: &mut R, v: Rational| -> usize {
        if rng.gen_bool(0.5) {
            if let Some(i) = vals.iter().position(|w| *w == v) {
                return i;
            }
        }
        vals.push(v);
        vals.len() - 1
    };
    while cs.len() < m {
        let pick = |rng: &mut R, n: usize| rng.gen_range(0..n);
        let n = vals.len();
        let (a, b, c) = (pick(rng, n), pick(rng, n), pick(rng, n));
        let kind = rng.gen_range(0..7);
        let made = match kind {
            0 => {
                let v = vals[a].clone();
                Some(Constraint::Eq(var_for(&mut vals, rng, v), a))
            }
            1 => {
                let v = (int(1) + q) * &vals[a];
                in_range(&v).then(|| Constraint::Scale(var_for(&mut vals, rng, v), a))
            }
            2 => {
                let v = &vals[a] + &vals[b];
                in_range(&v).then(|| Constraint::Add3(a, b, var_for(&mut vals, rng, v)))
            }
            3 => {
                let v = &vals[a] + &vals[b] - &vals[c];
                in_range(&v).then(|| Constraint::Add4(a, b, c, var_for(&mut vals, rng, v)))
            }
            4 => {
                let v = &vals[a] * &vals[b];
                in_range(&v).then(|| Constraint::Mul3(a, b, var_for(&mut vals, rng, v)))
            }
            5 => {
                let v = &vals[a] * &vals[b] / &vals[c];
                in_range(&v).then(|| Constraint::Mul4(a, b, c, var_for(&mut vals, rng, v)))
            }
            _ => Some(Constraint::Null),
        };
        if let Some(c) = made {
            cs.push(c);
        }
    }
    cs.shuffle(rng);
    let inst = Instance::etrcq(q.clone(), vals.len(), cs).expect("generated atoms are C(q)");
    (inst, vals)
}

/// Values of the mult gadget's variables forced by unit propagation from
/// pinned inputs: repeatedly solve any atom with a single unknown.
pub fn propagate(constraints: &[Constraint], n: usize, pinned: &HashMap<usize, Rational>) -> Vec<Option<Rational>> {
    let mut v: Vec<Option<Rational>> = vec![None; n];
    for (&i, x) in pinned {
        v[i] = Some(x.clone());
    }
    loop {
        let mut changed = false;
        for c in constraints {
            let solved: Option<(usize, Rational)> = match *c {
                Constraint::Eq1(a) if v[a].is_none() => Some((a, int(1))),
                Constraint::Inv(a, b) => match (&v[a], &v[b]) {
                    (Some(x), None) if !x.is_zero() => Some((b, x.recip())),
                    (None, Some(y)) if !y.is_zero() => Some((a, y.recip())),
                    _ => None,
                },
                Constraint::Add(a, b, c) => match (&v[a], &v[b], &v[c]) {
                    (Some(x), Some(y), None) => Some((c, x + y)),
                    (Some(x), None, Some(z)) => Some((b, z - x)),
                    (None, Some(y), Some(z)) => Some((a, z - y)),
                    (None, None, Some(z)) if a == b => Some((a, z / int(2))),
                    _ => None,
                },
                _ => None,
            };
            if let Some((i, x)) = solved {
                v[i] = Some(x);
                changed = true;
            }
        }
        if !changed {
            return v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint_core::evaluate;
    use rand::SeedableRng;

    fn q6() -> Rational {
        rat(1, 64)
    }

    #[test]
    fn shrink_counts_respect_bounds() {
        for c in cq_kinds() {
            let s = shrink(&c).unwrap();
            let n = s.counts();
            assert!(n.q_atoms <= 1 && n.add <= 52 && n.mul <= 18, "{c:?} {n:?}");
            assert!(s.n_aux() <= 70);
        }
        let m4 = shrink(&Constraint::Mul4(0, 1, 2, 3)).unwrap().counts();
        assert_eq!((m4.add, m4.mul), (52, 18));
        let eq = shrink(&Constraint::Eq(0, 1)).unwrap();
        assert!(eq.atoms.contains(&ShrunkAtom::Add(0, 3, 1)) && eq.atoms.contains(&ShrunkAtom::Add(1, 3, 0)));
    }

    #[test]
    fn shrink_witness_small_and_exact() {
        let q = q6();
        let qs = Surd::from_rational(&q);
        let cases: Vec<(Constraint, Vec<Rational>)> = vec![
            (Constraint::Eq(0, 1), vec![rat(3, 4), rat(3, 4)]),
            (Constraint::Scale(0, 1), vec![(int(1) + &q) * rat(1, 2), rat(1, 2)]),
            (Constraint::Add3(0, 1, 2), vec![rat(1, 2), rat(3, 2), int(2)]),
            (Constraint::Add4(0, 1, 2, 3), vec![rat(1, 2), int(2), rat(3, 4), rat(7, 4)]),
            (Constraint::Mul3(0, 1, 2), vec![int(2), rat(1, 2), int(1)]),
            (Constraint::Mul4(0, 1, 2, 3), vec![int(2), rat(3, 4), rat(3, 2), int(1)]),
        ];
        for (c, x) in cases {
            let s = shrink(&c).unwrap();
            let scaled: Vec<Surd> = x.iter().map(|v| Surd::from_rational(&(&q * v))).collect();
            let w = s.witness(&scaled, &qs).unwrap();
            assert!(s.all_hold(&w, &qs), "{c:?}");
            let six_q = Surd::from_rational(&(int(6) * &q));
            for v in &w {
                assert!(six_q.sub(v).signum() >= 0 && six_q.add(v).signum() >= 0, "{c:?} {v:?}");
            }
        }
        // out of range source value: the lower-bound square root fails
        let s = shrink(&Constraint::Eq(0, 1)).unwrap();
        let bad = Surd::from_rational(&(&q * rat(1, 4)));
        assert!(s.witness(&[bad.clone(), bad], &qs).is_none());
    }

    #[test]
    fn mult_gadget_contract() {
        assert_eq!(mult_gadget_size(), (38, 37));
        let mut next = 0;
        let mut alloc = || {
            next += 1;
            next - 1
        };
        let (k, consts) = constants_block(&mut alloc);
        let (x, y, z) = (alloc(), alloc(), alloc());
        let g = mult_gadget(x, y, z, &k, &mut alloc);
        let n = next;
        let mut all = consts.constraints.clone();
        all.extend(g.constraints.iter().copied());
        let inst = Instance::etrinv(n, all.clone()).unwrap();
        for (a, b) in [(rat(9, 8), rat(9, 8)), (int(1), int(1)), (rat(7, 8), rat(9, 8)), (rat(7, 8), rat(7, 8))] {
            let mut v = vec![Rational::zero(); n];
            v[x] = a.clone();
            v[y] = b.clone();
            v[z] = &a * &b;
            consts.program.run(&mut v, &Rational::zero()).unwrap();
            g.program.run(&mut v, &Rational::zero()).unwrap();
            assert!(evaluate(&inst, &v).unwrap().all_satisfied(), "{a} {b}");
        }
        let pinned: HashMap<usize, Rational> = [(x, int(1)), (y, int(1))].into_iter().collect();
        let forced = propagate(&all, n, &pinned);
        assert_eq!(forced[z], Some(int(1)));
        let pinned: HashMap<usize, Rational> = [(x, rat(3, 2)), (y, rat(5, 7))].into_iter().collect();
        assert_eq!(propagate(&all, n, &pinned)[z], Some(rat(15, 14)));
    }

    #[test]
    fn block_sizes_uniform() {
        let b = block_size(6);
        assert_eq!(b, 6 + 8 * 52 + 38 * 18 + 2 * 6 - 2);
        let phi = Instance::etrcq(q6(), 2, vec![Constraint::Eq(0, 1), Constraint::Null]).unwrap();
        let (psi, trace) = reduce_cq_to_etrinv(&phi).unwrap();
        assert_eq!(psi.constraints.len(), 2 * b);
        assert!(trace.blocks.iter().all(|bl| bl.target_range.1 - bl.target_range.0 == b));
        // the NULL block is its constants plus repeats of its first constraint
        let nb = &trace.blocks[1];
        assert_eq!(nb.unpadded, 6);
        let first = psi.constraints[nb.target_range.0];
        assert_eq!(psi.constraints[nb.target_range.0..nb.target_range.1].iter().filter(|c| **c == first).count(), b - 5);
        assert!(reduce_cq_to_etrinv(&Instance::etrcq(rat(1, 32), 1, vec![]).unwrap()).is_err());
        assert!(trace.to_json().contains("\"target_range\""));
    }

    #[test]
    fn round_trip_and_clamp() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let (phi, x) = random_satisfiable_cq(&mut rng, &q6(), 4);
            assert!(evaluate(&phi, &x).unwrap().all_satisfied());
            let (psi, trace) = reduce_cq_to_etrinv(&phi).unwrap();
            let w = forward_witness(&phi, &trace, &x).unwrap();
            let rep = evaluate_with(&psi, &w).unwrap();
            assert!(rep.all_satisfied(), "{:?}", rep.pass.iter().position(|p| !p));
            let back = extract_assignment(&w, &trace).unwrap();
            assert!(back.iter().zip(&x).all(|(a, b)| a.as_rational().as_ref() == Some(b)));
            let mut bad = w.clone();
            corrupt_block(&mut bad, &trace, 0, &mut rng);
            let r = corruption_report(&phi, &psi, &trace, &bad).unwrap();
            assert!(r.source_satisfied >= r.blocks_fully_satisfied && r.bound_holds);
        }
        let phi = Instance::etrcq(q6(), 1, vec![Constraint::Null]).unwrap();
        let (_, trace) = reduce_cq_to_etrinv(&phi).unwrap();
        let mut psi = vec![Rational::one(); trace.target_vars];
        psi[0] = int(3);
        assert_eq!(extract_rational(&psi, &trace).unwrap()[0], int(1));
    }

    #[test]
    fn embedding_rewrites_eq1() {
        let phi = Instance::etrinv(2, vec![Constraint::Eq1(0), Constraint::Add(0, 0, 1)]).unwrap();
        let e = embed_one_plus_times(&phi, q6()).unwrap();
        assert_eq!(e.constraints, vec![Constraint::Mul3(0, 0, 0), Constraint::Add3(0, 0, 1)]);
        assert!(evaluate(&e, &[int(1), int(2)]).unwrap().all_satisfied());
        assert!(!evaluate(&e, &[rat(1, 2), int(1)]).unwrap().pass[0]);
    }
}
