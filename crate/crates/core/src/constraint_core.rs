//! Instance model for ETR-INV and ETR-C(q), exact evaluation, text formats,
//! small exhaustive/heuristic optimizers and the hard-instance generator.

use crate::numerics::{
    format_rational, int, parse_rational, rat, Fixed, Rational, RingValue, Surd,
};
use crate::seeds;
use num_bigint::BigInt;
use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("assignment has {got} values, instance has {want} variables")]
    LengthMismatch { got: usize, want: usize },
    #[error("constraint {index} ({tag}) is not allowed in dialect {dialect}")]
    Dialect { index: usize, tag: &'static str, dialect: &'static str },
    #[error("constraint {index} references variable {var} but n = {n}")]
    BadIndex { index: usize, var: usize, n: usize },
    #[error("q must be positive")]
    BadQ,
    #[error("enumeration needs {needed} points, budget is {budget}")]
    Budget { needed: f64, budget: u64 },
    #[error("{0} is not prime")]
    NotPrime(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Dialect {
    EtrInv,
    EtrCq { q: String },
}

/// One atom. The first three are the ETR-INV atoms; the rest form C(q).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Constraint {
    /// x = 1
    Eq1(usize),
    /// x y = 1
    Inv(usize, usize),
    /// x + y = z
    Add(usize, usize, usize),
    /// x = y
    Eq(usize, usize),
    /// x = (1+q) y
    Scale(usize, usize),
    /// x + y = z
    Add3(usize, usize, usize),
    /// x + y = z + w
    Add4(usize, usize, usize, usize),
    /// x y = z
    Mul3(usize, usize, usize),
    /// x y = z w
    Mul4(usize, usize, usize, usize),
    Null,
}

impl Constraint {
    pub fn tag(&self) -> &'static str {
        match self {
            Constraint::Eq1(..) => "EQ1",
            Constraint::Inv(..) => "INV",
            Constraint::Add(..) => "ADD",
            Constraint::Eq(..) => "EQ",
            Constraint::Scale(..) => "SCALE",
            Constraint::Add3(..) => "ADD3",
            Constraint::Add4(..) => "ADD4",
            Constraint::Mul3(..) => "MUL3",
            Constraint::Mul4(..) => "MUL4",
            Constraint::Null => "NULL",
        }
    }

    pub fn vars(&self) -> Vec<usize> {
        use Constraint::*;
        match *self {
            Eq1(a) => vec![a],
            Inv(a, b) | Eq(a, b) | Scale(a, b) => vec![a, b],
            Add(a, b, c) | Add3(a, b, c) | Mul3(a, b, c) => vec![a, b, c],
            Add4(a, b, c, d) | Mul4(a, b, c, d) => vec![a, b, c, d],
            Null => vec![],
        }
    }

    /// Same atom with every variable index passed through `f`.
    pub fn map_vars(&self, f: impl Fn(usize) -> usize) -> Constraint {
        use Constraint::*;
        match *self {
            Eq1(a) => Eq1(f(a)),
            Inv(a, b) => Inv(f(a), f(b)),
            Add(a, b, c) => Add(f(a), f(b), f(c)),
            Eq(a, b) => Eq(f(a), f(b)),
            Scale(a, b) => Scale(f(a), f(b)),
            Add3(a, b, c) => Add3(f(a), f(b), f(c)),
            Add4(a, b, c, d) => Add4(f(a), f(b), f(c), f(d)),
            Mul3(a, b, c) => Mul3(f(a), f(b), f(c)),
            Mul4(a, b, c, d) => Mul4(f(a), f(b), f(c), f(d)),
            Null => Null,
        }
    }

    pub fn is_etrinv(&self) -> bool {
        matches!(self, Constraint::Eq1(_) | Constraint::Inv(..) | Constraint::Add(..))
    }

    pub fn is_cq(&self) -> bool {
        !self.is_etrinv()
    }

    /// Whether the equation holds exactly (ranges are not consulted).
    pub fn holds<T: Scalar>(&self, v: &[T], q: &Rational) -> bool {
        use Constraint::*;
        let one = T::from_int(1);
        match *self {
            Eq1(a) => v[a] == one,
            Inv(a, b) => v[a].mul(&v[b]) == one,
            Add(a, b, c) | Add3(a, b, c) => v[a].add(&v[b]) == v[c],
            Eq(a, b) => v[a] == v[b],
            Scale(a, b) => v[a] == v[b].scale(&(Rational::one() + q)),
            Add4(a, b, c, d) => v[a].add(&v[b]) == v[c].add(&v[d]),
            Mul3(a, b, c) => v[a].mul(&v[b]) == v[c],
            Mul4(a, b, c, d) => v[a].mul(&v[b]) == v[c].mul(&v[d]),
            Null => true,
        }
    }

    fn arity(tag: &str) -> Option<usize> {
        Some(match tag {
            "EQ1" => 1,
            "INV" | "EQ" | "SCALE" => 2,
            "ADD" | "ADD3" | "MUL3" => 3,
            "ADD4" | "MUL4" => 4,
            "NULL" => 0,
            _ => return None,
        })
    }

    fn from_parts(tag: &str, ix: &[usize]) -> Constraint {
        use Constraint::*;
        match tag {
            "EQ1" => Eq1(ix[0]),
            "INV" => Inv(ix[0], ix[1]),
            "ADD" => Add(ix[0], ix[1], ix[2]),
            "EQ" => Eq(ix[0], ix[1]),
            "SCALE" => Scale(ix[0], ix[1]),
            "ADD3" => Add3(ix[0], ix[1], ix[2]),
            "ADD4" => Add4(ix[0], ix[1], ix[2], ix[3]),
            "MUL3" => Mul3(ix[0], ix[1], ix[2]),
            "MUL4" => Mul4(ix[0], ix[1], ix[2], ix[3]),
            _ => Null,
        }
    }
}

/// Values constraints can be evaluated on exactly.
pub trait Scalar: RingValue + PartialEq {
    fn in_box(&self) -> bool;
}

impl Scalar for Rational {
    fn in_box(&self) -> bool {
        crate::numerics::in_unit_range(self)
    }
}

impl Scalar for Surd {
    fn in_box(&self) -> bool {
        self.in_unit_range()
    }
}

pub type Assignment = Vec<Rational>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub q: Option<Rational>,
    pub n: usize,
    pub constraints: Vec<Constraint>,
}

impl Instance {
    pub fn etrinv(n: usize, constraints: Vec<Constraint>) -> Result<Instance, CoreError> {
        let inst = Instance { q: None, n, constraints };
        inst.validate()?;
        Ok(inst)
    }

    pub fn etrcq(q: Rational, n: usize, constraints: Vec<Constraint>) -> Result<Instance, CoreError> {
        if q <= Rational::zero() {
            return Err(CoreError::BadQ);
        }
        let inst = Instance { q: Some(q), n, constraints };
        inst.validate()?;
        Ok(inst)
    }

    pub fn is_cq(&self) -> bool {
        self.q.is_some()
    }

    pub fn dialect(&self) -> Dialect {
        match &self.q {
            None => Dialect::EtrInv,
            Some(q) => Dialect::EtrCq { q: format_rational(q) },
        }
    }

    pub fn q_or_zero(&self) -> Rational {
        self.q.clone().unwrap_or_else(Rational::zero)
    }

    fn validate(&self) -> Result<(), CoreError> {
        for (index, c) in self.constraints.iter().enumerate() {
            let ok = if self.is_cq() { c.is_cq() } else { c.is_etrinv() };
            if !ok {
                let dialect = if self.is_cq() { "etrcq" } else { "etrinv" };
                return Err(CoreError::Dialect { index, tag: c.tag(), dialect });
            }
            if let Some(&var) = c.vars().iter().find(|&&v| v >= self.n) {
                return Err(CoreError::BadIndex { index, var, n: self.n });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EvalReport {
    pub satisfied: usize,
    pub total: usize,
    pub pass: Vec<bool>,
    pub range_violations: Vec<usize>,
}

impl EvalReport {
    pub fn fraction(&self) -> Rational {
        if self.total == 0 {
            Rational::one()
        } else {
            rat(self.satisfied as i64, self.total as i64)
        }
    }

    pub fn all_satisfied(&self) -> bool {
        self.satisfied == self.total
    }
}

pub fn evaluate(inst: &Instance, a: &[Rational]) -> Result<EvalReport, CoreError> {
    evaluate_with(inst, a)
}

/// Exact evaluation over any [`Scalar`]; a constraint counts only if its
/// equation holds and all of its variables lie in `[1/2, 2]`.
pub fn evaluate_with<T: Scalar>(inst: &Instance, a: &[T]) -> Result<EvalReport, CoreError> {
    if a.len() != inst.n {
        return Err(CoreError::LengthMismatch { got: a.len(), want: inst.n });
    }
    let in_box: Vec<bool> = a.iter().map(|v| v.in_box()).collect();
    let q = inst.q_or_zero();
    let pass: Vec<bool> = inst
        .constraints
        .iter()
        .map(|c| c.vars().iter().all(|&v| in_box[v]) && c.holds(a, &q))
        .collect();
    let satisfied = pass.iter().filter(|&&p| p).count();
    let range_violations = (0..inst.n).filter(|&i| !in_box[i]).collect();
    Ok(EvalReport { satisfied, total: pass.len(), pass, range_violations })
}

/// Fixed-point evaluation for irrational witnesses: an equation passes when
/// both sides are certified within `tol`, a range when certified within
/// `[1/2 - tol, 2 + tol]`.
pub fn evaluate_fixed(inst: &Instance, a: &[Fixed], tol: &Rational) -> Result<EvalReport, CoreError> {
    if a.len() != inst.n {
        return Err(CoreError::LengthMismatch { got: a.len(), want: inst.n });
    }
    let lo = rat(1, 2) - tol;
    let hi = int(2) + tol;
    let in_box: Vec<bool> = a.iter().map(|v| v.certified_in(&lo, &hi)).collect();
    let one = Fixed::one();
    let q1 = Rational::one() + inst.q_or_zero();
    let close = |x: &Fixed, y: &Fixed| x.certified_close(y, tol);
    let pass: Vec<bool> = inst
        .constraints
        .iter()
        .map(|c| {
            use Constraint::*;
            let eq = match *c {
                Eq1(x) => close(&a[x], &one),
                Inv(x, y) => close(&a[x].mul(&a[y]), &one),
                Add(x, y, z) | Add3(x, y, z) => close(&a[x].add(&a[y]), &a[z]),
                Eq(x, y) => close(&a[x], &a[y]),
                Scale(x, y) => close(&a[x], &a[y].mul_rational(&q1)),
                Add4(x, y, z, w) => close(&a[x].add(&a[y]), &a[z].add(&a[w])),
                Mul3(x, y, z) => close(&a[x].mul(&a[y]), &a[z]),
                Mul4(x, y, z, w) => close(&a[x].mul(&a[y]), &a[z].mul(&a[w])),
                Null => true,
            };
            eq && c.vars().iter().all(|&v| in_box[v])
        })
        .collect();
    let satisfied = pass.iter().filter(|&&p| p).count();
    let range_violations = (0..inst.n).filter(|&i| !in_box[i]).collect();
    Ok(EvalReport { satisfied, total: pass.len(), pass, range_violations })
}

// ---------------------------------------------------------------- text I/O

fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

pub fn parse_instance(text: &str) -> Result<Instance, CoreError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, strip_comment(l)))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or(CoreError::Parse { line: 1, msg: "empty input".into() })?;
    let perr = |line: usize, msg: String| CoreError::Parse { line, msg };
    let h: Vec<&str> = header.split_whitespace().collect();
    let parse_n = |s: &str| s.parse::<usize>().map_err(|_| perr(hline, format!("bad variable count {s:?}")));
    let (q, n) = match h.as_slice() {
        ["etrinv", n] => (None, parse_n(n)?),
        ["etrcq", q, n] => {
            let q = parse_rational(q).map_err(|e| perr(hline, e.to_string()))?;
            if q <= Rational::zero() {
                return Err(perr(hline, "q must be positive".into()));
            }
            (Some(q), parse_n(n)?)
        }
        _ => return Err(perr(hline, format!("expected 'etrinv N' or 'etrcq Q N', got {header:?}"))),
    };
    let mut constraints = Vec::new();
    for (line, l) in lines {
        let toks: Vec<&str> = l.split_whitespace().collect();
        let tag = toks[0];
        let arity = Constraint::arity(tag).ok_or_else(|| perr(line, format!("unknown tag {tag:?}")))?;
        if toks.len() - 1 != arity {
            return Err(perr(line, format!("{tag} takes {arity} indices, got {}", toks.len() - 1)));
        }
        let ix = toks[1..]
            .iter()
            .map(|t| t.parse::<usize>().map_err(|_| perr(line, format!("bad index {t:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(&v) = ix.iter().find(|&&v| v >= n) {
            return Err(perr(line, format!("index {v} out of range for {n} variables")));
        }
        let c = Constraint::from_parts(tag, &ix);
        let ok = if q.is_some() { c.is_cq() } else { c.is_etrinv() };
        if !ok {
            return Err(perr(line, format!("{tag} not allowed in this dialect")));
        }
        constraints.push(c);
    }
    Ok(Instance { q, n, constraints })
}

pub fn serialize_instance(inst: &Instance) -> String {
    let mut s = match &inst.q {
        None => format!("etrinv {}\n", inst.n),
        Some(q) => format!("etrcq {} {}\n", format_rational(q), inst.n),
    };
    for c in &inst.constraints {
        s.push_str(c.tag());
        for v in c.vars() {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_assignment(text: &str) -> Result<Assignment, CoreError> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, strip_comment(l)))
        .filter(|(_, l)| !l.is_empty())
        .map(|(line, l)| parse_rational(l).map_err(|e| CoreError::Parse { line, msg: e.to_string() }))
        .collect()
}

pub fn serialize_assignment(a: &[Rational]) -> String {
    a.iter().map(|r| format_rational(r) + "\n").collect()
}

// ------------------------------------------------------------ optimizers

/// Candidate values a single variable could take to satisfy `c`, given the
/// other coordinates of `a`.
fn implied_values(c: &Constraint, var: usize, a: &[Rational], q: &Rational) -> Vec<Rational> {
    use Constraint::*;
    let val = |i: usize| a[i].clone();
    let mut out = Vec::new();
    let vars = c.vars();
    if !vars.contains(&var) {
        return out;
    }
    // Solve only when the variable occurs once; aliased cases are covered by
    // the value grid.
    if vars.iter().filter(|&&v| v == var).count() != 1 {
        return out;
    }
    let one = Rational::one();
    match *c {
        Eq1(_) => out.push(one),
        Inv(x, y) => {
            let other = if x == var { val(y) } else { val(x) };
            if !other.is_zero() {
                out.push(other.recip());
            }
        }
        Add(x, y, z) | Add3(x, y, z) => {
            if z == var {
                out.push(val(x) + val(y));
            } else {
                let other = if x == var { val(y) } else { val(x) };
                out.push(val(z) - other);
            }
        }
        Eq(x, y) => out.push(if x == var { val(y) } else { val(x) }),
        Scale(x, y) => {
            let f = &one + q;
            out.push(if x == var { val(y) * &f } else { val(x) / &f });
        }
        Add4(x, y, z, w) => {
            let (l, r) = (val(x) + val(y), val(z) + val(w));
            if var == x {
                out.push(r - val(y));
            } else if var == y {
                out.push(r - val(x));
            } else if var == z {
                out.push(l - val(w));
            } else {
                out.push(l - val(z));
            }
        }
        Mul3(x, y, z) => {
            if z == var {
                out.push(val(x) * val(y));
            } else {
                let other = if x == var { val(y) } else { val(x) };
                if !other.is_zero() {
                    out.push(val(z) / other);
                }
            }
        }
        Mul4(x, y, z, w) => {
            let (l, r) = (val(x) * val(y), val(z) * val(w));
            let (prod, other) = if var == x {
                (r, val(y))
            } else if var == y {
                (r, val(x))
            } else if var == z {
                (l, val(w))
            } else {
                (l, val(z))
            };
            if !other.is_zero() {
                out.push(prod / other);
            }
        }
        Null => {}
    }
    out
}

fn value_grid() -> Vec<Rational> {
    let mut g: Vec<Rational> = (4..=16).map(|k| rat(k, 8)).collect();
    g.push(rat(2, 3));
    g.push(rat(4, 3));
    g
}

/// Best satisfied fraction found by random restarts plus coordinate descent
/// over constraint-implied values; returns `1 - best`. A heuristic figure,
/// never a certificate.
pub fn unsat_lower_bound(inst: &Instance, trials: u64, seed: u64) -> Rational {
    best_found(inst, trials, seed).0
}

pub fn best_found(inst: &Instance, trials: u64, seed: u64) -> (Rational, Assignment) {
    let grid = value_grid();
    let q = inst.q_or_zero();
    let score = |a: &[Rational]| evaluate(inst, a).unwrap().satisfied;
    let mut best_a: Assignment = vec![Rational::one(); inst.n];
    let mut best = score(&best_a);
    for t in 0..trials.max(1) {
        let mut rng = seeds::stream(seed, t);
        let mut a: Assignment = if t == 0 {
            vec![Rational::one(); inst.n]
        } else {
            (0..inst.n).map(|_| grid.choose(&mut rng).unwrap().clone()).collect()
        };
        let mut cur = score(&a);
        for _pass in 0..8 {
            let mut improved = false;
            let mut order: Vec<usize> = (0..inst.n).collect();
            order.shuffle(&mut rng);
            for &v in &order {
                let mut cands: Vec<Rational> = inst
                    .constraints
                    .iter()
                    .flat_map(|c| implied_values(c, v, &a, &q))
                    .filter(crate::numerics::in_unit_range)
                    .collect();
                cands.push(grid[rng.gen_range(0..grid.len())].clone());
                let old = a[v].clone();
                for cand in cands {
                    a[v] = cand;
                    let s = score(&a);
                    if s > cur {
                        cur = s;
                        improved = true;
                    } else {
                        a[v] = old.clone();
                    }
                    if a[v] != old {
                        break;
                    }
                }
            }
            if !improved || cur == inst.len() {
                break;
            }
        }
        if cur > best {
            best = cur;
            best_a = a;
        }
        if best == inst.len() {
            break;
        }
    }
    let frac = if inst.is_empty() { Rational::one() } else { rat(best as i64, inst.len() as i64) };
    (Rational::one() - frac, best_a)
}

/// Exact minimum unsatisfied fraction over `grid^n`.
pub fn brute_force_unsat_grid(inst: &Instance, grid: &[Rational], budget: u64) -> Result<Rational, CoreError> {
    Ok(brute_force_grid(inst, grid, budget)?.0)
}

pub fn brute_force_grid(inst: &Instance, grid: &[Rational], budget: u64) -> Result<(Rational, Assignment), CoreError> {
    let needed = (grid.len() as f64).powi(inst.n as i32);
    if needed > budget as f64 || grid.is_empty() {
        return Err(CoreError::Budget { needed, budget });
    }
    let mut idx = vec![0usize; inst.n];
    let mut best = usize::MAX;
    let mut best_a = vec![];
    loop {
        let a: Assignment = idx.iter().map(|&i| grid[i].clone()).collect();
        let r = evaluate(inst, &a)?;
        let unsat = r.total - r.satisfied;
        if unsat < best {
            best = unsat;
            best_a = a;
            if best == 0 {
                break;
            }
        }
        let mut k = 0;
        while k < inst.n {
            idx[k] += 1;
            if idx[k] < grid.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == inst.n {
            break;
        }
    }
    let frac = if inst.is_empty() { Rational::zero() } else { rat(best as i64, inst.len() as i64) };
    Ok((frac, best_a))
}

// ------------------------------------------------------- hard instances

pub fn is_prime(p: u64) -> bool {
    if p < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= p {
        if p % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

#[derive(Debug, Clone)]
pub struct HardInstance {
    pub p: u64,
    pub j: usize,
    pub instance: Instance,
    /// Value of variable `i` is `2^(exponents[i] / p)`.
    pub exponents: Vec<u64>,
    pub witness: Vec<Fixed>,
}

/// Instance forcing `x0^p = 2`. Variable layout: `x_0..x_j`, `y_0..y_j`, `V1`,
/// where `j` is the index of the top bit of `p` so every forced value is
/// `2^(l/p)` with `l <= p`.
pub fn generate_hard_instance(p: u64, q: Rational) -> Result<HardInstance, CoreError> {
    if !is_prime(p) {
        return Err(CoreError::NotPrime(p));
    }
    let j = 63 - p.leading_zeros() as usize;
    let x = |i: usize| i;
    let y = |i: usize| j + 1 + i;
    let v1 = 2 * j + 2;
    let n = 2 * j + 3;
    let bit = |i: usize| (p >> i) & 1 == 1;
    let mut cs = Vec::new();
    for i in 0..j {
        cs.push(Constraint::Mul3(x(i), x(i), x(i + 1)));
    }
    if bit(0) {
        cs.push(Constraint::Eq(y(0), x(0)));
    } else {
        cs.push(Constraint::Mul3(y(0), y(0), y(0)));
    }
    for i in 1..=j {
        if bit(i) {
            cs.push(Constraint::Mul3(x(i), y(i - 1), y(i)));
        } else {
            cs.push(Constraint::Eq(y(i), y(i - 1)));
        }
    }
    cs.push(Constraint::Mul3(v1, v1, v1));
    cs.push(Constraint::Add3(v1, v1, y(j)));
    let instance = Instance::etrcq(q, n, cs)?;

    let mut exponents = vec![0u64; n];
    let mut acc = 0u64;
    for i in 0..=j {
        exponents[x(i)] = 1 << i;
        if bit(i) {
            acc += 1 << i;
        }
        exponents[y(i)] = acc;
    }
    exponents[v1] = 0;
    let witness = exponents
        .iter()
        .map(|&l| Fixed::integer_root(&(BigInt::one() << l as usize), p as u32))
        .collect();
    Ok(HardInstance { p, j, instance, exponents, witness })
}
