//! The midpoint code: a linear code `G^n x G -> G^{(k1+1)^n}` over any
//! abelian group, its four-query midpoint tester and two-query decoder.

use crate::numerics::{group_combine, integer_multiple, Group, GroupElement, Rational};
use crate::stats::{run_trials, wilson, Estimate, Z99};
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive};
use rand::Rng;
use serde::Serialize;
use std::collections::HashMap;
use std::fmt::Debug;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodeError {
    #[error("need k1 > k2 >= 1 (got k1={k1}, k2={k2})")]
    BadParams { k1: i128, k2: i128 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("no grid position x with x+d in the grid")]
    NoValidPosition,
    #[error("point {0:?} lies outside the grid")]
    OutsideGrid(Vec<i128>),
    #[error("explicit table has {got} entries, grid has {expected}")]
    TableSize { expected: usize, got: usize },
    #[error("delta must lie in (0, 1]")]
    BadDelta,
}

/// Group operations the code needs. `same` is the equality the tester uses,
/// which lets approximate carriers plug in.
pub trait AbelianGroup: Clone + Send + Sync {
    type Elem: Clone + Debug + Send + Sync;
    fn identity(&self) -> Self::Elem;
    fn op(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem;
    fn inv(&self, a: &Self::Elem) -> Self::Elem;
    fn same(&self, a: &Self::Elem, b: &Self::Elem) -> bool;
    fn times(&self, d: i128, a: &Self::Elem) -> Self::Elem {
        let mut acc = self.identity();
        let mut base = if d < 0 { self.inv(a) } else { a.clone() };
        let mut e = d.unsigned_abs();
        while e > 0 {
            if e & 1 == 1 {
                acc = self.op(&acc, &base);
            }
            base = self.op(&base, &base);
            e >>= 1;
        }
        acc
    }
}

impl AbelianGroup for Group {
    type Elem = GroupElement;
    fn identity(&self) -> GroupElement {
        Group::identity(self)
    }
    fn op(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        group_combine(a, b).expect("elements of one group")
    }
    fn inv(&self, a: &GroupElement) -> GroupElement {
        a.inverse()
    }
    fn same(&self, a: &GroupElement, b: &GroupElement) -> bool {
        a == b
    }
    fn times(&self, d: i128, a: &GroupElement) -> GroupElement {
        integer_multiple(&BigInt::from(d), a)
    }
}

pub type Point = Vec<i128>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodeParams {
    pub n: usize,
    pub k1: i128,
    pub k2: i128,
    /// `(delta, r)` when built by [`CodeParams::from_formula`].
    pub provenance: Option<(String, u64)>,
}

impl CodeParams {
    pub fn new(n: usize, k1: i128, k2: i128) -> Result<Self, CodeError> {
        if !(k1 > k2 && k2 >= 1) {
            return Err(CodeError::BadParams { k1, k2 });
        }
        Ok(CodeParams { n, k1, k2, provenance: None })
    }

    /// `k2 = 4 ceil(1/delta) r`, `k1 = 8 ceil(1/delta) n k2`.
    pub fn from_formula(n: usize, delta: &Rational, r: u64) -> Result<Self, CodeError> {
        if !delta.is_positive() || *delta > Rational::one() {
            return Err(CodeError::BadDelta);
        }
        let inv = delta.recip().ceil().to_integer().to_i128().ok_or(CodeError::BadDelta)?;
        let k2 = 4 * inv * r as i128;
        let k1 = 8 * inv * n as i128 * k2;
        let mut p = CodeParams::new(n, k1, k2)?;
        p.provenance = Some((crate::numerics::format_rational(delta), r));
        Ok(p)
    }

    /// Number of grid points, `(k1+1)^n`, when it fits in a u128.
    pub fn m(&self) -> Option<u128> {
        (0..self.n).try_fold(1u128, |acc, _| acc.checked_mul(self.k1 as u128 + 1))
    }

    pub fn in_grid(&self, x: &[i128]) -> bool {
        x.len() == self.n && x.iter().all(|&c| 0 <= c && c <= self.k1)
    }

    pub fn index_of(&self, x: &[i128]) -> usize {
        x.iter().rev().fold(0usize, |acc, &c| acc * (self.k1 as usize + 1) + c as usize)
    }

    pub fn point_of(&self, mut idx: usize) -> Point {
        let b = self.k1 as usize + 1;
        (0..self.n)
            .map(|_| {
                let c = idx % b;
                idx /= b;
                c as i128
            })
            .collect()
    }
}

type BaseFn<E> = Arc<dyn Fn(&[i128]) -> E + Send + Sync>;

#[derive(Clone)]
enum Backing<E> {
    Table(Arc<Vec<E>>),
    Lazy(BaseFn<E>),
}

/// A word of the code's ambient space, `A : {0..k1}^n -> G`, either a table
/// or a base function with a sparse corruption overlay.
#[derive(Clone)]
pub struct ProofString<G: AbelianGroup> {
    pub params: CodeParams,
    pub group: G,
    backing: Backing<G::Elem>,
    overlay: HashMap<Point, G::Elem>,
}

impl<G: AbelianGroup> Debug for ProofString<G> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProofString")
            .field("params", &self.params)
            .field("overlay", &self.overlay.len())
            .finish()
    }
}

impl<G: AbelianGroup> ProofString<G> {
    pub fn lazy(params: CodeParams, group: G, f: impl Fn(&[i128]) -> G::Elem + Send + Sync + 'static) -> Self {
        ProofString { params, group, backing: Backing::Lazy(Arc::new(f)), overlay: HashMap::new() }
    }

    pub fn table(params: CodeParams, group: G, table: Vec<G::Elem>) -> Result<Self, CodeError> {
        let expected = params.m().map(|m| m as usize).unwrap_or(usize::MAX);
        if table.len() != expected {
            return Err(CodeError::TableSize { expected, got: table.len() });
        }
        Ok(ProofString { params, group, backing: Backing::Table(Arc::new(table)), overlay: HashMap::new() })
    }

    pub fn query(&self, x: &[i128]) -> G::Elem {
        if let Some(v) = self.overlay.get(x) {
            return v.clone();
        }
        match &self.backing {
            Backing::Table(t) => t[self.params.index_of(x)].clone(),
            Backing::Lazy(f) => f(x),
        }
    }

    pub fn corrupt(&mut self, x: Point, value: G::Elem) -> Result<(), CodeError> {
        if !self.params.in_grid(&x) {
            return Err(CodeError::OutsideGrid(x));
        }
        self.overlay.insert(x, value);
        Ok(())
    }

    pub fn overlay_len(&self) -> usize {
        self.overlay.len()
    }

    pub fn overlay_points(&self) -> impl Iterator<Item = &Point> {
        self.overlay.keys()
    }
}

/// `A(x) = g + sum_i x_i alpha_i`, written additively.
pub fn encode<G: AbelianGroup + 'static>(
    alpha: &[G::Elem],
    g: G::Elem,
    params: &CodeParams,
    group: &G,
) -> Result<ProofString<G>, CodeError>
where
    G::Elem: 'static,
{
    if alpha.len() != params.n {
        return Err(CodeError::Dimension { expected: params.n, got: alpha.len() });
    }
    let alpha = alpha.to_vec();
    let grp = group.clone();
    Ok(ProofString::lazy(params.clone(), group.clone(), move |x| {
        x.iter().zip(&alpha).fold(g.clone(), |acc, (&xi, a)| grp.op(&acc, &grp.times(xi, a)))
    }))
}

// ------------------------------------------------------------ sampling

pub fn sample_point<R: Rng + ?Sized>(rng: &mut R, params: &CodeParams) -> Point {
    (0..params.n).map(|_| rng.gen_range(0..=params.k1)).collect()
}

/// The four query points of one midpoint test run, or `None` when `x2` or
/// `y2` leaves the grid (the run then passes automatically).
#[derive(Debug, Clone, PartialEq)]
pub struct MidpointQueries {
    pub x1: Point,
    pub x2: Point,
    pub y1: Point,
    pub y2: Point,
}

pub fn midpoint_queries(params: &CodeParams, x1: Point, y1: Point, z: &[i128]) -> Option<MidpointQueries> {
    let x2: Point = x1.iter().zip(z).map(|(a, zi)| params.k1 + zi - a).collect();
    let y2: Point = y1.iter().zip(z).map(|(a, zi)| params.k1 + zi - a).collect();
    if params.in_grid(&x2) && params.in_grid(&y2) {
        Some(MidpointQueries { x1, x2, y1, y2 })
    } else {
        None
    }
}

pub fn sample_midpoint<R: Rng + ?Sized>(rng: &mut R, params: &CodeParams) -> Option<MidpointQueries> {
    let x1 = sample_point(rng, params);
    let y1 = sample_point(rng, params);
    let z: Point = (0..params.n).map(|_| rng.gen_range(-params.k2..=params.k2)).collect();
    midpoint_queries(params, x1, y1, &z)
}

/// Uniform `x` with both `x` and `x+d` in the grid.
pub fn sample_decode_position<R: Rng + ?Sized>(rng: &mut R, params: &CodeParams, d: &[i128]) -> Result<Point, CodeError> {
    if d.len() != params.n {
        return Err(CodeError::Dimension { expected: params.n, got: d.len() });
    }
    d.iter()
        .map(|&di| {
            let lo = 0.max(-di);
            let hi = params.k1.min(params.k1 - di);
            if lo > hi {
                Err(CodeError::NoValidPosition)
            } else {
                Ok(rng.gen_range(lo..=hi))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TestOutcome {
    Pass,
    Fail,
    VacuousPass,
}

impl TestOutcome {
    pub fn passed(self) -> bool {
        self != TestOutcome::Fail
    }
}

pub fn check_midpoint<G: AbelianGroup>(a: &ProofString<G>, q: &Option<MidpointQueries>) -> TestOutcome {
    match q {
        None => TestOutcome::VacuousPass,
        Some(q) => {
            let g = &a.group;
            let l = g.op(&a.query(&q.x1), &a.query(&q.x2));
            let r = g.op(&a.query(&q.y1), &a.query(&q.y2));
            if g.same(&l, &r) {
                TestOutcome::Pass
            } else {
                TestOutcome::Fail
            }
        }
    }
}

pub fn midpoint_test<G: AbelianGroup, R: Rng + ?Sized>(a: &ProofString<G>, rng: &mut R) -> TestOutcome {
    let q = sample_midpoint(rng, &a.params);
    check_midpoint(a, &q)
}

/// Runs the test over every `(x1, y1, z)` triple; returns `(passes, total)`.
pub fn midpoint_exhaustive<G: AbelianGroup>(a: &ProofString<G>) -> Result<(u64, u64), CodeError> {
    let p = &a.params;
    let m = p.m().filter(|&m| m <= 1 << 20).ok_or(CodeError::BadParams { k1: p.k1, k2: p.k2 })? as usize;
    let zs = (2 * p.k2 + 1) as usize;
    let zcount = zs.pow(p.n as u32);
    let (mut ok, mut total) = (0, 0);
    for xi in 0..m {
        for yi in 0..m {
            for zi in 0..zcount {
                let mut r = zi;
                let z: Point = (0..p.n)
                    .map(|_| {
                        let c = (r % zs) as i128 - p.k2;
                        r /= zs;
                        c
                    })
                    .collect();
                let q = midpoint_queries(p, p.point_of(xi), p.point_of(yi), &z);
                total += 1;
                if check_midpoint(a, &q).passed() {
                    ok += 1;
                }
            }
        }
    }
    Ok((ok, total))
}

pub fn estimate_pass_rate<G: AbelianGroup>(a: &ProofString<G>, trials: u64, seed: u64) -> Estimate {
    run_trials(seed, trials, |rng| midpoint_test(a, rng).passed())
}

// ------------------------------------------------------------ decoding

pub fn decode_at<G: AbelianGroup>(a: &ProofString<G>, x: &[i128], d: &[i128]) -> G::Elem {
    let xd: Point = x.iter().zip(d).map(|(a, b)| a + b).collect();
    a.group.op(&a.query(&xd), &a.group.inv(&a.query(x)))
}

pub fn decode<G: AbelianGroup, R: Rng + ?Sized>(a: &ProofString<G>, d: &[i128], rng: &mut R) -> Result<G::Elem, CodeError> {
    let x = sample_decode_position(rng, &a.params, d)?;
    Ok(decode_at(a, &x, d))
}

/// Number of positions `x` with `x` and `x+d` in the grid.
pub fn valid_positions(params: &CodeParams, d: &[i128]) -> u128 {
    d.iter().map(|&di| (params.k1 + 1 - di.abs()).max(0) as u128).product()
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeReport<E> {
    pub value: E,
    pub count: u64,
    pub total: u64,
    pub frequency: f64,
    pub wilson99: (f64, f64),
    pub exhaustive: bool,
    /// Another value reached the same count; the first one seen is reported.
    pub tie: bool,
}

/// `B(d)`: the most common value of `A(x+d) - A(x)`. Scans every valid `x`
/// when there are at most `budget` of them, otherwise samples `budget`.
pub fn mode_statistic<G: AbelianGroup>(
    a: &ProofString<G>,
    d: &[i128],
    budget: u64,
    seed: u64,
) -> Result<ModeReport<G::Elem>, CodeError> {
    let p = &a.params;
    let valid = valid_positions(p, d);
    if valid == 0 {
        return Err(CodeError::NoValidPosition);
    }
    let mut tally: Vec<(G::Elem, u64)> = vec![];
    let mut add = |v: G::Elem| {
        if let Some(slot) = tally.iter_mut().find(|(w, _)| a.group.same(w, &v)) {
            slot.1 += 1;
        } else {
            tally.push((v, 1));
        }
    };
    let exhaustive = valid <= budget as u128;
    let total;
    if exhaustive {
        let ranges: Vec<(i128, i128)> = d.iter().map(|&di| (0.max(-di), p.k1.min(p.k1 - di))).collect();
        let mut x: Point = ranges.iter().map(|r| r.0).collect();
        'outer: loop {
            add(decode_at(a, &x, d));
            for i in 0..p.n {
                x[i] += 1;
                if x[i] <= ranges[i].1 {
                    continue 'outer;
                }
                x[i] = ranges[i].0;
            }
            break;
        }
        total = valid as u64;
    } else {
        let mut rng = crate::seeds::stream(seed, 0);
        for _ in 0..budget {
            add(decode(a, d, &mut rng)?);
        }
        total = budget;
    }
    let best = tally.iter().map(|t| t.1).max().unwrap_or(0);
    let tie = tally.iter().filter(|t| t.1 == best).count() > 1;
    let (value, count) = tally.into_iter().find(|t| t.1 == best).expect("nonempty tally");
    Ok(ModeReport {
        value,
        count,
        total,
        frequency: count as f64 / total as f64,
        wilson99: if exhaustive { (count as f64 / total as f64, count as f64 / total as f64) } else { wilson(count, total, Z99) },
        exhaustive,
        tie,
    })
}

/// Empirical `P[x + d in grid]` for uniform `x`.
pub fn grid_fraction(params: &CodeParams, d: &[i128], trials: u64, seed: u64) -> Estimate {
    run_trials(seed, trials, |rng| {
        let x = sample_point(rng, params);
        let xd: Point = x.iter().zip(d).map(|(a, b)| a + b).collect();
        params.in_grid(&xd)
    })
}

/// Every integer vector with `||d||_1 <= r` in dimension `n`.
pub fn l1_ball(n: usize, r: i128) -> Vec<Point> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = vec![];
    for c in -r..=r {
        for mut rest in l1_ball(n - 1, r - c.abs()) {
            rest.insert(0, c);
            out.push(rest);
        }
    }
    out
}

// ------------------------------------------------------------ adversaries

/// `A(x) = 0` when `x_1 <= k1/2`, else `1`, over the additive rationals.
pub fn adversarial_halfspace(params: &CodeParams) -> ProofString<Group> {
    let k1 = params.k1;
    ProofString::lazy(params.clone(), Group::AddQ, move |x| {
        let v = if 2 * x[0] <= k1 { 0 } else { 1 };
        GroupElement::AddQ(Rational::from_integer(v.into()))
    })
}

/// Minimum Hamming distance from a one-dimensional rational string to any
/// affine codeword `x -> g + a x`. Any codeword agreeing in two or more
/// places is the line through two of the points, so those lines suffice;
/// every other codeword is at distance at least `len - 1`.
pub fn min_distance_to_affine_1d(values: &[Rational]) -> usize {
    let n = values.len();
    let mut best = n.saturating_sub(1);
    for i in 0..n {
        for j in i + 1..n {
            let slope = (&values[j] - &values[i]) / Rational::from_integer((j - i).into());
            let agree = (0..n)
                .filter(|&x| {
                    let lx = &values[i] + &slope * Rational::from_integer((x as i64 - i as i64).into());
                    lx == values[x]
                })
                .count();
            best = best.min(n - agree);
        }
    }
    best
}

pub fn table_of<G: AbelianGroup>(a: &ProofString<G>) -> Option<Vec<G::Elem>> {
    let m = a.params.m()? as usize;
    Some((0..m).map(|i| a.query(&a.params.point_of(i))).collect())
}

/// `gcd` of the coordinates of `d`, for reporting.
pub fn content(d: &[i128]) -> i128 {
    d.iter().fold(0i128, |g, &x| g.gcd(&x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{int, rat};
    use rand::SeedableRng;

    fn addq(v: i64) -> GroupElement {
        GroupElement::AddQ(int(v))
    }

    #[test]
    fn encode_examples() {
        let p = CodeParams::new(1, 4, 1).unwrap();
        let a = encode(&[addq(2)], addq(0), &p, &Group::AddQ).unwrap();
        let vals: Vec<_> = (0..=4).map(|x| a.query(&[x])).collect();
        assert_eq!(vals, (0..5).map(|i| addq(2 * i)).collect::<Vec<_>>());

        let g = Group::ModP(5);
        let p = CodeParams::new(2, 2, 1).unwrap();
        let e = |v| g.element_from_int(v).unwrap();
        let a = encode(&[e(1), e(2)], e(3), &p, &g).unwrap();
        for x in 0..=2i64 {
            for y in 0..=2i64 {
                assert_eq!(a.query(&[x as i128, y as i128]), e((3 + x + 2 * y) % 5));
            }
        }
        assert!(encode(&[e(1)], e(0), &p, &g).is_err());
        let c = encode(&vec![Group::MulQ.identity(); 2], GroupElement::MulQ(rat(3, 2)), &p, &Group::MulQ).unwrap();
        assert_eq!(c.query(&[2, 1]), GroupElement::MulQ(rat(3, 2)));
    }

    #[test]
    fn formula_params() {
        let p = CodeParams::from_formula(2, &rat(1, 4), 2).unwrap();
        assert_eq!((p.k2, p.k1), (32, 2048));
        // both printed forms of k1 agree: 32 ceil(1/delta)^2 n r
        assert_eq!(p.k1, 32 * 16 * 2 * 2);
        assert!(CodeParams::new(1, 2, 2).is_err());
    }

    #[test]
    fn single_corruption_exact_rate() {
        let p = CodeParams::new(1, 8, 2).unwrap();
        let mut a = encode(&[addq(1)], addq(0), &p, &Group::AddQ).unwrap();
        a.corrupt(vec![3], addq(100)).unwrap();
        let (ok, total) = midpoint_exhaustive(&a).unwrap();
        assert_eq!(total, 9 * 9 * 5);
        // independent count: a non-vacuous run fails iff exactly one of the
        // pairs {x1,x2}, {y1,y2} touches the corrupted point 3
        let mut fails = 0;
        for x1 in 0..=8i64 {
            for y1 in 0..=8i64 {
                for z in -2..=2i64 {
                    let (x2, y2) = (8 + z - x1, 8 + z - y1);
                    if !(0..=8).contains(&x2) || !(0..=8).contains(&y2) {
                        continue;
                    }
                    let cx = (x1 == 3) as i32 + (x2 == 3) as i32;
                    let cy = (y1 == 3) as i32 + (y2 == 3) as i32;
                    if cx != cy {
                        fails += 1;
                    }
                }
            }
        }
        assert_eq!(total - ok, fails);
        let m = mode_statistic(&a, &[1], 100, 0).unwrap();
        assert_eq!((m.value, m.count, m.total), (addq(1), 6, 8));
    }

    #[test]
    fn decode_codeword_and_zero() {
        let p = CodeParams::new(2, 6, 1).unwrap();
        let a = encode(&[addq(3), addq(-2)], addq(7), &p, &Group::AddQ).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for d in l1_ball(2, 3) {
            assert_eq!(decode(&a, &d, &mut rng).unwrap(), addq(3 * d[0] as i64 - 2 * d[1] as i64));
        }
        assert_eq!(decode(&a, &[7, 0], &mut rng), Err(CodeError::NoValidPosition));
        assert_eq!(l1_ball(2, 2).len(), 13);
    }

    #[test]
    fn halfspace_distance_small() {
        let p = CodeParams::new(1, 16, 1).unwrap();
        let a = adversarial_halfspace(&p);
        let vals: Vec<Rational> = table_of(&a).unwrap().into_iter().map(|e| e.as_rational().unwrap().clone()).collect();
        assert_eq!(min_distance_to_affine_1d(&vals), 8);
    }
}
