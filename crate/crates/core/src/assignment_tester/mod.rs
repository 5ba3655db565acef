//! The constraint test on `V'` and the five-way assignment tester for
//! `P(C(q)^{2n})` constraints.
//!
//! `q` is carried symbolically: every value is a truncated series in `q`
//! (see [`QSeries`]), which is exact for the identities the tests check and
//! certifies range membership for every sufficiently small `q`. The concrete
//! exponent from [`select_q`] is reported alongside.

mod proof;
mod vprime;

pub use proof::{
    codeword, A2Setup, Cube, Index, Perturbation, QueryRef, SeriesAdd, SeriesMul, StringId, Tester, TesterProof,
    A2_MAX_VARS,
};
pub use vprime::{build_vprime, m_bound, select_q, select_q_for, QChoice, VPrime, VPrimeStats, MAX_ADD_PER_ATOM, MAX_MUL_PER_ATOM};

use crate::constraint_core::Constraint;
use crate::midpoint_code::{midpoint_queries, CodeError, CodeParams, Point, TestOutcome};
use crate::numerics::series::QSeries;
use crate::numerics::{rat, Rational, RingValue};
use crate::stats::{run_trials, Estimate};
use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, ToPrimitive};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TesterError {
    #[error("atom {0} is not a C(q) atom")]
    NotCq(&'static str),
    #[error("variable {var} out of range for {n} variables")]
    VarOutOfRange { var: usize, n: usize },
    #[error("V' has {0} variables; at most 128 are supported")]
    TooManyVars(usize),
    #[error("assignment is not in V: {0}")]
    NotInV(String),
    #[error("grid coordinates overflow i128")]
    Overflow,
    #[error(transparent)]
    Code(#[from] CodeError),
}

pub const ELL: usize = 4;

pub fn zeta() -> Rational {
    rat(1, 1000)
}

/// Constraint-test soundness threshold: passing with probability `1 - eps`
/// for `eps` below this forces `alpha` into `V'`.
pub fn constraint_eps() -> Rational {
    rat(1, 192)
}

pub fn edge_pass_threshold() -> Rational {
    rat(999, 1000)
}

/// Required agreement between `a` and `f(alpha)`.
pub fn closeness() -> Rational {
    rat(49, 50)
}

pub fn linear_delta() -> Rational {
    rat(1, 32)
}

// --------------------------------------------------------------- randomness

/// Source of the test's choices. Each call consumes an independent uniform
/// value in `0..n`.
pub trait Chooser {
    fn below(&mut self, n: u128) -> u128;

    fn bits(&mut self, k: usize) -> u128 {
        let mut v = 0u128;
        let mut done = 0;
        while done < k {
            let t = (k - done).min(64);
            v |= self.below(1u128 << t) << done;
            done += t;
        }
        v
    }

    fn range_incl(&mut self, lo: i128, hi: i128) -> i128 {
        lo + self.below((hi - lo + 1) as u128) as i128
    }
}

pub struct RngChooser<'a, R: Rng + ?Sized>(pub &'a mut R);

impl<R: Rng + ?Sized> Chooser for RngChooser<'_, R> {
    fn below(&mut self, n: u128) -> u128 {
        self.0.gen_range(0..n)
    }
}

/// Derandomised choices: a single integer `r`, read in mixed radix.
pub struct IntChooser {
    r: BigUint,
}

impl IntChooser {
    pub fn new(r: BigUint) -> Self {
        IntChooser { r }
    }
}

impl Chooser for IntChooser {
    fn below(&mut self, n: u128) -> u128 {
        let (q, c) = self.r.div_rem(&BigUint::from(n));
        self.r = q;
        c.to_u128().unwrap()
    }
}

// ------------------------------------------------------------ transcripts

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestType {
    LinearA,
    LinearB,
    Constraint,
    ConsistencyA,
    ConsistencyB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Midpoint,
    Row,
    V2Midpoint,
    V2Row,
    V1Midpoint,
    V1Row,
    V1Local,
    V3,
    Consistency,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transcript {
    pub test_type: TestType,
    pub branch: Branch,
    pub queries: Vec<QueryRef>,
    /// Over positions in `queries`.
    pub atom: Constraint,
    pub outcome: TestOutcome,
    pub seed: Option<u64>,
    /// False when some queried value left `[1/2, 2]`.
    pub in_range: bool,
}

/// `v` satisfies `c` as a real atom, with `one_plus_q` standing for `1+q`.
pub fn atom_holds(c: &Constraint, v: &[QSeries], one_plus_q: &QSeries) -> bool {
    let one = QSeries::one();
    match *c {
        Constraint::Eq1(a) => v[a] == one,
        Constraint::Inv(a, b) => v[a].mul(&v[b]) == one,
        Constraint::Add(a, b, c) | Constraint::Add3(a, b, c) => v[a].add(&v[b]) == v[c],
        Constraint::Eq(a, b) => v[a] == v[b],
        Constraint::Scale(a, b) => v[a] == one_plus_q.mul(&v[b]),
        Constraint::Add4(a, b, c, d) => v[a].add(&v[b]) == v[c].add(&v[d]),
        Constraint::Mul3(a, b, c) => v[a].mul(&v[b]) == v[c],
        Constraint::Mul4(a, b, c, d) => v[a].mul(&v[b]) == v[c].mul(&v[d]),
        Constraint::Null => true,
    }
}

struct Plan {
    branch: Branch,
    queries: Vec<QueryRef>,
    atom: Constraint,
}

impl Plan {
    fn vacuous(branch: Branch) -> Self {
        Plan { branch, queries: vec![], atom: Constraint::Null }
    }
}

fn run_plan(proof: &TesterProof, test_type: TestType, plan: Plan) -> Transcript {
    let vals: Vec<QSeries> = plan.queries.iter().map(|r| proof.query(r)).collect();
    let in_range = vals.iter().all(|v| v.in_unit_range());
    let outcome = if plan.queries.is_empty() {
        TestOutcome::VacuousPass
    } else if in_range && atom_holds(&plan.atom, &vals, &QSeries::one().add(&QSeries::q())) {
        TestOutcome::Pass
    } else {
        TestOutcome::Fail
    };
    Transcript { test_type, branch: plan.branch, queries: plan.queries, atom: plan.atom, outcome, seed: None, in_range }
}

fn grid_point(ch: &mut dyn Chooser, p: &CodeParams) -> Point {
    (0..p.n).map(|_| ch.range_incl(0, p.k1)).collect()
}

fn midpoint_plan(ch: &mut dyn Chooser, p: &CodeParams, s: StringId, branch: Branch, additive: bool) -> Plan {
    let x1 = grid_point(ch, p);
    let y1 = grid_point(ch, p);
    let z: Point = (0..p.n).map(|_| ch.range_incl(-p.k2, p.k2)).collect();
    match midpoint_queries(p, x1, y1, &z) {
        None => Plan::vacuous(branch),
        Some(m) => Plan {
            branch,
            queries: [m.x1, m.x2, m.y1, m.y2].into_iter().map(|x| QueryRef::grid(s, x)).collect(),
            atom: if additive { Constraint::Add4(0, 1, 2, 3) } else { Constraint::Mul4(0, 1, 2, 3) },
        },
    }
}

/// Uniform `x` with `x` and `x + d` in the grid.
fn row_position(ch: &mut dyn Chooser, p: &CodeParams, d: &[i128]) -> (Point, Point) {
    let x: Point = d.iter().map(|&di| ch.range_incl(0.max(-di), p.k1.min(p.k1 - di))).collect();
    let xd = x.iter().zip(d).map(|(a, b)| a + b).collect();
    (x, xd)
}

fn linear_plan(ch: &mut dyn Chooser, t: &Tester, cube: StringId, l: StringId) -> Plan {
    if ch.below(2) == 0 {
        return midpoint_plan(ch, &t.params_l, l, Branch::Midpoint, false);
    }
    let sigma = ch.bits(t.n);
    let d: Point = (0..t.n).map(|i| (sigma >> i & 1) as i128).collect();
    let (x, xd) = row_position(ch, &t.params_l, &d);
    Plan {
        branch: Branch::Row,
        queries: vec![QueryRef::cube(cube, sigma), QueryRef::grid(l, x), QueryRef::grid(l, xd)],
        atom: Constraint::Mul3(0, 1, 2),
    }
}

fn constraint_plan(ch: &mut dyn Chooser, t: &Tester) -> Plan {
    let nn = t.n_vars();
    match ch.below(3) {
        0 => {
            if ch.below(2) == 0 {
                return midpoint_plan(ch, &t.params_a1, StringId::A1, Branch::V2Midpoint, false);
            }
            let sigma = ch.bits(nn);
            let (x, xd) = row_position(ch, &t.params_a1, &t.a1_shift(sigma));
            Plan {
                branch: Branch::V2Row,
                queries: vec![
                    QueryRef::grid(StringId::A1, x),
                    QueryRef::cube(StringId::U, sigma),
                    QueryRef::grid(StringId::A1, xd),
                ],
                atom: Constraint::Mul3(0, 1, 2),
            }
        }
        1 => match &t.a2 {
            Some(a2) => {
                if ch.below(2) == 0 {
                    return midpoint_plan(ch, &a2.params, StringId::A2, Branch::V1Midpoint, true);
                }
                let sigma = ch.bits(nn);
                let (x, xd) = row_position(ch, &a2.params, &t.a2_shift(sigma).unwrap());
                Plan {
                    branch: Branch::V1Row,
                    queries: vec![
                        QueryRef::grid(StringId::A2, xd),
                        QueryRef::cube(StringId::U, 0),
                        QueryRef::grid(StringId::A2, x),
                        QueryRef::cube(StringId::U, sigma),
                    ],
                    atom: Constraint::Add4(0, 1, 2, 3),
                }
            }
            None => {
                if t.vp.add.is_empty() {
                    return Plan::vacuous(Branch::V1Local);
                }
                let (i, j, k) = t.vp.add[ch.below(t.vp.add.len() as u128) as usize];
                let mask = 1u128 << i | 1u128 << j | 1u128 << k;
                let sigma = ch.bits(nn) & !mask;
                Plan {
                    branch: Branch::V1Local,
                    queries: vec![
                        QueryRef::cube(StringId::U, sigma | 1 << i),
                        QueryRef::cube(StringId::U, sigma | 1 << j),
                        QueryRef::cube(StringId::U, sigma | 1 << k),
                        QueryRef::cube(StringId::U, sigma),
                    ],
                    atom: Constraint::Add4(0, 1, 2, 3),
                }
            }
        },
        _ => {
            let sigma = ch.bits(nn) & !(1u128 << t.vp.aq);
            Plan {
                branch: Branch::V3,
                queries: vec![QueryRef::cube(StringId::U, sigma | 1 << t.vp.aq), QueryRef::cube(StringId::U, sigma)],
                atom: Constraint::Scale(0, 1),
            }
        }
    }
}

/// `(sigma1, sigma2)`: inside the block of `n` coordinates starting at
/// `offset`, each bit of `sigma2` is kept with probability 1/3 and flipped
/// otherwise; outside it `sigma2 = sigma1`.
pub fn consistency_pair(ch: &mut dyn Chooser, n_vars: usize, offset: usize, n: usize) -> (u128, u128) {
    let s1 = ch.bits(n_vars);
    let mut s2 = s1;
    for i in offset..offset + n {
        if ch.below(3) != 0 {
            s2 ^= 1 << i;
        }
    }
    (s1, s2)
}

fn consistency_plan(ch: &mut dyn Chooser, t: &Tester, beta: bool) -> Plan {
    let offset = if beta { t.n } else { 0 };
    let (s1, s2) = consistency_pair(ch, t.n_vars(), offset, t.n);
    let mask = (1u128 << t.n) - 1;
    let (m1, m2) = ((s1 >> offset) & mask, (s2 >> offset) & mask);
    let cube = if beta { StringId::B } else { StringId::A };
    Plan {
        branch: Branch::Consistency,
        queries: vec![
            QueryRef::cube(cube, m1),
            QueryRef::cube(StringId::U, s2),
            QueryRef::cube(cube, m2),
            QueryRef::cube(StringId::U, s1),
        ],
        atom: Constraint::Mul4(0, 1, 2, 3),
    }
}

/// One run of the constraint test on `u, A1, A2`.
pub fn constraint_test(t: &Tester, proof: &TesterProof, ch: &mut dyn Chooser) -> Transcript {
    let plan = constraint_plan(ch, t);
    run_plan(proof, TestType::Constraint, plan)
}

/// One run of the assignment tester: a uniform choice among the five tests.
pub fn assignment_test(t: &Tester, proof: &TesterProof, ch: &mut dyn Chooser) -> Transcript {
    let (ty, plan) = match ch.below(5) {
        0 => (TestType::LinearA, linear_plan(ch, t, StringId::A, StringId::L1)),
        1 => (TestType::LinearB, linear_plan(ch, t, StringId::B, StringId::L2)),
        2 => (TestType::Constraint, constraint_plan(ch, t)),
        3 => (TestType::ConsistencyA, consistency_plan(ch, t, false)),
        _ => (TestType::ConsistencyB, consistency_plan(ch, t, true)),
    };
    run_plan(proof, ty, plan)
}

/// Runs the tester on the derandomised choice `r`.
pub fn assignment_test_at(t: &Tester, proof: &TesterProof, r: &BigUint) -> Transcript {
    assignment_test(t, proof, &mut IntChooser::new(r.clone()))
}

pub fn estimate_assignment(t: &Tester, proof: &TesterProof, trials: u64, seed: u64) -> Estimate {
    run_trials(seed, trials, |rng| assignment_test(t, proof, &mut RngChooser(rng)).outcome.passed())
}

pub fn estimate_constraint(t: &Tester, proof: &TesterProof, trials: u64, seed: u64) -> Estimate {
    run_trials(seed, trials, |rng| constraint_test(t, proof, &mut RngChooser(rng)).outcome.passed())
}

// --------------------------------------------------------- randomness size

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RandomnessSize {
    /// `R`, when every branch could be enumerated.
    #[serde(serialize_with = "ser_opt_big")]
    pub exact: Option<BigUint>,
    /// The lcm of the enumerated path sizes, which divides `R`.
    #[serde(serialize_with = "ser_big")]
    pub lower_bound: BigUint,
}

fn ser_big<S: serde::Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&v.to_string())
}

fn ser_opt_big<S: serde::Serializer>(v: &Option<BigUint>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.serialize_some(&v.to_string()),
        None => s.serialize_none(),
    }
}

/// Largest `N` for which the per-vertex shifts are enumerated.
pub const ENUMERATE_VARS: usize = 16;

fn midpoint_paths(p: &CodeParams) -> BigUint {
    let k1 = BigUint::from(p.k1 as u128 + 1);
    let k2 = BigUint::from(2 * p.k2 as u128 + 1);
    k1.pow(2 * p.n as u32) * k2.pow(p.n as u32)
}

fn row_paths(p: &CodeParams, d: &[i128]) -> BigUint {
    d.iter().map(|&di| BigUint::from((p.k1 + 1 - di.abs()) as u128)).product()
}

/// `R`: the least common multiple of all path sizes of the choice tree, so
/// a uniform integer in `[R]` induces every branch's distribution exactly.
pub fn randomness_size(t: &Tester) -> RandomnessSize {
    let nn = t.n_vars();
    let mut acc = BigUint::one();
    let mut exact = true;
    let mut add = |x: BigUint| acc = acc.lcm(&x);
    let pow2 = |k: usize| BigUint::one() << k;
    for _ in 0..2 {
        let pre = BigUint::from(5u32 * 2);
        add(&pre * midpoint_paths(&t.params_l));
        for ones in 0..=t.n {
            let d: Vec<i128> = (0..t.n).map(|i| (i < ones) as i128).collect();
            add(&pre * pow2(t.n) * row_paths(&t.params_l, &d));
        }
    }
    let pre = BigUint::from(5u32 * 3 * 2);
    add(&pre * midpoint_paths(&t.params_a1));
    if nn <= ENUMERATE_VARS {
        for s in 0..1u128 << nn {
            add(&pre * pow2(nn) * row_paths(&t.params_a1, &t.a1_shift(s)));
        }
    } else {
        exact = false;
    }
    match &t.a2 {
        Some(a2) => {
            add(&pre * midpoint_paths(&a2.params));
            for s in 0..1u128 << nn {
                add(&pre * pow2(nn) * row_paths(&a2.params, &t.a2_shift(s).unwrap()));
            }
        }
        None => {
            let base = BigUint::from(15u32);
            if t.vp.add.is_empty() {
                add(base);
            } else {
                add(&base * BigUint::from(t.vp.add.len()) * pow2(nn));
            }
        }
    }
    add(BigUint::from(15u32) * pow2(nn));
    add(BigUint::from(5u32) * pow2(nn) * BigUint::from(3u32).pow(t.n as u32));
    RandomnessSize { exact: if exact { Some(acc.clone()) } else { None }, lower_bound: acc }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TesterParams {
    pub n: usize,
    pub q: QChoice,
    pub randomness: RandomnessSize,
    pub ell: usize,
    pub zeta: String,
}

impl TesterParams {
    pub fn new(t: &Tester) -> Self {
        TesterParams {
            n: t.n,
            q: select_q_for(t.n, t.n_vars()),
            randomness: randomness_size(t),
            ell: ELL,
            zeta: "1/1000".into(),
        }
    }
}

// ---------------------------------------------------------------- decoding

/// Plurality of `u_{sigma + e_i} / u_sigma - 1` over sampled `sigma`, for
/// every coordinate `i`.
pub fn decode_alpha(proof: &TesterProof, samples: usize, seed: u64) -> Vec<QSeries> {
    let mut rng = crate::seeds::stream(seed, 0);
    let nn = proof.n_vars;
    (0..nn)
        .map(|i| {
            let mut buckets: Vec<(QSeries, usize)> = vec![];
            for _ in 0..samples {
                let sigma = RngChooser(&mut rng).bits(nn) & !(1u128 << i);
                let lo = proof.query(&QueryRef::cube(StringId::U, sigma));
                let hi = proof.query(&QueryRef::cube(StringId::U, sigma | 1 << i));
                let Some(inv) = lo.recip() else { continue };
                let v = hi.mul(&inv).sub(&QSeries::one());
                match buckets.iter_mut().find(|(b, _)| b.certified_eq(&v)) {
                    Some(b) => b.1 += 1,
                    None => buckets.push((v, 1)),
                }
            }
            buckets.into_iter().max_by_key(|b| b.1).map(|b| b.0).unwrap_or_else(QSeries::zero)
        })
        .collect()
}

/// `prod_{i in sigma} (1 + alpha'_i)` for scaled values `alpha' = q x`.
pub fn codeword_scaled(scaled: &[QSeries], sigma: u128) -> QSeries {
    scaled
        .iter()
        .enumerate()
        .filter(|(i, _)| sigma >> i & 1 == 1)
        .fold(QSeries::one(), |acc, (_, a)| acc.mul(&QSeries::one().add(a)))
}

/// Fraction of `sigma` where string `s` agrees with `f` of the decoded values.
pub fn agreement(proof: &TesterProof, s: StringId, scaled: &[QSeries]) -> f64 {
    let n = scaled.len();
    let agree = (0..1u128 << n)
        .filter(|&sigma| proof.query(&QueryRef::cube(s, sigma)).certified_eq(&codeword_scaled(scaled, sigma)))
        .count();
    agree as f64 / (1u64 << n) as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct SoundnessCase {
    pub name: String,
    pub estimate: Estimate,
    /// Wilson lower bound at or above the pass threshold.
    pub qualifies: bool,
    pub decoded_in_vprime: Option<bool>,
    pub agreement_a: Option<f64>,
    pub agreement_b: Option<f64>,
    /// The lemma's conclusion holds, or the case does not qualify.
    pub consistent: bool,
}

/// Measures the assignment tester on `proof`; when it passes at rate at
/// least 999/1000, decodes `alpha` and checks `alpha in V'` and
/// 49/50-closeness of `a` and `b` to the decoded codewords.
pub fn edge_soundness_case(t: &Tester, name: &str, proof: &TesterProof, trials: u64, seed: u64) -> SoundnessCase {
    let est = estimate_assignment(t, proof, trials, seed);
    let threshold = crate::numerics::to_f64(&edge_pass_threshold());
    let qualifies = est.lower() >= threshold;
    let mut case = SoundnessCase {
        name: name.into(),
        estimate: est,
        qualifies,
        decoded_in_vprime: None,
        agreement_a: None,
        agreement_b: None,
        consistent: true,
    };
    if qualifies {
        let alpha = decode_alpha(proof, 64, seed ^ 0xdec0de);
        let inside = t.vp.holds(&alpha, &QSeries::q());
        let close = crate::numerics::to_f64(&closeness());
        let ag_a = agreement(proof, StringId::A, &alpha[..t.n]);
        let ag_b = agreement(proof, StringId::B, &alpha[t.n..2 * t.n]);
        case.decoded_in_vprime = Some(inside);
        case.agreement_a = Some(ag_a);
        case.agreement_b = Some(ag_b);
        case.consistent = inside && ag_a >= close && ag_b >= close;
    }
    case
}

/// The same harness for the constraint test alone, with threshold
/// `1 - eps` for `eps = 1/192`.
pub fn constraint_soundness_case(t: &Tester, name: &str, proof: &TesterProof, trials: u64, seed: u64) -> SoundnessCase {
    let est = estimate_constraint(t, proof, trials, seed);
    let threshold = 1.0 - crate::numerics::to_f64(&constraint_eps());
    let qualifies = est.lower() >= threshold;
    let mut case = SoundnessCase {
        name: name.into(),
        estimate: est,
        qualifies,
        decoded_in_vprime: None,
        agreement_a: None,
        agreement_b: None,
        consistent: true,
    };
    if qualifies {
        let alpha = decode_alpha(proof, 64, seed ^ 0xdec0de);
        let inside = t.vp.holds(&alpha, &QSeries::q());
        case.decoded_in_vprime = Some(inside);
        case.consistent = inside;
    }
    case
}

/// Rational source values as series.
pub fn series_point(x: &[Rational]) -> Vec<QSeries> {
    x.iter().map(QSeries::from_rational).collect()
}
