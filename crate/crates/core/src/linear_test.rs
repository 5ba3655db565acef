//! Membership testing for the image of an integer matrix map, exact integer
//! kernel bases, and the affine agreement bound.

use crate::midpoint_code::{
    check_midpoint, sample_decode_position, sample_midpoint, AbelianGroup, CodeError, CodeParams, Point, ProofString,
    midpoint_exhaustive, mode_statistic,
};
use crate::numerics::{rat, Rational};
use crate::stats::{run_trials, Estimate};
use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinearError {
    #[error("matrix must have at least one row and column")]
    Empty,
    #[error("ragged matrix: row {0} has the wrong length")]
    Ragged(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("the two affine maps are identical")]
    Identical,
    #[error("agreement {count} exceeds |R|^(n-1) = {bound}")]
    BoundViolated { count: u64, bound: u64 },
    #[error("every row of M is zero")]
    ZeroMatrix,
    #[error(transparent)]
    Code(#[from] CodeError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntegerMatrix {
    pub rows: usize,
    pub cols: usize,
    #[serde(serialize_with = "ser_bigints")]
    pub data: Vec<BigInt>,
}

fn ser_bigints<S: serde::Serializer>(v: &[BigInt], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        seq.serialize_element(&x.to_string())?;
    }
    seq.end()
}

impl IntegerMatrix {
    pub fn from_rows(rows: &[Vec<i64>]) -> Result<Self, LinearError> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.is_empty() || cols == 0 {
            return Err(LinearError::Empty);
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(LinearError::Ragged(i));
            }
            data.extend(r.iter().map(|&x| BigInt::from(x)));
        }
        Ok(IntegerMatrix { rows: rows.len(), cols, data })
    }

    pub fn from_big_rows(rows: Vec<Vec<BigInt>>, cols: usize) -> Self {
        let n = rows.len();
        IntegerMatrix { rows: n, cols, data: rows.into_iter().flatten().collect() }
    }

    pub fn at(&self, i: usize, j: usize) -> &BigInt {
        &self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[BigInt] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_l1(&self, i: usize) -> BigInt {
        self.row(i).iter().map(|x| x.abs()).sum()
    }

    pub fn apply(&self, v: &[BigInt]) -> Vec<BigInt> {
        (0..self.rows).map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }
}

/// Fraction-free Gaussian elimination; returns `(rank, det)` where `det` is
/// meaningful only for square full-rank input.
fn bareiss(mut a: Vec<Vec<BigInt>>) -> (usize, BigInt) {
    let rows = a.len();
    let cols = a.first().map(|r| r.len()).unwrap_or(0);
    let mut prev = BigInt::one();
    let mut sign = 1i32;
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let Some(p) = (r..rows).find(|&i| !a[i][c].is_zero()) else { continue };
        if p != r {
            a.swap(p, r);
            sign = -sign;
        }
        for i in r + 1..rows {
            for j in c + 1..cols {
                let v = (&a[i][j] * &a[r][c] - &a[i][c] * &a[r][j]) / &prev;
                a[i][j] = v;
            }
            a[i][c] = BigInt::zero();
        }
        prev = a[r][c].clone();
        r += 1;
    }
    let det = if r == rows && rows == cols {
        if sign < 0 {
            -prev
        } else {
            prev
        }
    } else {
        BigInt::zero()
    };
    (r, det)
}

pub fn rank(rows: &[Vec<BigInt>]) -> usize {
    if rows.is_empty() {
        0
    } else {
        bareiss(rows.to_vec()).0
    }
}

pub fn determinant(rows: &[Vec<BigInt>]) -> BigInt {
    if rows.is_empty() {
        return BigInt::one();
    }
    bareiss(rows.to_vec()).1
}

/// Integer basis of `{a : B a = 0}` with denominator and pivot map, so that
/// `a = (1/D) sum_i a[rho(i)] b_i` for every kernel vector `a`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelBasis {
    pub basis: Vec<Vec<BigInt>>,
    pub denominator: BigInt,
    pub pivots: Vec<usize>,
    /// Indices of the rows of `B` that were kept as independent.
    pub kept_rows: Vec<usize>,
}

impl KernelBasis {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn reconstruct(&self, a: &[Rational]) -> Vec<Rational> {
        let n = a.len();
        let d = Rational::from_integer(self.denominator.clone());
        let mut out = vec![Rational::zero(); n];
        for (b, &p) in self.basis.iter().zip(&self.pivots) {
            for j in 0..n {
                out[j] += &a[p] * Rational::from_integer(b[j].clone());
            }
        }
        out.into_iter().map(|x| x / &d).collect()
    }

    pub fn max_entry(&self) -> BigInt {
        self.basis.iter().flatten().map(|x| x.abs()).max().unwrap_or_default()
    }

    /// `(1/D) sum_i c_i b_i`; integer combinations land in the kernel.
    pub fn combine(&self, c: &[BigInt]) -> Vec<Rational> {
        let n = self.basis.first().map(|b| b.len()).unwrap_or(0);
        let mut out = vec![Rational::zero(); n];
        for (ci, b) in c.iter().zip(&self.basis) {
            for j in 0..n {
                out[j] += Rational::from_integer(ci * &b[j]);
            }
        }
        let d = Rational::from_integer(self.denominator.clone());
        out.into_iter().map(|x| x / &d).collect()
    }
}

/// Redundant rows are dropped, unit rows `e_rho(i)` are added left to right
/// while they keep the matrix nonsingular, and the basis vectors are the
/// adjugate columns belonging to the added rows.
pub fn kernel_basis(b: &IntegerMatrix) -> KernelBasis {
    let n = b.cols;
    let mut kept: Vec<Vec<BigInt>> = vec![];
    let mut kept_rows = vec![];
    for i in 0..b.rows {
        let mut trial = kept.clone();
        trial.push(b.row(i).to_vec());
        if rank(&trial) > kept.len() {
            kept = trial;
            kept_rows.push(i);
        }
    }
    let c = kept.len();
    let mut m = kept;
    let mut pivots = vec![];
    for j in 0..n {
        if m.len() == n {
            break;
        }
        let mut e = vec![BigInt::zero(); n];
        e[j] = BigInt::one();
        let mut trial = m.clone();
        trial.push(e);
        if rank(&trial) > m.len() {
            m = trial;
            pivots.push(j);
        }
    }
    let mut det = determinant(&m);
    if det.is_negative() && c > 0 {
        // negating a defining row leaves the kernel unchanged
        for x in m[0].iter_mut() {
            *x = -x.clone();
        }
        det = -det;
    }
    let basis = (0..pivots.len()).map(|i| adjugate_column(&m, c + i)).collect();
    KernelBasis { basis, denominator: det, pivots, kept_rows }
}

/// Same contract as [`kernel_basis`], computed by reduced row echelon form:
/// the pivots are the free columns and `D` clears every denominator. Much
/// cheaper than the adjugate for wide systems.
pub fn kernel_basis_rref(b: &IntegerMatrix) -> KernelBasis {
    let n = b.cols;
    let mut a: Vec<Vec<Rational>> =
        (0..b.rows).map(|i| b.row(i).iter().map(|x| Rational::from_integer(x.clone())).collect()).collect();
    let mut order: Vec<usize> = (0..b.rows).collect();
    let mut lead = vec![];
    let mut r = 0;
    for c in 0..n {
        let Some(p) = (r..a.len()).find(|&i| !a[i][c].is_zero()) else { continue };
        a.swap(p, r);
        order.swap(p, r);
        let inv = a[r][c].recip();
        for x in a[r].iter_mut() {
            *x *= &inv;
        }
        for i in 0..a.len() {
            if i != r && !a[i][c].is_zero() {
                let f = a[i][c].clone();
                for j in 0..n {
                    let t = &f * &a[r][j];
                    a[i][j] -= t;
                }
            }
        }
        lead.push(c);
        r += 1;
    }
    let free: Vec<usize> = (0..n).filter(|c| !lead.contains(c)).collect();
    let denominator = a[..r]
        .iter()
        .flatten()
        .fold(BigInt::one(), |acc, x| num_integer::Integer::lcm(&acc, x.denom()));
    let d = Rational::from_integer(denominator.clone());
    let basis = free
        .iter()
        .map(|&f| {
            let mut v = vec![BigInt::zero(); n];
            v[f] = denominator.clone();
            for (row, &c) in a[..r].iter().zip(&lead) {
                v[c] = -(&row[f] * &d).to_integer();
            }
            v
        })
        .collect();
    let mut kept_rows = order[..r].to_vec();
    kept_rows.sort_unstable();
    KernelBasis { basis, denominator, pivots: free, kept_rows }
}

/// Column `col` of `adj(m)`: entry `r` is the `(col, r)` cofactor.
fn adjugate_column(m: &[Vec<BigInt>], col: usize) -> Vec<BigInt> {
    let n = m.len();
    (0..n)
        .map(|r| {
            let minor: Vec<Vec<BigInt>> = (0..n)
                .filter(|&i| i != col)
                .map(|i| (0..n).filter(|&j| j != r).map(|j| m[i][j].clone()).collect())
                .collect();
            let d = determinant(&minor);
            if (r + col) % 2 == 0 {
                d
            } else {
                -d
            }
        })
        .collect()
}

// ------------------------------------------------------------ linear test

/// Tests that `alpha = M g` for the `g` encoded by a midpoint codeword `A`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearTestSpec {
    pub m: IntegerMatrix,
    pub r: i128,
    pub params: CodeParams,
    shifts: Vec<Point>,
}

impl LinearTestSpec {
    /// Uses the code parameters built from `delta = 1/4` and `r`.
    pub fn new(m: IntegerMatrix) -> Result<Self, LinearError> {
        let r = Self::range(&m)?;
        let params = CodeParams::from_formula(m.cols, &rat(1, 4), r as u64)?;
        Self::with_params(m, params)
    }

    pub fn with_params(m: IntegerMatrix, params: CodeParams) -> Result<Self, LinearError> {
        let r = Self::range(&m)?;
        if params.n != m.cols {
            return Err(LinearError::Dimension { expected: m.cols, got: params.n });
        }
        let shifts = (0..m.rows).map(|i| m.row(i).iter().map(|x| x.to_i128().expect("small entries")).collect()).collect();
        Ok(LinearTestSpec { m, r, params, shifts })
    }

    fn range(m: &IntegerMatrix) -> Result<i128, LinearError> {
        let r = (0..m.rows).map(|i| m.row_l1(i)).max().unwrap_or_default();
        let r = r.to_i128().unwrap_or(i128::MAX);
        if r < 1 {
            Err(LinearError::ZeroMatrix)
        } else {
            Ok(r)
        }
    }

    /// `M^T e_i`, the grid shift for row `i`.
    pub fn shift(&self, i: usize) -> &Point {
        &self.shifts[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinearQuery {
    Midpoint(Option<crate::midpoint_code::MidpointQueries>),
    Row { i: usize, x: Point },
}

pub fn sample_linear_query<R: Rng + ?Sized>(spec: &LinearTestSpec, rng: &mut R) -> LinearQuery {
    if rng.gen_bool(0.5) {
        LinearQuery::Midpoint(sample_midpoint(rng, &spec.params))
    } else {
        let i = rng.gen_range(0..spec.m.rows);
        let x = sample_decode_position(rng, &spec.params, spec.shift(i)).expect("grid wider than every shift");
        LinearQuery::Row { i, x }
    }
}

pub fn check_linear_query<G: AbelianGroup>(spec: &LinearTestSpec, alpha: &[G::Elem], a: &ProofString<G>, q: &LinearQuery) -> bool {
    match q {
        LinearQuery::Midpoint(mq) => check_midpoint(a, mq).passed(),
        LinearQuery::Row { i, x } => {
            let g = &a.group;
            let xs: Point = x.iter().zip(spec.shift(*i)).map(|(a, b)| a + b).collect();
            g.same(&g.op(&alpha[*i], &a.query(x)), &a.query(&xs))
        }
    }
}

pub fn linear_test<G: AbelianGroup, R: Rng + ?Sized>(
    spec: &LinearTestSpec,
    alpha: &[G::Elem],
    a: &ProofString<G>,
    rng: &mut R,
) -> Result<bool, LinearError> {
    if alpha.len() != spec.m.rows {
        return Err(LinearError::Dimension { expected: spec.m.rows, got: alpha.len() });
    }
    Ok(check_linear_query(spec, alpha, a, &sample_linear_query(spec, rng)))
}

/// Exact pass probability by enumerating every branch of the test.
pub fn linear_test_exact<G: AbelianGroup>(spec: &LinearTestSpec, alpha: &[G::Elem], a: &ProofString<G>) -> Result<Rational, LinearError> {
    let (ok, total) = midpoint_exhaustive(a)?;
    let mut p = rat(ok as i64, total as i64) / rat(2, 1);
    let rows = spec.m.rows as i64;
    for i in 0..spec.m.rows {
        let d = spec.shift(i);
        let mut good = 0i64;
        let mut all = 0i64;
        let m = spec.params.m().expect("small grid") as usize;
        for idx in 0..m {
            let x = spec.params.point_of(idx);
            let xs: Point = x.iter().zip(d).map(|(a, b)| a + b).collect();
            if !spec.params.in_grid(&xs) {
                continue;
            }
            all += 1;
            if check_linear_query(spec, alpha, a, &LinearQuery::Row { i, x }) {
                good += 1;
            }
        }
        p += rat(good, 2 * rows * all);
    }
    Ok(p)
}

pub fn estimate_linear<G: AbelianGroup>(spec: &LinearTestSpec, alpha: &[G::Elem], a: &ProofString<G>, trials: u64, seed: u64) -> Estimate {
    run_trials(seed, trials, |rng| check_linear_query(spec, alpha, a, &sample_linear_query(spec, rng)))
}

#[derive(Debug, Clone, Serialize)]
pub struct SoundnessReport {
    pub pass: Estimate,
    /// Fraction of `i` with `alpha_i` equal to the decoded `beta_i`.
    pub agreement: f64,
    /// `1 - 4 eps`, with `eps` the pessimistic failure rate.
    pub required: f64,
    pub holds: bool,
}

/// Decodes `g~ = (B(e_1), ..., B(e_d))`, forms `beta = M g~` and compares it
/// with `alpha`. Only meaningful when the measured failure rate is at most 1/32.
pub fn soundness_check<G: AbelianGroup>(
    spec: &LinearTestSpec,
    alpha: &[G::Elem],
    a: &ProofString<G>,
    trials: u64,
    mode_budget: u64,
    seed: u64,
) -> Result<SoundnessReport, LinearError> {
    let pass = estimate_linear(spec, alpha, a, trials, seed);
    let g = &a.group;
    let mut gt = vec![];
    for j in 0..spec.m.cols {
        let mut e = vec![0i128; spec.m.cols];
        e[j] = 1;
        gt.push(mode_statistic(a, &e, mode_budget, crate::seeds::child(seed, j as u64))?.value);
    }
    let mut agree = 0;
    for i in 0..spec.m.rows {
        let beta = spec
            .shift(i)
            .iter()
            .zip(&gt)
            .fold(g.identity(), |acc, (&c, v)| g.op(&acc, &g.times(c, v)));
        if g.same(&beta, &alpha[i]) {
            agree += 1;
        }
    }
    let agreement = agree as f64 / spec.m.rows as f64;
    let eps = 1.0 - pass.lower();
    let required = 1.0 - 4.0 * eps;
    Ok(SoundnessReport { pass, agreement, required, holds: agreement >= required })
}

// ---------------------------------------------------- affine agreement

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffineMap {
    pub coeffs: Vec<Rational>,
    pub constant: Rational,
}

impl AffineMap {
    pub fn eval(&self, x: &[Rational]) -> Rational {
        self.coeffs.iter().zip(x).fold(self.constant.clone(), |acc, (a, b)| acc + a * b)
    }
}

/// Counts the points of `R^n` where two distinct affine maps agree and
/// confirms the count is at most `|R|^(n-1)`.
pub fn schwartz_zippel_check(f1: &AffineMap, f2: &AffineMap, r: &[Rational]) -> Result<u64, LinearError> {
    let n = f1.coeffs.len();
    if f2.coeffs.len() != n {
        return Err(LinearError::Dimension { expected: n, got: f2.coeffs.len() });
    }
    if f1 == f2 {
        return Err(LinearError::Identical);
    }
    let s = r.len();
    let total = s.pow(n as u32);
    let mut count = 0u64;
    for idx in 0..total {
        let mut t = idx;
        let x: Vec<Rational> = (0..n)
            .map(|_| {
                let c = t % s;
                t /= s;
                r[c].clone()
            })
            .collect();
        if f1.eval(&x) == f2.eval(&x) {
            count += 1;
        }
    }
    let bound = if n == 0 { 0 } else { s.pow(n as u32 - 1) as u64 };
    if count > bound {
        return Err(LinearError::BoundViolated { count, bound });
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midpoint_code::encode;
    use crate::numerics::{int, Group, GroupElement};
    use rand::SeedableRng;

    fn big(v: &[i64]) -> Vec<BigInt> {
        v.iter().map(|&x| BigInt::from(x)).collect()
    }

    #[test]
    fn bareiss_matches_cofactor_expansion() {
        let m = vec![big(&[2, -1, 0]), big(&[1, 3, 2]), big(&[0, 1, 1])];
        // 2(3-2) + 1(1-0) + 0 = 3
        assert_eq!(determinant(&m), BigInt::from(3));
        assert_eq!(rank(&[big(&[1, 2]), big(&[2, 4])]), 1);
    }

    #[test]
    fn kernel_examples() {
        let kb = kernel_basis(&IntegerMatrix::from_rows(&[vec![1, -1]]).unwrap());
        assert_eq!(kb.dim(), 1);
        assert_eq!(kb.denominator, BigInt::one());
        assert_eq!(kb.basis[0], big(&[1, 1]));
        let b = IntegerMatrix::from_rows(&[vec![1, 1, -1], vec![2, 2, -2]]).unwrap();
        let kb = kernel_basis(&b);
        assert_eq!(kb.dim(), 2);
        assert_eq!(kb.kept_rows, vec![0]);
        for v in &kb.basis {
            assert!(b.apply(v).iter().all(|x| x.is_zero()));
        }
        let a = vec![int(2), int(5), int(7)];
        assert_eq!(kb.reconstruct(&a), a);
        let full = kernel_basis(&IntegerMatrix::from_rows(&[vec![1, 0], vec![0, 1]]).unwrap());
        assert_eq!(full.dim(), 0);
    }

    #[test]
    fn negative_determinant_is_normalized() {
        let kb = kernel_basis(&IntegerMatrix::from_rows(&[vec![0, 1, 1]]).unwrap());
        assert!(kb.denominator.is_positive());
        let kb2 = kernel_basis(&IntegerMatrix::from_rows(&[vec![-1, 0, 1]]).unwrap());
        assert!(kb2.denominator.is_positive());
        let a = vec![int(3), int(-4), int(3)];
        assert_eq!(kb2.reconstruct(&a), a);
    }

    #[test]
    fn linear_test_completeness_and_wrong_coordinate() {
        let m = IntegerMatrix::from_rows(&[vec![1, 0], vec![1, 1]]).unwrap();
        let params = CodeParams::new(2, 4, 1).unwrap();
        let spec = LinearTestSpec::with_params(m, params.clone()).unwrap();
        let e = |v| GroupElement::AddQ(int(v));
        let a = encode(&[e(2), e(3)], e(1), &params, &Group::AddQ).unwrap();
        let honest = [e(2), e(5)];
        assert_eq!(linear_test_exact(&spec, &honest, &a).unwrap(), int(1));
        // one wrong coordinate: that row's check always fails
        let wrong = [e(2), e(6)];
        assert_eq!(linear_test_exact(&spec, &wrong, &a).unwrap(), rat(3, 4));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        assert!((0..200).all(|_| linear_test(&spec, &honest, &a, &mut rng).unwrap()));
    }

    #[test]
    fn schwartz_zippel_examples() {
        let r: Vec<Rational> = (0..3).map(int).collect();
        let f1 = AffineMap { coeffs: vec![int(1), int(1)], constant: int(0) };
        let f2 = AffineMap { coeffs: vec![int(1), int(1)], constant: int(1) };
        assert_eq!(schwartz_zippel_check(&f1, &f2, &r).unwrap(), 0);
        let r2: Vec<Rational> = (0..2).map(int).collect();
        let x = AffineMap { coeffs: vec![int(1), int(0)], constant: int(0) };
        let y = AffineMap { coeffs: vec![int(0), int(1)], constant: int(0) };
        assert_eq!(schwartz_zippel_check(&x, &y, &r2).unwrap(), 2);
        assert_eq!(schwartz_zippel_check(&x, &x, &r2), Err(LinearError::Identical));
    }
}
