use super::vprime::VPrime;
use super::TesterError;
use crate::linear_test::{kernel_basis_rref, IntegerMatrix, KernelBasis};
use crate::midpoint_code::{AbelianGroup, CodeParams, Point, ProofString};
use crate::numerics::series::QSeries;
use crate::numerics::{rat, Rational, RingValue};
use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Serialize, Serializer};
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

/// Positive series under multiplication; equality is certified equality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeriesMul;

impl AbelianGroup for SeriesMul {
    type Elem = QSeries;
    fn identity(&self) -> QSeries {
        QSeries::one()
    }
    fn op(&self, a: &QSeries, b: &QSeries) -> QSeries {
        a.mul(b)
    }
    fn inv(&self, a: &QSeries) -> QSeries {
        a.recip().unwrap_or_else(QSeries::zero)
    }
    fn same(&self, a: &QSeries, b: &QSeries) -> bool {
        a.certified_eq(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeriesAdd;

impl AbelianGroup for SeriesAdd {
    type Elem = QSeries;
    fn identity(&self) -> QSeries {
        QSeries::zero()
    }
    fn op(&self, a: &QSeries, b: &QSeries) -> QSeries {
        a.add(b)
    }
    fn inv(&self, a: &QSeries) -> QSeries {
        QSeries::zero().sub(a)
    }
    fn same(&self, a: &QSeries, b: &QSeries) -> bool {
        a.certified_eq(b)
    }
    fn times(&self, d: i128, a: &QSeries) -> QSeries {
        a.mul_int(&BigInt::from(d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum StringId {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "b")]
    B,
    #[serde(rename = "u")]
    U,
    A1,
    A2,
    L1,
    L2,
}

impl fmt::Display for StringId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StringId::A => "a",
            StringId::B => "b",
            StringId::U => "u",
            StringId::A1 => "A1",
            StringId::A2 => "A2",
            StringId::L1 => "L1",
            StringId::L2 => "L2",
        };
        f.write_str(s)
    }
}

/// A position in one of the proof strings: a cube vertex `sigma` (bit `i`
/// is coordinate `i`) or a grid point.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Index {
    Cube(u128),
    Grid(Point),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QueryRef {
    pub string: StringId,
    pub index: Index,
}

impl QueryRef {
    pub fn cube(string: StringId, sigma: u128) -> Self {
        QueryRef { string, index: Index::Cube(sigma) }
    }
    pub fn grid(string: StringId, x: Point) -> Self {
        QueryRef { string, index: Index::Grid(x) }
    }
}

impl Serialize for QueryRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let idx = match &self.index {
            Index::Cube(sigma) => format!("{sigma:#x}"),
            Index::Grid(x) => format!("{x:?}"),
        };
        (self.string.to_string(), idx).serialize(s)
    }
}

/// Multiplies a hashed `rate`-fraction of a string's entries by
/// `1 + shift q`, which leaves the constant term (and so the range) intact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Perturbation {
    pub rate: f64,
    pub seed: u64,
    pub shift: i64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn index_hash(seed: u64, idx: &Index) -> u64 {
    match idx {
        Index::Cube(s) => splitmix(splitmix(seed ^ *s as u64) ^ (*s >> 64) as u64),
        Index::Grid(x) => x.iter().fold(splitmix(seed ^ 0x5151), |h, &c| {
            splitmix(splitmix(h ^ c as u64) ^ (c >> 64) as u64)
        }),
    }
}

impl Perturbation {
    pub fn hits(&self, idx: &Index) -> bool {
        let h = index_hash(self.seed, idx);
        ((h >> 11) as f64) / ((1u64 << 53) as f64) < self.rate
    }

    fn apply(&self, v: QSeries) -> QSeries {
        let f = QSeries::one().add(&QSeries::q().mul_int(&BigInt::from(self.shift)));
        v.mul(&f)
    }
}

type CubeFn = Arc<dyn Fn(u128) -> QSeries + Send + Sync>;

/// A lazily backed table over `{0,1}^dim` with a sparse overlay.
#[derive(Clone)]
pub struct Cube {
    pub dim: usize,
    f: CubeFn,
    overlay: HashMap<u128, QSeries>,
}

impl fmt::Debug for Cube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Cube").field("dim", &self.dim).field("overlay", &self.overlay.len()).finish()
    }
}

impl Cube {
    pub fn lazy(dim: usize, f: impl Fn(u128) -> QSeries + Send + Sync + 'static) -> Self {
        Cube { dim, f: Arc::new(f), overlay: HashMap::new() }
    }

    pub fn get(&self, sigma: u128) -> QSeries {
        match self.overlay.get(&sigma) {
            Some(v) => v.clone(),
            None => (self.f)(sigma),
        }
    }

    pub fn set(&mut self, sigma: u128, v: QSeries) {
        self.overlay.insert(sigma, v);
    }
}

/// Verifier-side data fixed by `V'` alone: kernel bases and grid shapes.
#[derive(Debug, Clone)]
pub struct Tester {
    pub vp: VPrime,
    /// Coordinates per input codeword.
    pub n: usize,
    pub kernel1: KernelBasis,
    /// `cols1[i][j] = b_j[i]`, so `M_sigma = sum_{i in sigma} cols1[i]`.
    pub cols1: Vec<Vec<i128>>,
    pub params_a1: CodeParams,
    pub a2: Option<A2Setup>,
    pub params_l: CodeParams,
}

/// The explicit additive test, available while `2^N` stays tiny.
#[derive(Debug, Clone)]
pub struct A2Setup {
    pub kernel: KernelBasis,
    pub params: CodeParams,
}

/// Largest `N` for which `V1'` is materialised over all `2^N` vertices.
pub const A2_MAX_VARS: usize = 4;

impl Tester {
    pub fn new(vp: VPrime, n: usize) -> Result<Self, TesterError> {
        if vp.n_vars > 128 {
            return Err(TesterError::TooManyVars(vp.n_vars));
        }
        if vp.n_src != 2 * n {
            return Err(TesterError::VarOutOfRange { var: vp.n_src, n: 2 * n });
        }
        let kernel1 = vp.mul_kernel();
        let d1 = kernel1.dim().max(1);
        let mut cols1 = vec![vec![0i128; kernel1.dim()]; vp.n_vars];
        let mut r1: i128 = 0;
        for (j, b) in kernel1.basis.iter().enumerate() {
            for (i, x) in b.iter().enumerate() {
                let v = x.to_i128().ok_or(TesterError::Overflow)?;
                cols1[i][j] = v;
                r1 = r1.checked_add(v.abs()).ok_or(TesterError::Overflow)?;
            }
        }
        let params_a1 = CodeParams::from_formula(d1, &rat(1, 4), r1.max(1) as u64)?;
        let a2 = if vp.n_vars <= A2_MAX_VARS { Some(a2_setup(&vp)?) } else { None };
        let params_l = CodeParams::from_formula(n.max(1), &rat(1, 4), n.max(1) as u64)?;
        Ok(Tester { vp, n, kernel1, cols1, params_a1, a2, params_l })
    }

    pub fn n_vars(&self) -> usize {
        self.vp.n_vars
    }

    /// Grid shift `M_sigma` of the multiplicative linear test.
    pub fn a1_shift(&self, sigma: u128) -> Point {
        let mut d = vec![0i128; self.kernel1.dim()];
        for (i, col) in self.cols1.iter().enumerate() {
            if sigma >> i & 1 == 1 {
                for (dj, c) in d.iter_mut().zip(col) {
                    *dj += c;
                }
            }
        }
        d
    }

    /// Grid shift of the additive linear test for vertex `sigma`.
    pub fn a2_shift(&self, sigma: u128) -> Option<Point> {
        let a2 = self.a2.as_ref()?;
        Some(a2.kernel.basis.iter().map(|b| b[sigma as usize].to_i128().unwrap()).collect())
    }
}

fn a2_setup(vp: &VPrime) -> Result<A2Setup, TesterError> {
    let nn = vp.n_vars;
    let cols = 1usize << nn;
    let mut rows = vec![];
    let mut e0 = vec![BigInt::zero(); cols];
    e0[0] = 1.into();
    rows.push(e0);
    for &(i, j, k) in &vp.add {
        let mask = (1usize << i) | (1 << j) | (1 << k);
        for s in (0..cols).filter(|s| s & mask == 0) {
            let mut r = vec![BigInt::zero(); cols];
            r[s | 1 << i] += 1;
            r[s | 1 << j] += 1;
            r[s | 1 << k] -= 1;
            r[s] -= 1;
            rows.push(r);
        }
    }
    let kernel = kernel_basis_rref(&IntegerMatrix::from_big_rows(rows, cols));
    let d2 = kernel.dim().max(1);
    let r2 = (0..cols)
        .map(|s| kernel.basis.iter().map(|b| b[s].abs()).sum::<BigInt>())
        .max()
        .unwrap_or_default()
        .to_u64()
        .ok_or(TesterError::Overflow)?;
    let params = CodeParams::from_formula(d2, &rat(1, 4), r2.max(1))?;
    Ok(A2Setup { kernel, params })
}

/// Log-domain data of an honest proof: `l[i] = log(1 + alpha_i)`.
struct Honest {
    l: Vec<QSeries>,
    /// `chunks[c][byte]` sums `l` over the set bits of `byte` in chunk `c`.
    chunks: Vec<Vec<QSeries>>,
}

impl Honest {
    fn new(alpha: &[QSeries]) -> Self {
        let l: Vec<QSeries> = alpha.iter().map(|a| QSeries::one().add(a).log_near_one()).collect();
        let chunks = l
            .chunks(8)
            .map(|c| {
                let mut t = vec![QSeries::zero(); 256];
                for byte in 1..256usize {
                    let low = byte.trailing_zeros() as usize;
                    t[byte] = if low < c.len() { t[byte & (byte - 1)].add(&c[low]) } else { t[byte & (byte - 1)].clone() };
                }
                t
            })
            .collect();
        Honest { l, chunks }
    }

    fn log_cube(&self, sigma: u128) -> QSeries {
        let mut acc = QSeries::zero();
        for (c, t) in self.chunks.iter().enumerate() {
            let byte = (sigma >> (8 * c)) as usize & 0xff;
            if byte != 0 {
                acc = acc.add(&t[byte]);
            }
        }
        acc
    }

    /// `sum_i x_i g_i` over a generator list, as a log.
    fn log_grid(g: &[QSeries], x: &[i128]) -> QSeries {
        let mut acc = QSeries::zero();
        for (gi, &xi) in g.iter().zip(x) {
            if xi != 0 {
                acc = acc.add(&gi.mul_int(&BigInt::from(xi)));
            }
        }
        acc
    }
}

/// The proof strings `a, b, u, A1, A2, L1, L2`.
#[derive(Debug, Clone)]
pub struct TesterProof {
    pub n: usize,
    pub n_vars: usize,
    pub a: Cube,
    pub b: Cube,
    pub u: Cube,
    pub a1: ProofString<SeriesMul>,
    pub a2: Option<ProofString<SeriesAdd>>,
    pub l1: ProofString<SeriesMul>,
    pub l2: ProofString<SeriesMul>,
    pub perturb: HashMap<StringId, Perturbation>,
}

impl TesterProof {
    pub fn query(&self, r: &QueryRef) -> QSeries {
        let v = match (&r.string, &r.index) {
            (StringId::A, Index::Cube(s)) => self.a.get(*s),
            (StringId::B, Index::Cube(s)) => self.b.get(*s),
            (StringId::U, Index::Cube(s)) => self.u.get(*s),
            (StringId::A1, Index::Grid(x)) => self.a1.query(x),
            (StringId::A2, Index::Grid(x)) => match &self.a2 {
                Some(a2) => a2.query(x),
                None => QSeries::zero(),
            },
            (StringId::L1, Index::Grid(x)) => self.l1.query(x),
            (StringId::L2, Index::Grid(x)) => self.l2.query(x),
            _ => QSeries::zero(),
        };
        match self.perturb.get(&r.string) {
            Some(p) if p.hits(&r.index) => p.apply(v),
            _ => v,
        }
    }

    pub fn cube_mut(&mut self, s: StringId) -> Option<&mut Cube> {
        match s {
            StringId::A => Some(&mut self.a),
            StringId::B => Some(&mut self.b),
            StringId::U => Some(&mut self.u),
            _ => None,
        }
    }
}

impl Tester {
    /// Honest witness for source values `(x, y)`: the full `V'` assignment.
    pub fn honest_alpha(&self, x: &[QSeries], y: &[QSeries]) -> Result<Vec<QSeries>, TesterError> {
        if x.len() != self.n || y.len() != self.n {
            return Err(TesterError::VarOutOfRange { var: x.len().max(y.len()), n: self.n });
        }
        let src: Vec<QSeries> = x.iter().chain(y).cloned().collect();
        if let Some(bad) = src.iter().position(|v| !v.in_unit_range()) {
            return Err(TesterError::NotInV(format!("source value {bad} outside [1/2, 2]")));
        }
        let q = QSeries::q();
        let one_plus_q = QSeries::one().add(&q);
        for c in &self.vp.source {
            if !super::atom_holds(c, &src, &one_plus_q) {
                return Err(TesterError::NotInV(format!("{} violated", c.tag())));
            }
        }
        let alpha = self
            .vp
            .witness(&src, &q)
            .ok_or_else(|| TesterError::NotInV("range square root failed".into()))?;
        if let Some(v) = self.vp.first_violation(&alpha) {
            return Err(TesterError::NotInV(v));
        }
        Ok(alpha)
    }

    /// The proof every test accepts, built from a full assignment of `V'`.
    /// Works for any `alpha`, so dishonest assignments give dishonest proofs.
    pub fn proof_from_alpha(&self, alpha: &[QSeries]) -> TesterProof {
        let n = self.n;
        let h = Arc::new(Honest::new(alpha));
        let hn = h.clone();
        let u = Cube::lazy(self.n_vars(), move |s| hn.log_cube(s).exp_small());
        let mask = (1u128 << n) - 1;
        let hn = h.clone();
        let a = Cube::lazy(n, move |s| hn.log_cube(s & mask).exp_small());
        let hn = h.clone();
        let b = Cube::lazy(n, move |s| hn.log_cube((s & mask) << n).exp_small());
        let dinv = Rational::new(1.into(), self.kernel1.denominator.clone());
        let g1: Vec<QSeries> = self.kernel1.pivots.iter().map(|&p| h.l[p].mul_rational(&dinv)).collect();
        let a1 = ProofString::lazy(self.params_a1.clone(), SeriesMul, move |x| Honest::log_grid(&g1, x).exp_small());
        let a2 = self.a2.as_ref().map(|s| {
            let d2inv = Rational::new(1.into(), s.kernel.denominator.clone());
            let w: Vec<QSeries> = s
                .kernel
                .pivots
                .iter()
                .map(|&p| h.log_cube(p as u128).exp_small().sub(&QSeries::one()).mul_rational(&d2inv))
                .collect();
            ProofString::lazy(s.params.clone(), SeriesAdd, move |x| {
                w.iter().zip(x).fold(QSeries::one(), |acc, (wi, &xi)| acc.add(&wi.mul_int(&BigInt::from(xi))))
            })
        });
        let gl1: Vec<QSeries> = h.l[..n].to_vec();
        let gl2: Vec<QSeries> = h.l[n..2 * n].to_vec();
        let l1 = ProofString::lazy(self.params_l.clone(), SeriesMul, move |x| Honest::log_grid(&gl1, x).exp_small());
        let l2 = ProofString::lazy(self.params_l.clone(), SeriesMul, move |x| Honest::log_grid(&gl2, x).exp_small());
        TesterProof { n, n_vars: self.n_vars(), a, b, u, a1, a2, l1, l2, perturb: HashMap::new() }
    }

    pub fn build_honest_proof(&self, x: &[QSeries], y: &[QSeries]) -> Result<TesterProof, TesterError> {
        let alpha = self.honest_alpha(x, y)?;
        Ok(self.proof_from_alpha(&alpha))
    }
}

/// `f(alpha)_sigma = prod_{i in sigma} (1 + q alpha_i)`, the input codeword.
pub fn codeword(alpha: &[QSeries], sigma: u128) -> QSeries {
    let q = QSeries::q();
    alpha
        .iter()
        .enumerate()
        .filter(|(i, _)| sigma >> i & 1 == 1)
        .fold(QSeries::one(), |acc, (_, a)| acc.mul(&QSeries::one().add(&q.mul(a))))
}
