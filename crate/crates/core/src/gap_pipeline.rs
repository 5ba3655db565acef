//! Gap amplification on constraint graphs: expanderization, powering and
//! composition with an assignment tester, each carrying a witness map.

use crate::constraint_graph::{
    second_eigenvalue, unsat_exact_finite, Alphabet, ConstraintGraph, EdgeConstraint, GraphError, SymAssignment,
};
use crate::numerics::{format_rational, rat, Rational};
use crate::seeds;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("degree must be even and at least 6, got {0}")]
    BadDegree(usize),
    #[error("target lambda {lambda} must lie below d = {d}")]
    BadLambda { lambda: f64, d: usize },
    #[error("no expander with lambda <= {target} in {attempts} attempts (best {best:.4})")]
    ExpanderRetries { target: f64, attempts: usize, best: f64 },
    #[error("graph is not regular")]
    NotRegular,
    #[error("power exponent must be at least 1")]
    BadPower,
    #[error("ball of {size} vertices exceeds d^(t+1) = {slots}")]
    BallTooLarge { size: usize, slots: usize },
    #[error("walk count {0} exceeds the budget")]
    WalkBudget(u64),
    #[error("tester {0} does not cover constraint {1}")]
    Uncovered(String, usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineParams {
    pub d: usize,
    pub lambda: f64,
    pub t: usize,
    /// Maximum number of `t`-step walks enumerated in step 2 before
    /// switching to sampling.
    pub walk_budget: u64,
    pub rounds: usize,
    pub retries: usize,
    pub seed: u64,
    /// Exhaustive-UNSAT budget for the trace; 0 disables measuring.
    pub measure_budget: u64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            d: 8,
            lambda: 7.2,
            t: 1,
            walk_budget: 200_000,
            rounds: 1,
            retries: 200,
            seed: 0,
            measure_budget: 1 << 22,
        }
    }
}

// ------------------------------------------------------------ witness maps

/// Forward (satisfying to satisfying) and backward (total) assignment maps
/// attached to one transformation.
#[derive(Clone)]
pub enum WitnessMap {
    /// Each new vertex copies `owner[v]`; backward takes the cloud plurality.
    Clouds { owner: Vec<usize>, n_old: usize },
    /// Each vertex holds opinions on its ball; backward takes the plurality
    /// of all opinions about a vertex, preferring its own.
    Balls { balls: Vec<Vec<usize>>, slots: usize },
    Compose(ComposeLayout),
}

impl std::fmt::Debug for WitnessMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WitnessMap::Clouds { n_old, .. } => write!(f, "Clouds(n_old={n_old})"),
            WitnessMap::Balls { slots, .. } => write!(f, "Balls(slots={slots})"),
            WitnessMap::Compose(l) => write!(f, "Compose({})", l.tester.name()),
        }
    }
}

fn plurality<T: Clone + PartialEq>(items: &[T]) -> Option<T> {
    let mut best: Option<(&T, usize)> = None;
    for x in items {
        let c = items.iter().filter(|y| *y == x).count();
        if best.map_or(true, |(_, bc)| c > bc) {
            best = Some((x, c));
        }
    }
    best.map(|(x, _)| x.clone())
}

impl WitnessMap {
    /// Letters are vectors of `T`; `pad` fills unused opinion slots.
    pub fn forward<T: Clone + PartialEq>(&self, a: &[Vec<T>], pad: &T) -> Option<Vec<Vec<T>>> {
        match self {
            WitnessMap::Clouds { owner, .. } => Some(owner.iter().map(|&o| a[o].clone()).collect()),
            WitnessMap::Balls { balls, slots } => {
                let w = a.first().map_or(0, |l| l.len());
                Some(
                    balls
                        .iter()
                        .map(|ball| {
                            let mut l: Vec<T> = ball.iter().flat_map(|&x| a[x].iter().cloned()).collect();
                            l.resize(w * slots, pad.clone());
                            l
                        })
                        .collect(),
                )
            }
            WitnessMap::Compose(_) => None,
        }
    }

    pub fn backward<T: Clone + PartialEq>(&self, a: &[Vec<T>], width: usize) -> Option<Vec<Vec<T>>> {
        match self {
            WitnessMap::Clouds { owner, n_old } => {
                let mut groups: Vec<Vec<Vec<T>>> = vec![vec![]; *n_old];
                for (v, &o) in owner.iter().enumerate() {
                    groups[o].push(a[v].clone());
                }
                Some(groups.into_iter().map(|g| plurality(&g).unwrap_or_default()).collect())
            }
            WitnessMap::Balls { balls, .. } => {
                let n = balls.len();
                let mut ops: Vec<Vec<Vec<T>>> = vec![vec![]; n];
                for (u, ball) in balls.iter().enumerate() {
                    for (j, &x) in ball.iter().enumerate() {
                        ops[x].push(a[u][j * width..(j + 1) * width].to_vec());
                    }
                }
                Some(
                    (0..n)
                        .map(|v| {
                            let own = a[v][..width].to_vec();
                            let count = |l: &Vec<T>| ops[v].iter().filter(|o| *o == l).count();
                            let best = plurality(&ops[v]).unwrap_or_else(|| own.clone());
                            if count(&own) >= count(&best) {
                                own
                            } else {
                                best
                            }
                        })
                        .collect(),
                )
            }
            WitnessMap::Compose(_) => None,
        }
    }

    pub fn forward_sym(&self, g_in: &ConstraintGraph, a: &SymAssignment) -> SymAssignment {
        match self {
            WitnessMap::Compose(l) => l.forward(g_in, a),
            _ => self.forward(a, &0).expect("non-compose map"),
        }
    }

    pub fn backward_sym(&self, g_in: &ConstraintGraph, a: &SymAssignment) -> SymAssignment {
        match self {
            WitnessMap::Compose(l) => l.backward(a),
            _ => self.backward(a, g_in.alphabet.width()).expect("non-compose map"),
        }
    }
}

// ------------------------------------------------------------------ step 1

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step1Report {
    pub lambda: f64,
    pub lambda_error: f64,
    pub attempts: usize,
    pub vertices: usize,
    pub edges: usize,
}

/// Replaces every vertex by a cloud (one vertex per incident edge end)
/// joined by an equality cycle, then adds a random perfect matching and
/// `(d-4)/2` random permutations with NULL constraints, resampling until
/// the second eigenvalue is at most `target_lambda`.
pub fn step1_expanderize(
    g: &ConstraintGraph,
    d: usize,
    target_lambda: f64,
    seed: u64,
    retries: usize,
) -> Result<(ConstraintGraph, WitnessMap, Step1Report), PipelineError> {
    if d < 6 || d % 2 != 0 {
        return Err(PipelineError::BadDegree(d));
    }
    if !(target_lambda < d as f64) {
        return Err(PipelineError::BadLambda { lambda: target_lambda, d });
    }
    g.validate()?;
    // clouds: one slot per edge end; isolated vertices get two slots joined
    // by a NULL edge so that every cloud vertex has one original edge
    let mut owner = vec![];
    let mut ends: Vec<[usize; 2]> = vec![];
    let mut cloud: Vec<Vec<usize>> = vec![vec![]; g.n];
    for e in &g.edges {
        let mut pair = [0; 2];
        for (k, &x) in [e.u, e.v].iter().enumerate() {
            pair[k] = owner.len();
            cloud[x].push(owner.len());
            owner.push(x);
        }
        ends.push(pair);
    }
    let mut isolated = vec![];
    for (v, c) in cloud.iter_mut().enumerate() {
        if c.is_empty() {
            let a = owner.len();
            owner.extend([v, v]);
            c.extend([a, a + 1]);
            isolated.push((a, a + 1));
        }
    }
    let n = owner.len();
    let mut base = ConstraintGraph::new(n, g.alphabet.clone());
    base.constraints = g.constraints.clone();
    let eq = base.add_constraint(EdgeConstraint::Equal);
    let null = base.add_constraint(EdgeConstraint::Null);
    for (e, [a, b]) in g.edges.iter().zip(&ends) {
        base.add_edge(*a, *b, e.c);
    }
    for (a, b) in isolated {
        base.add_edge(a, b, null);
    }
    for c in &cloud {
        match c.len() {
            1 => base.add_edge(c[0], c[0], eq),
            2 => {
                base.add_edge(c[0], c[1], eq);
                base.add_edge(c[0], c[1], eq);
            }
            s => {
                for i in 0..s {
                    base.add_edge(c[i], c[(i + 1) % s], eq);
                }
            }
        }
    }
    let mut best = f64::INFINITY;
    for attempt in 0..retries.max(1) {
        let mut rng = seeds::stream(seed, attempt as u64);
        let mut h = base.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        for p in perm.chunks(2) {
            h.add_edge(p[0], p[1], null);
        }
        for _ in 0..(d - 4) / 2 {
            perm.shuffle(&mut rng);
            for (i, &p) in perm.iter().enumerate() {
                h.add_edge(i, p, null);
            }
        }
        debug_assert_eq!(h.regular_degree(), Some(d));
        let spec = second_eigenvalue(&h, 4096)?;
        best = best.min(spec.lambda);
        if spec.lambda + spec.error <= target_lambda {
            let report = Step1Report {
                lambda: spec.lambda,
                lambda_error: spec.error,
                attempts: attempt + 1,
                vertices: h.n,
                edges: h.edges.len(),
            };
            return Ok((h, WitnessMap::Clouds { owner, n_old: g.n }, report));
        }
    }
    Err(PipelineError::ExpanderRetries { target: target_lambda, attempts: retries, best })
}

// ------------------------------------------------------------------ step 2

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step2Report {
    pub walks: usize,
    pub sampled: bool,
    pub slots: usize,
    pub max_ball: usize,
}

/// Vertices within distance `t` of `v`, in BFS order with neighbours
/// visited by increasing index.
pub fn ball(g: &ConstraintGraph, nbrs: &[Vec<usize>], v: usize, t: usize) -> Vec<usize> {
    let _ = g;
    let mut order = vec![v];
    let mut dist = HashMap::from([(v, 0usize)]);
    let mut head = 0;
    while head < order.len() {
        let x = order[head];
        head += 1;
        if dist[&x] == t {
            continue;
        }
        for &y in &nbrs[x] {
            if !dist.contains_key(&y) {
                dist.insert(y, dist[&x] + 1);
                order.push(y);
            }
        }
    }
    order
}

fn neighbours(g: &ConstraintGraph) -> Vec<Vec<usize>> {
    let mut nb = vec![vec![]; g.n];
    for e in &g.edges {
        nb[e.u].push(e.v);
        nb[e.v].push(e.u);
    }
    for l in nb.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    nb
}

/// One edge per `t`-step walk; every vertex's letter lists its opinions on
/// the vertices of its distance-`t` ball (padded to `d^(t+1)` slots), and
/// a walk `u -> w` checks that `u` and `w` agree on the common part of
/// their balls and that every original edge inside the union is satisfied.
pub fn step2_power(
    g1: &ConstraintGraph,
    t: usize,
    walk_budget: u64,
    seed: u64,
) -> Result<(ConstraintGraph, WitnessMap, Step2Report), PipelineError> {
    if t == 0 {
        return Err(PipelineError::BadPower);
    }
    let d = g1.regular_degree().ok_or(PipelineError::NotRegular)?;
    let slots = d.checked_pow(t as u32 + 1).ok_or(PipelineError::WalkBudget(u64::MAX))?;
    let w = g1.alphabet.width();
    let nbrs = neighbours(g1);
    let balls: Vec<Vec<usize>> = (0..g1.n).map(|v| ball(g1, &nbrs, v, t)).collect();
    let max_ball = balls.iter().map(|b| b.len()).max().unwrap_or(0);
    if max_ball > slots {
        return Err(PipelineError::BallTooLarge { size: max_ball, slots });
    }
    let slot_of: Vec<HashMap<usize, usize>> =
        balls.iter().map(|b| b.iter().enumerate().map(|(j, &x)| (x, j)).collect()).collect();
    let alphabet = match &g1.alphabet {
        Alphabet::Finite { base, .. } => Alphabet::Finite { base: *base, width: w * slots },
        Alphabet::RealBox { q, .. } => Alphabet::RealBox { dim: w * slots, q: q.clone() },
    };
    let inc = g1.incidence();
    let other = |e: usize, x: usize| {
        let ed = &g1.edges[e];
        if ed.u == x {
            ed.v
        } else {
            ed.u
        }
    };
    let total = (g1.n as u64).saturating_mul((d as u64).saturating_pow(t as u32));
    let sampled = total > walk_budget;
    let mut walks: Vec<(usize, usize)> = vec![];
    if !sampled {
        for u in 0..g1.n {
            let mut frontier = vec![u];
            for _ in 0..t {
                frontier = frontier.iter().flat_map(|&x| inc[x].iter().map(move |&e| (e, x))).map(|(e, x)| other(e, x)).collect();
            }
            walks.extend(frontier.into_iter().map(|w| (u, w)));
        }
    } else {
        let per = (walk_budget / g1.n.max(1) as u64).max(1);
        let mut rng = seeds::stream(seed, 2);
        for u in 0..g1.n {
            for _ in 0..per {
                let mut x = u;
                for _ in 0..t {
                    let e = inc[x][rng.gen_range(0..inc[x].len())];
                    x = other(e, x);
                }
                walks.push((u, x));
            }
        }
    }
    let width = w * slots;
    let mut g2 = ConstraintGraph::new(g1.n, alphabet);
    let coords = |side: usize, j: usize| (0..w).map(move |i| side * width + j * w + i);
    let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
    for &(u, x) in &walks {
        let id = match cache.get(&(u, x)) {
            Some(&id) => id,
            None => {
                let mut parts = vec![];
                for (j, y) in balls[u].iter().enumerate() {
                    if let Some(&k) = slot_of[x].get(y) {
                        let c: Vec<usize> = coords(0, j).chain(coords(1, k)).collect();
                        parts.push(EdgeConstraint::Lift { base: Box::new(EdgeConstraint::Equal), coords: c });
                    }
                }
                let locate = |y: usize| match slot_of[u].get(&y) {
                    Some(&j) => Some(coords(0, j).collect::<Vec<_>>()),
                    None => slot_of[x].get(&y).map(|&k| coords(1, k).collect()),
                };
                for e in &g1.edges {
                    if let (Some(a), Some(b)) = (locate(e.u), locate(e.v)) {
                        let c: Vec<usize> = a.into_iter().chain(b).collect();
                        parts.push(EdgeConstraint::Lift { base: Box::new(g1.constraints[e.c].clone()), coords: c });
                    }
                }
                let id = g2.add_constraint(EdgeConstraint::Conj(parts));
                cache.insert((u, x), id);
                id
            }
        };
        g2.add_edge(u, x, id);
    }
    let report = Step2Report { walks: walks.len(), sampled, slots, max_ball };
    Ok((g2, WitnessMap::Balls { balls, slots }, report))
}

/// Certified bracket on `UNSAT(G2)` for `t = 1`: any labelling of `G2`
/// violates every walk along an edge violated by the vertices' own
/// opinions, so `min_sigma` of that count is a lower bound; the forward
/// image of an optimal `G1` labelling gives the upper bound.
pub fn power_unsat_bracket(
    g1: &ConstraintGraph,
    g2: &ConstraintGraph,
    map: &WitnessMap,
    budget: u64,
) -> Result<(Rational, Rational), PipelineError> {
    let (_, best) = crate::constraint_graph::min_unsat_finite(g1, budget)?;
    let WitnessMap::Balls { balls, .. } = map else { return Err(PipelineError::BadPower) };
    // walks along a given G1 edge: count G2 edges (u, x) that are G1 edges
    let mut along: HashMap<(usize, usize), usize> = HashMap::new();
    for e in &g2.edges {
        *along.entry((e.u, e.v)).or_default() += 1;
    }
    let lower = {
        // min over sigma of sum over violated G1 edges of walks along them,
        // each G1 edge counted once per direction
        let mut worst = None;
        let alph = match &g1.alphabet {
            Alphabet::Finite { base, width } => (*base, *width),
            _ => return Err(PipelineError::Graph(GraphError::NotFinite)),
        };
        let letters = (alph.0 as u64).pow(alph.1 as u32);
        let total = (letters as f64).powi(g1.n as i32);
        if total > budget as f64 {
            return Err(PipelineError::Graph(GraphError::Budget { needed: total, budget }));
        }
        let mut idx = vec![0u64; g1.n];
        loop {
            let a: SymAssignment = idx
                .iter()
                .map(|&k| {
                    let mut k = k;
                    (0..alph.1)
                        .map(|_| {
                            let s = (k % alph.0 as u64) as u32;
                            k /= alph.0 as u64;
                            s
                        })
                        .collect()
                })
                .collect();
            let mut cnt = 0usize;
            let mut seen: HashMap<(usize, usize), bool> = HashMap::new();
            for e in &g1.edges {
                if !g1.constraints[e.c].holds_sym(&a[e.u], &a[e.v]) {
                    for key in [(e.u, e.v), (e.v, e.u)] {
                        if seen.insert(key, true).is_none() {
                            cnt += along.get(&key).copied().unwrap_or(0);
                        }
                    }
                }
            }
            worst = Some(worst.map_or(cnt, |w: usize| w.min(cnt)));
            let mut k = 0;
            while k < g1.n {
                idx[k] += 1;
                if idx[k] < letters {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == g1.n {
                break;
            }
        }
        worst.unwrap_or(0)
    };
    let _ = balls;
    let up = map.forward(&best, &0).expect("ball map");
    let m = g2.edges.len().max(1) as i64;
    Ok((rat(lower as i64, m), rat(g2.violated_sym(&up) as i64, m)))
}

// ----------------------------------------------------------- composition

/// A position read by a test: a symbol of the left code, the right code or
/// the per-edge auxiliary proof.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Pos {
    A(usize),
    B(usize),
    Aux(usize),
}

/// An assignment tester over a finite alphabet, in the form composition
/// needs: `R` random strings, each reading `ell` positions of
/// `(code(a), code(b), aux)` and checking one constraint on them.
pub trait FiniteTester: Send + Sync {
    fn name(&self) -> &str;
    fn ell(&self) -> usize;
    fn randomness(&self) -> usize;
    fn zeta(&self) -> Rational;
    fn code_len(&self) -> usize;
    fn aux_len(&self) -> usize;
    /// Width of one proof symbol for input letters of width `w`.
    fn symbol_width(&self, w: usize) -> usize;
    fn covers(&self, c: &EdgeConstraint) -> bool;
    fn queries(&self, r: usize) -> Vec<Pos>;
    /// The check on the concatenated queried symbols (width `ell * w0`).
    fn check(&self, c: &EdgeConstraint, r: usize, w: usize) -> EdgeConstraint;
    fn encode(&self, letter: &[u32]) -> Vec<Vec<u32>>;
    fn aux(&self, c: &EdgeConstraint, a: &[u32], b: &[u32]) -> Vec<Vec<u32>>;
    fn decode(&self, code: &[Vec<u32>], w: usize) -> Vec<u32>;
}

fn take(sym: &[u32], w: usize) -> Vec<u32> {
    sym[..w].to_vec()
}

fn pad(mut v: Vec<u32>, w: usize) -> Vec<u32> {
    v.resize(w, 0);
    v
}

/// One random string, one query: the auxiliary symbol is the pair
/// `(a, b)` and the test checks `c` on it. Complete, not sound.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrivialTester;

impl FiniteTester for TrivialTester {
    fn name(&self) -> &str {
        "trivial"
    }
    fn ell(&self) -> usize {
        1
    }
    fn randomness(&self) -> usize {
        1
    }
    fn zeta(&self) -> Rational {
        rat(0, 1)
    }
    fn code_len(&self) -> usize {
        1
    }
    fn aux_len(&self) -> usize {
        1
    }
    fn symbol_width(&self, w: usize) -> usize {
        2 * w
    }
    fn covers(&self, _: &EdgeConstraint) -> bool {
        true
    }
    fn queries(&self, _: usize) -> Vec<Pos> {
        vec![Pos::Aux(0)]
    }
    fn check(&self, c: &EdgeConstraint, _: usize, w: usize) -> EdgeConstraint {
        EdgeConstraint::Lift { base: Box::new(c.clone()), coords: (0..2 * w).collect() }
    }
    fn encode(&self, letter: &[u32]) -> Vec<Vec<u32>> {
        vec![pad(letter.to_vec(), 2 * letter.len())]
    }
    fn aux(&self, _: &EdgeConstraint, a: &[u32], b: &[u32]) -> Vec<Vec<u32>> {
        vec![a.iter().chain(b).copied().collect()]
    }
    fn decode(&self, code: &[Vec<u32>], w: usize) -> Vec<u32> {
        take(&code[0], w)
    }
}

/// Identity code plus the auxiliary pair `(a', b')`; the three random
/// strings check `a' = a`, `b' = b` and `c(a', b')`. Any pair violating `c`
/// fails at least one of the three, so `zeta = 1/3`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PairTester;

impl FiniteTester for PairTester {
    fn name(&self) -> &str {
        "pair"
    }
    fn ell(&self) -> usize {
        2
    }
    fn randomness(&self) -> usize {
        3
    }
    fn zeta(&self) -> Rational {
        rat(1, 3)
    }
    fn code_len(&self) -> usize {
        1
    }
    fn aux_len(&self) -> usize {
        1
    }
    fn symbol_width(&self, w: usize) -> usize {
        2 * w
    }
    fn covers(&self, _: &EdgeConstraint) -> bool {
        true
    }
    fn queries(&self, r: usize) -> Vec<Pos> {
        match r {
            0 => vec![Pos::Aux(0), Pos::A(0)],
            1 => vec![Pos::Aux(0), Pos::B(0)],
            _ => vec![Pos::Aux(0), Pos::Aux(0)],
        }
    }
    fn check(&self, c: &EdgeConstraint, r: usize, w: usize) -> EdgeConstraint {
        let w0 = 2 * w;
        let eq = |from: usize| EdgeConstraint::Lift {
            base: Box::new(EdgeConstraint::Equal),
            coords: (from..from + w).chain(w0..w0 + w).collect(),
        };
        match r {
            0 => eq(0),
            1 => eq(w),
            _ => EdgeConstraint::Lift { base: Box::new(c.clone()), coords: (0..2 * w).collect() },
        }
    }
    fn encode(&self, letter: &[u32]) -> Vec<Vec<u32>> {
        vec![pad(letter.to_vec(), 2 * letter.len())]
    }
    fn aux(&self, _: &EdgeConstraint, a: &[u32], b: &[u32]) -> Vec<Vec<u32>> {
        vec![a.iter().chain(b).copied().collect()]
    }
    fn decode(&self, code: &[Vec<u32>], w: usize) -> Vec<u32> {
        take(&code[0], w)
    }
}

/// Vertex layout of a composed graph.
#[derive(Clone)]
pub struct ComposeLayout {
    pub tester: Arc<dyn FiniteTester>,
    pub n_in: usize,
    pub edges_in: usize,
    pub w_in: usize,
    pub w0: usize,
    pub width: usize,
    pub aux_base: usize,
    pub test_base: usize,
}

impl ComposeLayout {
    pub fn cloud(&self, v: usize, i: usize) -> usize {
        v * self.tester.code_len() + i
    }
    pub fn aux(&self, e: usize, j: usize) -> usize {
        self.aux_base + e * self.tester.aux_len() + j
    }
    pub fn test(&self, e: usize, r: usize) -> usize {
        self.test_base + e * self.tester.randomness() + r
    }

    fn target(&self, g_in: &ConstraintGraph, e: usize, p: Pos) -> usize {
        let ed = &g_in.edges[e];
        match p {
            Pos::A(i) => self.cloud(ed.u, i),
            Pos::B(i) => self.cloud(ed.v, i),
            Pos::Aux(j) => self.aux(e, j),
        }
    }

    fn forward(&self, g_in: &ConstraintGraph, a: &SymAssignment) -> SymAssignment {
        let t = &self.tester;
        let total = self.test_base + self.edges_in * t.randomness();
        let mut out = vec![vec![0u32; self.width]; total];
        for (v, l) in a.iter().enumerate() {
            for (i, s) in t.encode(l).into_iter().enumerate() {
                out[self.cloud(v, i)] = pad(s, self.width);
            }
        }
        for (e, ed) in g_in.edges.iter().enumerate() {
            for (j, s) in t.aux(&g_in.constraints[ed.c], &a[ed.u], &a[ed.v]).into_iter().enumerate() {
                out[self.aux(e, j)] = pad(s, self.width);
            }
        }
        for e in 0..self.edges_in {
            for r in 0..t.randomness() {
                let l: Vec<u32> = t
                    .queries(r)
                    .into_iter()
                    .flat_map(|p| out[self.target(g_in, e, p)][..self.w0].to_vec())
                    .collect();
                out[self.test(e, r)] = pad(l, self.width);
            }
        }
        out
    }

    fn backward(&self, a: &SymAssignment) -> SymAssignment {
        let k = self.tester.code_len();
        (0..self.n_in)
            .map(|v| {
                let code: Vec<Vec<u32>> = (0..k).map(|i| a[self.cloud(v, i)][..self.w0].to_vec()).collect();
                self.tester.decode(&code, self.w_in)
            })
            .collect()
    }
}

/// Clouds `u_1..u_k` per vertex, auxiliary vertices per edge and a test
/// vertex `t_{e,r}` per edge and random string, joined to each queried
/// vertex by an equality edge and carrying the test's check as a loop:
/// `(ell + 1) R |E|` edges.
pub fn compose(g2: &ConstraintGraph, tester: Arc<dyn FiniteTester>) -> Result<(ConstraintGraph, WitnessMap), PipelineError> {
    let (base, w_in) = match &g2.alphabet {
        Alphabet::Finite { base, width } => (*base, *width),
        _ => return Err(PipelineError::Graph(GraphError::NotFinite)),
    };
    g2.validate()?;
    for e in &g2.edges {
        if !tester.covers(&g2.constraints[e.c]) {
            return Err(PipelineError::Uncovered(tester.name().into(), e.c));
        }
    }
    let (ell, rr) = (tester.ell(), tester.randomness());
    let w0 = tester.symbol_width(w_in);
    let width = ell * w0;
    let aux_base = g2.n * tester.code_len();
    let test_base = aux_base + g2.edges.len() * tester.aux_len();
    let layout = ComposeLayout { tester: tester.clone(), n_in: g2.n, edges_in: g2.edges.len(), w_in, w0, width, aux_base, test_base };
    let mut g = ConstraintGraph::new(test_base + g2.edges.len() * rr, Alphabet::Finite { base, width });
    let eqs: Vec<usize> = (0..ell)
        .map(|i| {
            g.add_constraint(EdgeConstraint::Lift {
                base: Box::new(EdgeConstraint::Equal),
                coords: (i * w0..(i + 1) * w0).chain(width..width + w0).collect(),
            })
        })
        .collect();
    let mut checks: HashMap<(usize, usize), usize> = HashMap::new();
    for (e, ed) in g2.edges.iter().enumerate() {
        for r in 0..rr {
            let t = layout.test(e, r);
            for (i, p) in tester.queries(r).into_iter().enumerate() {
                g.add_edge(t, layout.target(g2, e, p), eqs[i]);
            }
            let id = *checks
                .entry((ed.c, r))
                .or_insert_with(|| g.add_constraint(tester.check(&g2.constraints[ed.c], r, w_in)));
            g.add_edge(t, t, id);
        }
    }
    Ok((g, WitnessMap::Compose(layout)))
}

// ----------------------------------------------------------- amplification

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTrace {
    pub round: usize,
    pub stage: String,
    pub vertices: usize,
    pub edges: usize,
    pub alphabet: String,
    pub measured_unsat: Option<String>,
    pub lambda: Option<f64>,
    pub sampled: Option<bool>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmplifyTrace {
    pub stages: Vec<StageTrace>,
    /// `|E|` after each round divided by `|E|` before it.
    pub blowup: Vec<f64>,
}

fn measure(g: &ConstraintGraph, budget: u64) -> Option<String> {
    if budget == 0 {
        return None;
    }
    unsat_exact_finite(g, budget).ok().map(|u| format_rational(&u))
}

/// The chain of transformations applied by [`amplify`], for transporting
/// witnesses end to end.
#[derive(Debug, Clone)]
pub struct Chain {
    pub graphs: Vec<ConstraintGraph>,
    pub maps: Vec<WitnessMap>,
}

impl Chain {
    pub fn forward(&self, a: &SymAssignment) -> SymAssignment {
        self.maps.iter().zip(&self.graphs).fold(a.clone(), |acc, (m, g)| m.forward_sym(g, &acc))
    }

    pub fn backward(&self, a: &SymAssignment) -> SymAssignment {
        self.maps.iter().zip(&self.graphs).rev().fold(a.clone(), |acc, (m, g)| m.backward_sym(g, &acc))
    }

    pub fn output(&self) -> &ConstraintGraph {
        self.graphs.last().expect("chain starts with the input")
    }
}

/// `rounds` rounds of step 1, step 2 and composition.
pub fn amplify(
    g: &ConstraintGraph,
    params: &PipelineParams,
    tester: Arc<dyn FiniteTester>,
) -> Result<(Chain, AmplifyTrace), PipelineError> {
    if params.t == 0 {
        return Err(PipelineError::BadPower);
    }
    let mut chain = Chain { graphs: vec![g.clone()], maps: vec![] };
    let mut stages = vec![];
    let mut blowup = vec![];
    let stage = |round: usize, name: &str, g: &ConstraintGraph, seed: u64, budget: u64| StageTrace {
        round,
        stage: name.into(),
        vertices: g.n,
        edges: g.edges.len(),
        alphabet: g.alphabet.describe(),
        measured_unsat: measure(g, budget),
        lambda: None,
        sampled: None,
        seed,
    };
    stages.push(stage(0, "input", g, params.seed, params.measure_budget));
    for round in 1..=params.rounds {
        let seed = seeds::child(params.seed, round as u64);
        let cur = chain.output().clone();
        let (g1, m1, r1) = step1_expanderize(&cur, params.d, params.lambda, seed, params.retries)?;
        let mut s = stage(round, "step1", &g1, seed, params.measure_budget);
        s.lambda = Some(r1.lambda);
        stages.push(s);
        let (g2, m2, r2) = step2_power(&g1, params.t, params.walk_budget, seed)?;
        let mut s = stage(round, "step2", &g2, seed, params.measure_budget);
        s.sampled = Some(r2.sampled);
        stages.push(s);
        let (g3, m3) = compose(&g2, tester.clone())?;
        stages.push(stage(round, "compose", &g3, seed, params.measure_budget));
        blowup.push(g3.edges.len() as f64 / cur.edges.len().max(1) as f64);
        chain.graphs.extend([g1, g2, g3]);
        chain.maps.extend([m1, m2, m3]);
    }
    Ok((chain, AmplifyTrace { stages, blowup }))
}

/// Number of rounds the loop runs: `ceil(log2 |E| - log2 alpha)`.
pub fn round_count(edges: usize, alpha: f64) -> usize {
    ((edges as f64).log2() - alpha.log2()).ceil().max(0.0) as usize
}
