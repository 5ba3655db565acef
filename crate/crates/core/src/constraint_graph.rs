//! Constraint graphs over finite vector alphabets and real boxes, the lift
//! and conjunction combinators, exact UNSAT at desk scale and spectra.

use crate::constraint_core::{Constraint, Scalar};
use crate::numerics::{format_rational, parse_rational, rat, Rational};
use nalgebra::DMatrix;
use serde_json::{json, Value};
use std::collections::BTreeSet;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("enumeration needs about {needed:.3e} steps, budget is {budget}")]
    Budget { needed: f64, budget: u64 },
    #[error("operation needs a finite alphabet")]
    NotFinite,
    #[error("coordinate {index} out of range for letters of width {width}")]
    Coordinate { index: usize, width: usize },
    #[error("edge {edge} references vertex {vertex} but the graph has {n}")]
    Vertex { edge: usize, vertex: usize, n: usize },
    #[error("edge {edge} references constraint {id} but the table has {len}")]
    ConstraintId { edge: usize, id: usize, len: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("lift needs an even number of coordinates, got {0}")]
    OddLift(usize),
}

/// Letters of a finite alphabet are vectors in `{0..base}^width`; a plain
/// finite alphabet has width 1. Real letters are vectors in `[1/2, 2]^dim`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Alphabet {
    Finite { base: u32, width: usize },
    RealBox { dim: usize, q: Option<Rational> },
}

impl Alphabet {
    pub fn finite(base: u32) -> Alphabet {
        Alphabet::Finite { base, width: 1 }
    }

    pub fn width(&self) -> usize {
        match self {
            Alphabet::Finite { width, .. } => *width,
            Alphabet::RealBox { dim, .. } => *dim,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Alphabet::Finite { base, width } => format!("{{0..{}}}^{}", base - 1, width),
            Alphabet::RealBox { dim, .. } => format!("[1/2,2]^{dim}"),
        }
    }
}

pub type Relation = Arc<Vec<(u32, u32)>>;

/// A binary constraint over letters. Coordinates in `Lift` and `Atom` index
/// the concatenation `left ++ right`.
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeConstraint {
    /// The full relation.
    Null,
    /// Sorted pairs on the first coordinate of each side.
    Relation(Relation),
    /// Equality of whole letters.
    Equal,
    /// A real atom over coordinates of the concatenated letter.
    Atom(Constraint),
    /// `base` applied to `(z[c_0..c_h], z[c_h..c_2h])` with `z = left ++ right`.
    Lift { base: Box<EdgeConstraint>, coords: Vec<usize> },
    /// Intersection; the empty conjunction is the full relation.
    Conj(Vec<EdgeConstraint>),
}

impl EdgeConstraint {
    pub fn relation(mut pairs: Vec<(u32, u32)>) -> EdgeConstraint {
        pairs.sort_unstable();
        pairs.dedup();
        EdgeConstraint::Relation(Arc::new(pairs))
    }

    pub fn never() -> EdgeConstraint {
        EdgeConstraint::relation(vec![])
    }

    /// `x != y` on symbols `0..base`.
    pub fn not_equal(base: u32) -> EdgeConstraint {
        let pairs = (0..base).flat_map(|a| (0..base).filter(move |&b| b != a).map(move |b| (a, b))).collect();
        EdgeConstraint::relation(pairs)
    }

    /// Equality on the first coordinate only.
    pub fn equal_symbols(base: u32) -> EdgeConstraint {
        EdgeConstraint::relation((0..base).map(|a| (a, a)).collect())
    }

    pub fn holds_sym(&self, a: &[u32], b: &[u32]) -> bool {
        match self {
            EdgeConstraint::Null => true,
            EdgeConstraint::Relation(r) => r.binary_search(&(a[0], b[0])).is_ok(),
            EdgeConstraint::Equal => a == b,
            EdgeConstraint::Atom(_) => false,
            EdgeConstraint::Lift { base, coords } => {
                let h = coords.len() / 2;
                let pick = |j: usize| if j < a.len() { a[j] } else { b[j - a.len()] };
                let l: Vec<u32> = coords[..h].iter().map(|&j| pick(j)).collect();
                let r: Vec<u32> = coords[h..].iter().map(|&j| pick(j)).collect();
                base.holds_sym(&l, &r)
            }
            EdgeConstraint::Conj(cs) => cs.iter().all(|c| c.holds_sym(a, b)),
        }
    }

    /// Real letters; an atom also requires its coordinates in `[1/2, 2]`.
    pub fn holds_real(&self, a: &[Rational], b: &[Rational], q: &Rational) -> bool {
        match self {
            EdgeConstraint::Null => true,
            EdgeConstraint::Relation(_) => false,
            EdgeConstraint::Equal => a == b,
            EdgeConstraint::Atom(c) => {
                let z: Vec<Rational> = a.iter().chain(b.iter()).cloned().collect();
                c.vars().iter().all(|&v| z[v].in_box()) && c.holds(&z, q)
            }
            EdgeConstraint::Lift { base, coords } => {
                let h = coords.len() / 2;
                let pick = |j: usize| if j < a.len() { a[j].clone() } else { b[j - a.len()].clone() };
                let l: Vec<Rational> = coords[..h].iter().map(|&j| pick(j)).collect();
                let r: Vec<Rational> = coords[h..].iter().map(|&j| pick(j)).collect();
                base.holds_real(&l, &r, q)
            }
            EdgeConstraint::Conj(cs) => cs.iter().all(|c| c.holds_real(a, b, q)),
        }
    }

    /// Coordinates of each side the constraint can observe.
    fn referenced(&self, wl: usize, wr: usize, out_l: &mut BTreeSet<usize>, out_r: &mut BTreeSet<usize>) {
        match self {
            EdgeConstraint::Null => {}
            EdgeConstraint::Relation(_) => {
                out_l.insert(0);
                out_r.insert(0);
            }
            EdgeConstraint::Equal => {
                out_l.extend(0..wl);
                out_r.extend(0..wr);
            }
            EdgeConstraint::Atom(c) => {
                for v in c.vars() {
                    if v < wl {
                        out_l.insert(v);
                    } else {
                        out_r.insert(v - wl);
                    }
                }
            }
            EdgeConstraint::Lift { base, coords } => {
                let h = coords.len() / 2;
                let (mut sl, mut sr) = (BTreeSet::new(), BTreeSet::new());
                base.referenced(h, h, &mut sl, &mut sr);
                for j in sl.into_iter().map(|i| coords[i]).chain(sr.into_iter().map(|i| coords[h + i])) {
                    if j < wl {
                        out_l.insert(j);
                    } else {
                        out_r.insert(j - wl);
                    }
                }
            }
            EdgeConstraint::Conj(cs) => {
                for c in cs {
                    c.referenced(wl, wr, out_l, out_r);
                }
            }
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            EdgeConstraint::Null => json!("null"),
            EdgeConstraint::Relation(r) => json!({ "relation": r.as_slice() }),
            EdgeConstraint::Equal => json!("eq"),
            EdgeConstraint::Atom(c) => json!({ "atom": c.tag(), "vars": c.vars() }),
            EdgeConstraint::Lift { base, coords } => json!({ "lift": base.to_json(), "coords": coords }),
            EdgeConstraint::Conj(cs) => json!({ "conj": cs.iter().map(|c| c.to_json()).collect::<Vec<_>>() }),
        }
    }
}

/// Applies `c` (a constraint on letters of width `coords.len()/2`) to the
/// chosen coordinates of letters of width `k`, leaving the rest free.
pub fn lift_constraint(c: &EdgeConstraint, coords: &[usize], k: usize) -> Result<EdgeConstraint, GraphError> {
    if coords.len() % 2 != 0 {
        return Err(GraphError::OddLift(coords.len()));
    }
    if let Some(&index) = coords.iter().find(|&&j| j >= 2 * k) {
        return Err(GraphError::Coordinate { index, width: k });
    }
    Ok(EdgeConstraint::Lift { base: Box::new(c.clone()), coords: coords.to_vec() })
}

/// The conjunction closure `P(C)`.
pub fn conjunction(cs: Vec<EdgeConstraint>) -> EdgeConstraint {
    EdgeConstraint::Conj(cs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub c: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintGraph {
    pub n: usize,
    pub alphabet: Alphabet,
    pub constraints: Vec<EdgeConstraint>,
    pub edges: Vec<Edge>,
}

pub type SymAssignment = Vec<Vec<u32>>;

impl ConstraintGraph {
    pub fn new(n: usize, alphabet: Alphabet) -> Self {
        ConstraintGraph { n, alphabet, constraints: vec![], edges: vec![] }
    }

    pub fn add_constraint(&mut self, c: EdgeConstraint) -> usize {
        self.constraints.push(c);
        self.constraints.len() - 1
    }

    pub fn add_edge(&mut self, u: usize, v: usize, c: usize) {
        self.edges.push(Edge { u, v, c });
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        for (i, e) in self.edges.iter().enumerate() {
            for x in [e.u, e.v] {
                if x >= self.n {
                    return Err(GraphError::Vertex { edge: i, vertex: x, n: self.n });
                }
            }
            if e.c >= self.constraints.len() {
                return Err(GraphError::ConstraintId { edge: i, id: e.c, len: self.constraints.len() });
            }
        }
        Ok(())
    }

    /// Degrees under the loop convention (a loop adds 2).
    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for e in &self.edges {
            d[e.u] += 1;
            d[e.v] += 1;
        }
        d
    }

    pub fn regular_degree(&self) -> Option<usize> {
        let d = self.degrees();
        let first = *d.first()?;
        d.iter().all(|&x| x == first).then_some(first)
    }

    /// Incident edge indices per vertex; a loop appears twice.
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![vec![]; self.n];
        for (i, e) in self.edges.iter().enumerate() {
            inc[e.u].push(i);
            inc[e.v].push(i);
        }
        inc
    }

    pub fn violated_sym(&self, a: &[Vec<u32>]) -> usize {
        self.edges.iter().filter(|e| !self.constraints[e.c].holds_sym(&a[e.u], &a[e.v])).count()
    }

    pub fn unsat_of(&self, a: &[Vec<u32>]) -> Rational {
        if self.edges.is_empty() {
            return Rational::from_integer(0.into());
        }
        rat(self.violated_sym(a) as i64, self.edges.len() as i64)
    }

    pub fn violated_real(&self, a: &[Vec<Rational>]) -> usize {
        let q = match &self.alphabet {
            Alphabet::RealBox { q: Some(q), .. } => q.clone(),
            _ => Rational::from_integer(0.into()),
        };
        self.edges.iter().filter(|e| !self.constraints[e.c].holds_real(&a[e.u], &a[e.v], &q)).count()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "vertices": self.n,
            "alphabet": self.alphabet.describe(),
            "constraints": self.constraints.iter().map(|c| c.to_json()).collect::<Vec<_>>(),
            "edges": self.edges.iter().map(|e| [e.u, e.v, e.c]).collect::<Vec<_>>(),
        })
    }
}

// ---------------------------------------------------------------- text I/O

fn constraint_line(c: &EdgeConstraint, ids: &mut Vec<String>, parts: &mut Vec<String>) -> String {
    match c {
        EdgeConstraint::Null => "null".into(),
        EdgeConstraint::Equal => "eq".into(),
        EdgeConstraint::Relation(r) if r.is_empty() => "never".into(),
        EdgeConstraint::Relation(r) => {
            let mut s = String::from("rel");
            for (a, b) in r.iter() {
                s += &format!(" {a}:{b}");
            }
            s
        }
        EdgeConstraint::Atom(a) => {
            let mut s = format!("atom {}", a.tag());
            for v in a.vars() {
                s += &format!(" {v}");
            }
            s
        }
        EdgeConstraint::Lift { base, coords } => {
            let id = push_part(base, ids, parts);
            let mut s = format!("lift {id}");
            for c in coords {
                s += &format!(" {c}");
            }
            s
        }
        EdgeConstraint::Conj(cs) => {
            let mut s = String::from("conj");
            for c in cs {
                let id = push_part(c, ids, parts);
                s += &format!(" {id}");
            }
            s
        }
    }
}

fn push_part(c: &EdgeConstraint, ids: &mut Vec<String>, parts: &mut Vec<String>) -> String {
    let body = constraint_line(c, ids, parts);
    let id = format!("p{}", parts.len());
    parts.push(format!("part {id} {body}"));
    ids.push(id.clone());
    id
}

/// Text form: `cgraph V E`, an `alphabet` line, `constraint <id> <def>`
/// lines for the edge-level table, `part <id> <def>` lines for nested pieces,
/// then one `u v <constraint-id>` line per edge.
pub fn serialize_graph(g: &ConstraintGraph) -> String {
    let mut out = format!("cgraph {} {}\n", g.n, g.edges.len());
    out += &match &g.alphabet {
        Alphabet::Finite { base, width } => format!("alphabet finite {base} {width}\n"),
        Alphabet::RealBox { dim, q: None } => format!("alphabet real {dim}\n"),
        Alphabet::RealBox { dim, q: Some(q) } => format!("alphabet real {dim} {}\n", format_rational(q)),
    };
    let mut ids = vec![];
    let mut parts = vec![];
    let mut top = vec![];
    for (i, c) in g.constraints.iter().enumerate() {
        top.push(format!("constraint {i} {}", constraint_line(c, &mut ids, &mut parts)));
    }
    for p in parts {
        out += &p;
        out.push('\n');
    }
    for t in top {
        out += &t;
        out.push('\n');
    }
    for e in &g.edges {
        out += &format!("{} {} {}\n", e.u, e.v, e.c);
    }
    out
}

pub fn parse_graph(text: &str) -> Result<ConstraintGraph, GraphError> {
    use std::collections::HashMap;
    let perr = |line: usize, msg: String| GraphError::Parse { line, msg };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hl, header) = lines.next().ok_or(perr(1, "empty input".into()))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    let num = |line: usize, s: &str| s.parse::<usize>().map_err(|_| perr(line, format!("bad number {s:?}")));
    if h.len() != 3 || h[0] != "cgraph" {
        return Err(perr(hl, "expected 'cgraph V E'".into()));
    }
    let (n, m) = (num(hl, h[1])?, num(hl, h[2])?);
    let (al, aline) = lines.next().ok_or(perr(hl, "missing alphabet line".into()))?;
    let a: Vec<&str> = aline.split_whitespace().collect();
    let alphabet = match a.as_slice() {
        ["alphabet", "finite", b, w] => Alphabet::Finite { base: num(al, b)? as u32, width: num(al, w)? },
        ["alphabet", "real", d] => Alphabet::RealBox { dim: num(al, d)?, q: None },
        ["alphabet", "real", d, q] => Alphabet::RealBox {
            dim: num(al, d)?,
            q: Some(parse_rational(q).map_err(|e| perr(al, e.to_string()))?),
        },
        _ => return Err(perr(al, format!("bad alphabet line {aline:?}"))),
    };
    let mut defs: HashMap<String, EdgeConstraint> = HashMap::new();
    let mut table: Vec<EdgeConstraint> = vec![];
    let mut edges = vec![];
    for (line, l) in lines {
        let t: Vec<&str> = l.split_whitespace().collect();
        if t[0] == "constraint" || t[0] == "part" {
            if t.len() < 3 {
                return Err(perr(line, "truncated constraint".into()));
            }
            let get = |id: &str| defs.get(id).cloned().ok_or_else(|| perr(line, format!("unknown id {id:?}")));
            let c = match t[2] {
                "null" => EdgeConstraint::Null,
                "eq" => EdgeConstraint::Equal,
                "never" => EdgeConstraint::never(),
                "neq" => EdgeConstraint::not_equal(num(line, t.get(3).copied().unwrap_or("x"))? as u32),
                "rel" => {
                    let mut pairs = vec![];
                    for p in &t[3..] {
                        let (x, y) = p.split_once(':').ok_or_else(|| perr(line, format!("bad pair {p:?}")))?;
                        pairs.push((num(line, x)? as u32, num(line, y)? as u32));
                    }
                    EdgeConstraint::relation(pairs)
                }
                "atom" => {
                    let text = format!("etrcq 1 64\n{}", t[3..].join(" "));
                    let inst = crate::constraint_core::parse_instance(&text).map_err(|e| perr(line, e.to_string()))?;
                    EdgeConstraint::Atom(inst.constraints[0])
                }
                "lift" => {
                    let base = get(t.get(3).copied().unwrap_or(""))?;
                    let coords = t[4..].iter().map(|s| num(line, s)).collect::<Result<Vec<_>, _>>()?;
                    if coords.len() % 2 != 0 {
                        return Err(perr(line, "lift needs an even coordinate count".into()));
                    }
                    EdgeConstraint::Lift { base: Box::new(base), coords }
                }
                "conj" => EdgeConstraint::Conj(t[3..].iter().map(|s| get(s)).collect::<Result<_, _>>()?),
                other => return Err(perr(line, format!("unknown constraint kind {other:?}"))),
            };
            if t[0] == "constraint" {
                if num(line, t[1])? != table.len() {
                    return Err(perr(line, "constraint ids must be 0,1,2,... in order".into()));
                }
                table.push(c.clone());
            }
            defs.insert(t[1].to_string(), c);
        } else {
            if t.len() != 3 {
                return Err(perr(line, format!("expected 'u v id', got {l:?}")));
            }
            edges.push(Edge { u: num(line, t[0])?, v: num(line, t[1])?, c: num(line, t[2])? });
        }
    }
    if edges.len() != m {
        return Err(perr(hl, format!("header says {m} edges, found {}", edges.len())));
    }
    let g = ConstraintGraph { n, alphabet, constraints: table, edges };
    g.validate()?;
    Ok(g)
}

// ------------------------------------------------------------- exact UNSAT

fn finite_params(g: &ConstraintGraph) -> Result<(u32, usize), GraphError> {
    match g.alphabet {
        Alphabet::Finite { base, width } => Ok((base, width)),
        _ => Err(GraphError::NotFinite),
    }
}

fn relevant_coords(g: &ConstraintGraph, width: usize) -> Vec<BTreeSet<usize>> {
    let mut rel = vec![BTreeSet::new(); g.n];
    for e in &g.edges {
        let (mut l, mut r) = (BTreeSet::new(), BTreeSet::new());
        g.constraints[e.c].referenced(width, width, &mut l, &mut r);
        rel[e.u].extend(l);
        rel[e.v].extend(r);
    }
    rel
}

fn letters_over(coords: &BTreeSet<usize>, base: u32, width: usize) -> Vec<Vec<u32>> {
    let cs: Vec<usize> = coords.iter().copied().collect();
    let mut out = vec![];
    let mut idx = vec![0u32; cs.len()];
    loop {
        let mut l = vec![0u32; width];
        for (k, &c) in cs.iter().enumerate() {
            l[c] = idx[k];
        }
        out.push(l);
        let mut k = 0;
        while k < cs.len() {
            idx[k] += 1;
            if idx[k] < base {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == cs.len() {
            return out;
        }
    }
}

/// Exact minimum fraction of violated edges over all labelings.
pub fn unsat_exact_finite(g: &ConstraintGraph, budget: u64) -> Result<Rational, GraphError> {
    Ok(min_unsat_finite(g, budget)?.0)
}

/// Exact optimum with a witness. Coordinates no constraint can observe are
/// pinned to 0, and a maximal independent set of vertices is optimized
/// locally for each labeling of the rest, which keeps the search exact.
pub fn min_unsat_finite(g: &ConstraintGraph, budget: u64) -> Result<(Rational, SymAssignment), GraphError> {
    let (base, width) = finite_params(g)?;
    g.validate()?;
    if g.edges.is_empty() {
        return Ok((rat(0, 1), vec![vec![0; width]; g.n]));
    }
    let relevant = relevant_coords(g, width);
    let sizes: Vec<f64> = relevant.iter().map(|r| (base as f64).powi(r.len() as i32)).collect();
    let inc = g.incidence();
    let mut order: Vec<usize> = (0..g.n).collect();
    order.sort_by(|&a, &b| sizes[b].partial_cmp(&sizes[a]).unwrap().then(a.cmp(&b)));
    let mut local = vec![false; g.n];
    for &v in &order {
        let free = inc[v].iter().all(|&ei| {
            let e = g.edges[ei];
            let w = if e.u == v { e.v } else { e.u };
            w == v || !local[w]
        });
        if free && sizes[v] > 1.0 {
            local[v] = true;
        }
    }
    let core: Vec<usize> = (0..g.n).filter(|&v| !local[v]).collect();
    let core_space: f64 = core.iter().map(|&v| sizes[v]).product();
    let local_cost: f64 = (0..g.n).filter(|&v| local[v]).map(|v| sizes[v] * inc[v].len() as f64).sum();
    let needed = core_space * (1.0 + local_cost + g.edges.len() as f64);
    if needed > budget as f64 {
        return Err(GraphError::Budget { needed, budget });
    }
    let letters: Vec<Vec<Vec<u32>>> = relevant.iter().map(|r| letters_over(r, base, width)).collect();
    let core_edges: Vec<usize> =
        (0..g.edges.len()).filter(|&i| !local[g.edges[i].u] && !local[g.edges[i].v]).collect();
    let mut a: SymAssignment = letters.iter().map(|l| l[0].clone()).collect();
    let mut idx = vec![0usize; core.len()];
    let mut best = usize::MAX;
    let mut best_a = a.clone();
    loop {
        for (k, &v) in core.iter().enumerate() {
            a[v] = letters[v][idx[k]].clone();
        }
        let mut viol = core_edges
            .iter()
            .filter(|&&i| {
                let e = g.edges[i];
                !g.constraints[e.c].holds_sym(&a[e.u], &a[e.v])
            })
            .count();
        for t in (0..g.n).filter(|&v| local[v]) {
            if viol >= best {
                break;
            }
            let mut edges_t: Vec<usize> = inc[t].clone();
            edges_t.dedup();
            let mut best_t = usize::MAX;
            let mut best_l = 0;
            for (li, l) in letters[t].iter().enumerate() {
                a[t] = l.clone();
                let c = edges_t
                    .iter()
                    .filter(|&&i| {
                        let e = g.edges[i];
                        !g.constraints[e.c].holds_sym(&a[e.u], &a[e.v])
                    })
                    .count();
                if c < best_t {
                    best_t = c;
                    best_l = li;
                    if c == 0 {
                        break;
                    }
                }
            }
            a[t] = letters[t][best_l].clone();
            viol += best_t;
        }
        if viol < best {
            best = viol;
            best_a = a.clone();
            if best == 0 {
                break;
            }
        }
        let mut k = 0;
        while k < core.len() {
            idx[k] += 1;
            if idx[k] < letters[core[k]].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == core.len() {
            break;
        }
    }
    debug_assert_eq!(g.violated_sym(&best_a), best);
    Ok((rat(best as i64, g.edges.len() as i64), best_a))
}

// ------------------------------------------------- satisfiability by search

struct Flat {
    eq: Vec<(usize, usize)>,
    rel: Vec<(usize, usize, Relation)>,
    impossible: bool,
}

fn flatten(c: &EdgeConstraint, l: &[usize], r: &[usize], out: &mut Flat) -> Result<(), GraphError> {
    match c {
        EdgeConstraint::Null => {}
        EdgeConstraint::Equal => out.eq.extend(l.iter().copied().zip(r.iter().copied())),
        EdgeConstraint::Relation(rel) => {
            if rel.is_empty() {
                out.impossible = true;
            }
            out.rel.push((l[0], r[0], rel.clone()));
        }
        EdgeConstraint::Atom(_) => return Err(GraphError::NotFinite),
        EdgeConstraint::Lift { base, coords } => {
            let h = coords.len() / 2;
            let pick = |j: usize| if j < l.len() { l[j] } else { r[j - l.len()] };
            let sl: Vec<usize> = coords[..h].iter().map(|&j| pick(j)).collect();
            let sr: Vec<usize> = coords[h..].iter().map(|&j| pick(j)).collect();
            flatten(base, &sl, &sr, out)?;
        }
        EdgeConstraint::Conj(cs) => {
            for c in cs {
                flatten(c, l, r, out)?;
            }
        }
    }
    Ok(())
}

fn find(p: &mut [usize], mut x: usize) -> usize {
    while p[x] != x {
        p[x] = p[p[x]];
        x = p[x];
    }
    x
}

/// Decides whether every edge can be satisfied at once, by reducing all
/// constraints to coordinate equalities plus base relations and searching
/// over the resulting equivalence classes. `Ok(None)` is a proof of
/// unsatisfiability (UNSAT > 0); `node_budget` caps the backtracking tree.
pub fn satisfying_assignment(g: &ConstraintGraph, node_budget: u64) -> Result<Option<SymAssignment>, GraphError> {
    let (base, width) = finite_params(g)?;
    g.validate()?;
    let mut flat = Flat { eq: vec![], rel: vec![], impossible: false };
    for e in &g.edges {
        let l: Vec<usize> = (0..width).map(|i| e.u * width + i).collect();
        let r: Vec<usize> = (0..width).map(|i| e.v * width + i).collect();
        flatten(&g.constraints[e.c], &l, &r, &mut flat)?;
    }
    if flat.impossible {
        return Ok(None);
    }
    let total = g.n * width;
    let mut parent: Vec<usize> = (0..total).collect();
    for &(a, b) in &flat.eq {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
        }
    }
    let mut class_of = vec![usize::MAX; total];
    let mut reps: Vec<usize> = vec![];
    for x in 0..total {
        let r = find(&mut parent, x);
        if class_of[r] == usize::MAX {
            class_of[r] = reps.len();
            reps.push(r);
        }
        class_of[x] = class_of[r];
    }
    let nc = reps.len();
    let mut domain: Vec<Vec<u32>> = vec![(0..base).collect(); nc];
    let mut adj: Vec<Vec<(usize, Relation, bool)>> = vec![vec![]; nc];
    for (a, b, r) in &flat.rel {
        let (ca, cb) = (class_of[*a], class_of[*b]);
        if ca == cb {
            domain[ca].retain(|&x| r.binary_search(&(x, x)).is_ok());
        } else {
            adj[ca].push((cb, r.clone(), true));
            adj[cb].push((ca, r.clone(), false));
        }
    }
    if domain.iter().any(|d| d.is_empty()) {
        return Ok(None);
    }
    // most-constrained first, then breadth-first through neighbours
    let mut order = vec![];
    let mut seen = vec![false; nc];
    let mut by_deg: Vec<usize> = (0..nc).collect();
    by_deg.sort_by_key(|&c| std::cmp::Reverse(adj[c].len()));
    for &s in &by_deg {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(c) = queue.pop_front() {
            order.push(c);
            for (d, _, _) in &adj[c] {
                if !seen[*d] {
                    seen[*d] = true;
                    queue.push_back(*d);
                }
            }
        }
    }
    let mut value: Vec<Option<u32>> = vec![None; nc];
    let mut nodes = 0u64;
    fn consistent(c: usize, x: u32, adj: &[Vec<(usize, Relation, bool)>], value: &[Option<u32>]) -> bool {
        adj[c].iter().all(|(d, r, fwd)| match value[*d] {
            None => true,
            Some(y) => {
                let p = if *fwd { (x, y) } else { (y, x) };
                r.binary_search(&p).is_ok()
            }
        })
    }
    fn search(
        pos: usize,
        order: &[usize],
        domain: &[Vec<u32>],
        adj: &[Vec<(usize, Relation, bool)>],
        value: &mut [Option<u32>],
        nodes: &mut u64,
        budget: u64,
    ) -> Result<bool, ()> {
        if pos == order.len() {
            return Ok(true);
        }
        *nodes += 1;
        if *nodes > budget {
            return Err(());
        }
        let c = order[pos];
        for &x in &domain[c] {
            if consistent(c, x, adj, value) {
                value[c] = Some(x);
                if search(pos + 1, order, domain, adj, value, nodes, budget)? {
                    return Ok(true);
                }
                value[c] = None;
            }
        }
        Ok(false)
    }
    match search(0, &order, &domain, &adj, &mut value, &mut nodes, node_budget) {
        Err(()) => Err(GraphError::Budget { needed: nodes as f64, budget: node_budget }),
        Ok(false) => Ok(None),
        Ok(true) => {
            let a: SymAssignment = (0..g.n)
                .map(|v| (0..width).map(|i| value[class_of[v * width + i]].unwrap_or(0)).collect())
                .collect();
            debug_assert_eq!(g.violated_sym(&a), 0);
            Ok(Some(a))
        }
    }
}

// ---------------------------------------------------------------- spectra

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Second largest eigenvalue in absolute value.
    pub lambda: f64,
    /// Bound on `|lambda - true value|` from the eigenpair residual.
    pub error: f64,
    pub largest: f64,
}

/// Adjacency matrix; parallel edges add up and a loop adds 2 on the diagonal.
pub fn adjacency(g: &ConstraintGraph) -> DMatrix<f64> {
    let mut a = DMatrix::<f64>::zeros(g.n, g.n);
    for e in &g.edges {
        if e.u == e.v {
            a[(e.u, e.u)] += 2.0;
        } else {
            a[(e.u, e.v)] += 1.0;
            a[(e.v, e.u)] += 1.0;
        }
    }
    a
}

pub fn second_eigenvalue(g: &ConstraintGraph, max_vertices: usize) -> Result<Spectrum, GraphError> {
    if g.n > max_vertices {
        return Err(GraphError::Budget { needed: g.n as f64, budget: max_vertices as u64 });
    }
    let a = adjacency(g);
    if g.n < 2 {
        let v = if g.n == 1 { a[(0, 0)] } else { 0.0 };
        return Ok(Spectrum { lambda: 0.0, error: 0.0, largest: v });
    }
    let eig = a.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..g.n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].abs().partial_cmp(&eig.eigenvalues[i].abs()).unwrap());
    let pick = idx[1];
    let lam = eig.eigenvalues[pick];
    let v = eig.eigenvectors.column(pick);
    let residual = (&a * v - v * lam).norm() / v.norm();
    let rounding = 1e-12 * a.norm() * (g.n as f64);
    Ok(Spectrum { lambda: lam.abs(), error: residual + rounding, largest: eig.eigenvalues[idx[0]] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::int;

    fn cycle(n: usize, c: EdgeConstraint, base: u32) -> ConstraintGraph {
        let mut g = ConstraintGraph::new(n, Alphabet::finite(base));
        let id = g.add_constraint(c);
        for i in 0..n {
            g.add_edge(i, (i + 1) % n, id);
        }
        g
    }

    fn complete(n: usize) -> ConstraintGraph {
        let mut g = ConstraintGraph::new(n, Alphabet::finite(2));
        let id = g.add_constraint(EdgeConstraint::Null);
        for i in 0..n {
            for j in i + 1..n {
                g.add_edge(i, j, id);
            }
        }
        g
    }

    #[test]
    fn unsat_examples() {
        let tri = cycle(3, EdgeConstraint::not_equal(2), 2);
        assert_eq!(unsat_exact_finite(&tri, 1000).unwrap(), rat(1, 3));
        assert!(satisfying_assignment(&tri, 1000).unwrap().is_none());
        let sq = cycle(4, EdgeConstraint::not_equal(2), 2);
        assert_eq!(unsat_exact_finite(&sq, 1000).unwrap(), int(0));
        assert!(satisfying_assignment(&sq, 1000).unwrap().is_some());
        let nul = cycle(5, EdgeConstraint::Null, 3);
        assert_eq!(unsat_exact_finite(&nul, 1000).unwrap(), int(0));
        let mut lp = ConstraintGraph::new(1, Alphabet::finite(2));
        let id = lp.add_constraint(EdgeConstraint::never());
        lp.add_edge(0, 0, id);
        assert_eq!(unsat_exact_finite(&lp, 10).unwrap(), int(1));
    }

    #[test]
    fn spectra_closed_forms() {
        let k4 = second_eigenvalue(&complete(4), 100).unwrap();
        assert!((k4.lambda - 1.0).abs() < 1e-8 && (k4.largest - 3.0).abs() < 1e-8);
        let c8 = second_eigenvalue(&cycle(8, EdgeConstraint::Null, 2), 100).unwrap();
        // C8 is bipartite: -2 is an eigenvalue, so lambda = 2
        assert!((c8.lambda - 2.0).abs() < 1e-8);
        let c7 = second_eigenvalue(&cycle(7, EdgeConstraint::Null, 2), 100).unwrap();
        let want = (2.0 * (6.0 * std::f64::consts::PI / 7.0).cos()).abs();
        assert!((c7.lambda - want).abs() < 1e-8, "{} vs {want}", c7.lambda);
        let mut k33 = ConstraintGraph::new(6, Alphabet::finite(2));
        let id = k33.add_constraint(EdgeConstraint::Null);
        for i in 0..3 {
            for j in 3..6 {
                k33.add_edge(i, j, id);
            }
        }
        assert!((second_eigenvalue(&k33, 100).unwrap().lambda - 3.0).abs() < 1e-8);
    }

    #[test]
    fn lift_and_conj() {
        let eq = EdgeConstraint::equal_symbols(3);
        let l = lift_constraint(&eq, &[1, 3], 2).unwrap();
        assert!(l.holds_sym(&[0, 2], &[1, 2]));
        assert!(!l.holds_sym(&[0, 2], &[2, 1]));
        // diagonal use: same coordinate on both halves is always true
        let d = lift_constraint(&eq, &[1, 1], 2).unwrap();
        assert!(d.holds_sym(&[0, 2], &[1, 0]));
        assert!(conjunction(vec![]).holds_sym(&[0], &[1]));
        assert!(lift_constraint(&eq, &[0, 4], 2).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut g = cycle(3, EdgeConstraint::not_equal(2), 2);
        g.alphabet = Alphabet::Finite { base: 2, width: 2 };
        let inner = lift_constraint(&EdgeConstraint::not_equal(2), &[1, 2], 2).unwrap();
        let id = g.add_constraint(conjunction(vec![inner, EdgeConstraint::Equal]));
        g.add_edge(0, 0, id);
        let t = serialize_graph(&g);
        let back = parse_graph(&t).unwrap();
        assert_eq!(back, g);
        assert_eq!(serialize_graph(&back), t);
        assert!(parse_graph("cgraph 2 1\nalphabet finite 2 1\nconstraint 0 eq\n0 5 0\n").is_err());
    }
}
