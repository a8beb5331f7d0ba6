//! Exact satisfiability for quantifier-free Presburger formulas.
//!
//! The boolean structure is explored by a case-splitting search over the
//! negation-normal form. Each search node propagates variable bounds through
//! the asserted atoms, prunes with the rational relaxation, and hands fully
//! decided branches to the integer layer in [`lia`].

mod lia;
mod omega;
mod simplex;

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::formula::{Assignment, CmpOp, Formula};
use lia::Constraint;
use simplex::{q, Simplex};

/// Default search-node budget for a single `solve` call.
pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

static GLOBAL_BUDGET: AtomicU64 = AtomicU64::new(DEFAULT_NODE_BUDGET);

/// Sets the node budget used by [`solve`] and [`check_implication`].
pub fn set_default_budget(nodes: u64) {
    GLOBAL_BUDGET.store(nodes.max(1), Ordering::Relaxed);
}

pub fn default_budget() -> u64 {
    GLOBAL_BUDGET.load(Ordering::Relaxed)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SolveResult {
    Sat(Assignment),
    Unsat,
}

impl SolveResult {
    pub fn is_sat(&self) -> bool {
        matches!(self, SolveResult::Sat(_))
    }

    pub fn witness(&self) -> Option<&Assignment> {
        match self {
            SolveResult::Sat(w) => Some(w),
            SolveResult::Unsat => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Implication {
    Holds,
    Counterexample(Assignment),
}

#[derive(Debug)]
pub(crate) struct Exhausted;

pub(crate) struct Budget {
    limit: u64,
    used: u64,
    pub(crate) pivots: u64,
}

impl Budget {
    pub(crate) fn new(limit: u64) -> Self {
        Budget { limit, used: 0, pivots: 0 }
    }

    pub(crate) fn tick(&mut self) -> std::result::Result<(), Exhausted> {
        self.used += 1;
        if self.used > self.limit {
            Err(Exhausted)
        } else {
            Ok(())
        }
    }
}

/// Solver with an explicit node budget.
#[derive(Clone, Copy, Debug)]
pub struct Solver {
    pub node_budget: u64,
}

impl Default for Solver {
    fn default() -> Self {
        Solver { node_budget: default_budget() }
    }
}

/// Decides `f` over the naturals; variables in `extra_int` range over all integers.
pub fn solve(f: &Formula, extra_int: &BTreeSet<String>) -> Result<SolveResult> {
    Solver::default().solve(f, extra_int)
}

/// Checks `f ⇒ g` by refuting `f ∧ ¬g`.
pub fn check_implication(f: &Formula, g: &Formula) -> Result<Implication> {
    Solver::default().check_implication(f, g)
}

impl Solver {
    pub fn new(node_budget: u64) -> Self {
        Solver { node_budget }
    }

    pub fn check_implication(&self, f: &Formula, g: &Formula) -> Result<Implication> {
        let q = Formula::and([f.clone(), Formula::not(g.clone()).normalize()]);
        Ok(match self.solve(&q, &BTreeSet::new())? {
            SolveResult::Unsat => Implication::Holds,
            SolveResult::Sat(w) => Implication::Counterexample(w),
        })
    }

    pub fn solve(&self, f: &Formula, extra_int: &BTreeSet<String>) -> Result<SolveResult> {
        let vars: Vec<String> = f.free_vars().into_iter().collect();
        let nnf = f.normalize();
        let mut prob = Problem::new(&vars);
        let root = prob.build(&nnf);
        let n = vars.len();
        let lo: Vec<Option<i64>> = vars.iter().map(|v| if extra_int.contains(v) { None } else { Some(0) }).collect();
        let state = State { lo, hi: vec![None; n], asserted: Vec::new(), pending: vec![root], lp_checked: 0 };
        let mut budget = Budget::new(self.node_budget);
        match prob.search(state, &mut budget) {
            Err(Exhausted) => Err(Error::BudgetExhausted(budget.used)),
            Ok(None) => Ok(SolveResult::Unsat),
            Ok(Some(point)) => {
                let w: Assignment = vars.iter().cloned().zip(point).collect();
                assert!(f.eval(&w).unwrap_or(false), "solver produced a witness that does not satisfy the formula");
                Ok(SolveResult::Sat(w))
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Atom {
    Le(Vec<(usize, i64)>, i64),
    Eq(Vec<(usize, i64)>, i64),
    Mod(Vec<(usize, i64)>, i64, i64),
}

#[derive(Clone, Debug)]
enum Node {
    True,
    False,
    Atom(usize),
    And(Vec<usize>),
    Or(Vec<usize>),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Truth {
    True,
    False,
    Unknown,
}

struct Problem<'a> {
    vars: &'a [String],
    atoms: Vec<Atom>,
    nodes: Vec<Node>,
}

#[derive(Clone)]
struct State {
    lo: Vec<Option<i64>>,
    hi: Vec<Option<i64>>,
    asserted: Vec<usize>,
    pending: Vec<usize>,
    /// Number of asserted atoms covered by the last relaxation check.
    lp_checked: usize,
}

fn div_floor(a: i128, b: i128) -> i128 {
    let d = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        d - 1
    } else {
        d
    }
}

fn div_ceil(a: i128, b: i128) -> i128 {
    -div_floor(-a, b)
}

fn clamp_i64(v: i128) -> i64 {
    v.clamp(i64::MIN as i128 / 4, i64::MAX as i128 / 4) as i64
}

impl<'a> Problem<'a> {
    fn new(vars: &'a [String]) -> Self {
        Problem { vars, atoms: Vec::new(), nodes: Vec::new() }
    }

    fn index(&self, name: &str) -> usize {
        self.vars.binary_search_by(|v| v.as_str().cmp(name)).expect("variable collected")
    }

    fn terms(&self, e: &crate::formula::LinExpr) -> Vec<(usize, i64)> {
        e.terms().iter().map(|(v, c)| (self.index(v), *c)).collect()
    }

    fn push(&mut self, n: Node) -> usize {
        self.nodes.push(n);
        self.nodes.len() - 1
    }

    fn atom(&mut self, a: Atom) -> usize {
        self.atoms.push(a);
        let id = self.atoms.len() - 1;
        self.push(Node::Atom(id))
    }

    /// `f` must be in negation-normal form.
    fn build(&mut self, f: &Formula) -> usize {
        match f {
            Formula::True => self.push(Node::True),
            Formula::False => self.push(Node::False),
            Formula::Threshold { expr, op, bound } => {
                let t = self.terms(expr);
                let neg: Vec<(usize, i64)> = t.iter().map(|(v, c)| (*v, -c)).collect();
                match op {
                    CmpOp::Le => self.atom(Atom::Le(t, *bound)),
                    CmpOp::Lt => self.atom(Atom::Le(t, bound - 1)),
                    CmpOp::Ge => self.atom(Atom::Le(neg, -bound)),
                    CmpOp::Gt => self.atom(Atom::Le(neg, -bound - 1)),
                    CmpOp::Eq => self.atom(Atom::Eq(t, *bound)),
                }
            }
            Formula::Remainder { expr, modulus, residue } => {
                // Coefficients only matter modulo m; symmetric representatives
                // drop multiples of m that would otherwise leave unbounded directions.
                let m = *modulus;
                let t = self
                    .terms(expr)
                    .into_iter()
                    .map(|(v, c)| {
                        let r = c.rem_euclid(m);
                        (v, if 2 * r > m { r - m } else { r })
                    })
                    .filter(|(_, c)| *c != 0)
                    .collect();
                self.atom(Atom::Mod(t, m, *residue))
            }
            Formula::And(fs) => {
                let ch = fs.iter().map(|g| self.build(g)).collect();
                self.push(Node::And(ch))
            }
            Formula::Or(fs) => {
                let ch = fs.iter().map(|g| self.build(g)).collect();
                self.push(Node::Or(ch))
            }
            Formula::Not(_) | Formula::Implies(..) => unreachable!("formula not normalized"),
        }
    }

    fn range(&self, terms: &[(usize, i64)], st: &State) -> (Option<i128>, Option<i128>) {
        let mut lo = Some(0i128);
        let mut hi = Some(0i128);
        for (v, c) in terms {
            let c = *c as i128;
            let (l, h) = (st.lo[*v].map(|x| x as i128), st.hi[*v].map(|x| x as i128));
            let (tl, th) =
                if c > 0 { (l.map(|x| x * c), h.map(|x| x * c)) } else { (h.map(|x| x * c), l.map(|x| x * c)) };
            lo = lo.zip(tl).map(|(a, b)| a + b);
            hi = hi.zip(th).map(|(a, b)| a + b);
        }
        (lo, hi)
    }

    fn atom_truth(&self, a: &Atom, st: &State) -> Truth {
        match a {
            Atom::Le(t, c) => {
                let (lo, hi) = self.range(t, st);
                let c = *c as i128;
                if hi.is_some_and(|h| h <= c) {
                    Truth::True
                } else if lo.is_some_and(|l| l > c) {
                    Truth::False
                } else {
                    Truth::Unknown
                }
            }
            Atom::Eq(t, c) => {
                let (lo, hi) = self.range(t, st);
                let c = *c as i128;
                if lo == Some(c) && hi == Some(c) {
                    Truth::True
                } else if lo.is_some_and(|l| l > c) || hi.is_some_and(|h| h < c) {
                    Truth::False
                } else {
                    Truth::Unknown
                }
            }
            Atom::Mod(t, m, r) => {
                let (lo, hi) = self.range(t, st);
                match (lo, hi) {
                    (Some(l), Some(h)) if l == h => {
                        if l.rem_euclid(*m as i128) == *r as i128 {
                            Truth::True
                        } else {
                            Truth::False
                        }
                    }
                    _ => Truth::Unknown,
                }
            }
        }
    }

    fn truth(&self, n: usize, st: &State) -> Truth {
        match &self.nodes[n] {
            Node::True => Truth::True,
            Node::False => Truth::False,
            Node::Atom(a) => self.atom_truth(&self.atoms[*a], st),
            Node::And(ch) => {
                let mut all = true;
                for c in ch {
                    match self.truth(*c, st) {
                        Truth::False => return Truth::False,
                        Truth::Unknown => all = false,
                        Truth::True => {}
                    }
                }
                if all {
                    Truth::True
                } else {
                    Truth::Unknown
                }
            }
            Node::Or(ch) => {
                let mut none = true;
                for c in ch {
                    match self.truth(*c, st) {
                        Truth::True => return Truth::True,
                        Truth::Unknown => none = false,
                        Truth::False => {}
                    }
                }
                if none {
                    Truth::False
                } else {
                    Truth::Unknown
                }
            }
        }
    }

    /// Tightens bounds from asserted atoms. Returns false on conflict.
    fn propagate_bounds(&self, st: &mut State) -> bool {
        for _round in 0..16 {
            let mut changed = false;
            for &aid in &st.asserted {
                let (terms, c, is_eq) = match &self.atoms[aid] {
                    Atom::Le(t, c) => (t, *c as i128, false),
                    Atom::Eq(t, c) => (t, *c as i128, true),
                    Atom::Mod(..) => continue,
                };
                for (k, ak) in terms {
                    let ak = *ak as i128;
                    let rest: Vec<(usize, i64)> = terms.iter().filter(|(v, _)| v != k).cloned().collect();
                    let (rlo, rhi) = self.range(&rest, st);
                    // a_k x_k ≤ c - rlo
                    if let Some(rlo) = rlo {
                        let r = c - rlo;
                        if ak > 0 {
                            let ub = clamp_i64(div_floor(r, ak));
                            if st.hi[*k].is_none_or(|h| ub < h) {
                                st.hi[*k] = Some(ub);
                                changed = true;
                            }
                        } else {
                            let lb = clamp_i64(div_ceil(r, ak));
                            if st.lo[*k].is_none_or(|l| lb > l) {
                                st.lo[*k] = Some(lb);
                                changed = true;
                            }
                        }
                    }
                    // a_k x_k ≥ c - rhi (equalities only)
                    if is_eq {
                        if let Some(rhi) = rhi {
                            let r = c - rhi;
                            if ak > 0 {
                                let lb = clamp_i64(div_ceil(r, ak));
                                if st.lo[*k].is_none_or(|l| lb > l) {
                                    st.lo[*k] = Some(lb);
                                    changed = true;
                                }
                            } else {
                                let ub = clamp_i64(div_floor(r, ak));
                                if st.hi[*k].is_none_or(|h| ub < h) {
                                    st.hi[*k] = Some(ub);
                                    changed = true;
                                }
                            }
                        }
                    }
                    if let (Some(l), Some(h)) = (st.lo[*k], st.hi[*k]) {
                        if l > h {
                            return false;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        true
    }

    /// Unit propagation over pending nodes. Returns false on conflict.
    fn simplify(&self, st: &mut State) -> bool {
        loop {
            if !self.propagate_bounds(st) {
                return false;
            }
            let mut progress = false;
            let mut next: Vec<usize> = Vec::with_capacity(st.pending.len());
            let pending = std::mem::take(&mut st.pending);
            let mut queue: Vec<usize> = pending;
            while let Some(n) = queue.pop() {
                match &self.nodes[n] {
                    Node::True => {}
                    Node::False => return false,
                    Node::Atom(a) => match self.atom_truth(&self.atoms[*a], st) {
                        Truth::True => {}
                        Truth::False => return false,
                        Truth::Unknown => {
                            st.asserted.push(*a);
                            progress = true;
                        }
                    },
                    Node::And(ch) => queue.extend(ch.iter().copied()),
                    Node::Or(ch) => {
                        let mut open = Vec::new();
                        let mut sat = false;
                        for c in ch {
                            match self.truth(*c, st) {
                                Truth::True => {
                                    sat = true;
                                    break;
                                }
                                Truth::Unknown => open.push(*c),
                                Truth::False => {}
                            }
                        }
                        if sat {
                            continue;
                        }
                        match open.len() {
                            0 => return false,
                            1 => {
                                queue.push(open[0]);
                                progress = true;
                            }
                            _ => next.push(n),
                        }
                    }
                }
            }
            st.pending = next;
            if !progress {
                return true;
            }
        }
    }

    fn linear_rows(&self, st: &State) -> (Vec<Vec<i128>>, Vec<(Option<i128>, Option<i128>)>) {
        let n = self.vars.len();
        let mut rows = Vec::new();
        let mut bnds = Vec::new();
        for &aid in &st.asserted {
            let (t, c, eq) = match &self.atoms[aid] {
                Atom::Le(t, c) => (t, *c as i128, false),
                Atom::Eq(t, c) => (t, *c as i128, true),
                Atom::Mod(..) => continue,
            };
            if t.len() <= 1 {
                continue; // already reflected in the variable bounds
            }
            let mut row = vec![0i128; n];
            for (v, k) in t {
                row[*v] += *k as i128;
            }
            rows.push(row);
            bnds.push((if eq { Some(c) } else { None }, Some(c)));
        }
        (rows, bnds)
    }

    /// Rational relaxation of the asserted atoms under the current bounds.
    fn relaxation_feasible(&self, st: &State, budget: &mut Budget) -> bool {
        let (rows, bnds) = self.linear_rows(st);
        if rows.is_empty() {
            return true;
        }
        let n = self.vars.len();
        let mut s = Simplex::new(n, &rows);
        for v in 0..n {
            if let Some(l) = st.lo[v] {
                if !s.set_lower(v, q(l as i128)) {
                    return false;
                }
            }
            if let Some(h) = st.hi[v] {
                if !s.set_upper(v, q(h as i128)) {
                    return false;
                }
            }
        }
        for (i, (l, h)) in bnds.iter().enumerate() {
            let sl = s.slack(i);
            if let Some(l) = l {
                if !s.set_lower(sl, q(*l)) {
                    return false;
                }
            }
            if let Some(h) = h {
                if !s.set_upper(sl, q(*h)) {
                    return false;
                }
            }
        }
        s.check(&mut budget.pivots)
    }

    fn search(&self, mut st: State, budget: &mut Budget) -> std::result::Result<Option<Vec<i64>>, Exhausted> {
        budget.tick()?;
        if !self.simplify(&mut st) {
            return Ok(None);
        }
        if st.asserted.len() > st.lp_checked {
            if !self.relaxation_feasible(&st, budget) {
                return Ok(None);
            }
            st.lp_checked = st.asserted.len();
        }
        if st.pending.is_empty() {
            let cons: Vec<Constraint> = st
                .asserted
                .iter()
                .map(|&a| match &self.atoms[a] {
                    Atom::Le(t, c) => Constraint::Le(t.clone(), *c),
                    Atom::Eq(t, c) => Constraint::Eq(t.clone(), *c),
                    Atom::Mod(t, m, r) => Constraint::Mod(t.clone(), *m, *r),
                })
                .collect();
            return lia::solve_int(self.vars.len(), &cons, &st.lo, &st.hi, budget);
        }
        // Branch on the pending disjunction with the fewest open children.
        let (pos, open) = st
            .pending
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let open: Vec<usize> = match &self.nodes[n] {
                    Node::Or(ch) => ch.iter().copied().filter(|c| self.truth(*c, &st) != Truth::False).collect(),
                    _ => unreachable!("only disjunctions stay pending"),
                };
                (i, open)
            })
            .min_by_key(|(_, o)| o.len())
            .expect("pending nonempty");
        let mut exhausted = false;
        for child in open {
            let mut next = st.clone();
            next.pending.swap_remove(pos);
            next.pending.push(child);
            match self.search(next, budget) {
                Ok(Some(p)) => return Ok(Some(p)),
                Ok(None) => {}
                Err(Exhausted) => {
                    exhausted = true;
                    break;
                }
            }
        }
        if exhausted {
            Err(Exhausted)
        } else {
            Ok(None)
        }
    }
}
