//! Proof obligations of a stage graph as satisfiability queries.

use std::collections::BTreeSet;

use presburger::{CmpOp, Formula, LinExpr, SolveResult, Solver};
use rayon::prelude::*;
use serde_json::{json, Value};

use super::formulas::{initial_side, nonempty, primed, shift_map, step_formula, total, wrong_output};
use super::{config_from_witness, Ranking, Stage, StageGraph, StageGraphError};
use crate::model::{Configuration, Protocol};

type Result<T> = std::result::Result<T, StageGraphError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckOptions {
    /// Largest `B` tried when a ranking omits it.
    pub max_bound: u32,
    /// Cap on `|T|^B`.
    pub max_sequences: u64,
    pub minimize: bool,
    /// Per-query solver node budget; `None` uses the global default.
    pub solver_budget: Option<u64>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { max_bound: 3, max_sequences: 20_000, minimize: true, solver_budget: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Holds,
    /// One configuration, or a pair `(C, C')` for inductivity failures.
    Counterexample(Vec<Configuration>),
}

impl Outcome {
    pub fn holds(&self) -> bool {
        matches!(self, Outcome::Holds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ObligationKind {
    InitialContainment,
    Inductive,
    RankingWellFormed,
    WeakDecrease,
    BottomConsensus,
}

impl ObligationKind {
    pub fn name(self) -> &'static str {
        match self {
            ObligationKind::InitialContainment => "initial-containment",
            ObligationKind::Inductive => "inductive",
            ObligationKind::RankingWellFormed => "ranking-well-formed",
            ObligationKind::WeakDecrease => "weak-decrease",
            ObligationKind::BottomConsensus => "bottom-consensus",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Obligation {
    pub id: String,
    pub kind: ObligationKind,
    pub stages: Vec<String>,
    pub pass: bool,
    pub counterexample: Vec<Configuration>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckReport {
    pub pass: bool,
    pub obligations: Vec<Obligation>,
}

impl CheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &Obligation> {
        self.obligations.iter().filter(|o| !o.pass)
    }

    pub fn to_json(&self, p: &Protocol) -> Value {
        let obligations: Vec<Value> = self
            .obligations
            .iter()
            .map(|o| {
                json!({
                    "id": o.id,
                    "kind": o.kind.name(),
                    "stages": o.stages,
                    "pass": o.pass,
                    "counterexample": o.counterexample.iter().map(|c| p.config_map(c)).collect::<Vec<_>>(),
                    "detail": o.detail,
                })
            })
            .collect();
        json!({ "pass": self.pass, "obligations": obligations })
    }
}

fn sat(f: &Formula, opts: &CheckOptions) -> Result<Option<presburger::Assignment>> {
    let solver = opts.solver_budget.map(Solver::new).unwrap_or_default();
    Ok(match solver.solve(f, &BTreeSet::new())? {
        SolveResult::Sat(w) => Some(w),
        SolveResult::Unsat => None,
    })
}

/// Solves `query`; on success shrinks the witness by bounding `|C|` from above.
fn refute(p: &Protocol, query: &Formula, opts: &CheckOptions, pair: bool) -> Result<Outcome> {
    let Some(mut w) = sat(query, opts)? else { return Ok(Outcome::Holds) };
    let configs = |w: &presburger::Assignment| {
        let mut out = vec![config_from_witness(p, w, &|q| q.to_string())];
        if pair {
            out.push(config_from_witness(p, w, &primed));
        }
        out
    };
    if opts.minimize {
        let mut size = configs(&w)[0].size();
        for _ in 0..64 {
            if size <= 1 {
                break;
            }
            let bounded = Formula::and([
                query.clone(),
                Formula::cmp(total(p.states()), CmpOp::Le, LinExpr::constant(size as i64 - 1)),
            ]);
            match sat(&bounded, opts) {
                Ok(Some(v)) => {
                    size = configs(&v)[0].size();
                    w = v;
                }
                Ok(None) | Err(StageGraphError::Solver(presburger::Error::BudgetExhausted(_))) => break,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(Outcome::Counterexample(configs(&w)))
}

fn negate(f: &Formula) -> Formula {
    Formula::not(f.clone()).normalize()
}

fn primed_formula(f: &Formula, states: &[String]) -> Formula {
    let names: BTreeSet<&str> = states.iter().map(String::as_str).collect();
    f.rename(&|v: &str| if names.contains(v) { primed(v) } else { v.to_string() })
}

/// `S(C) ∧ step(C, C') ∧ ¬S(C')` unsatisfiable. For a flow-rooted stage the
/// state-equation part is closed by construction, so only the refinement and
/// the root's dead region are re-checked on `C'`.
pub fn check_inductive(p: &Protocol, s: &Stage) -> Result<Outcome> {
    check_inductive_with(p, s, &CheckOptions::default())
}

fn check_inductive_with(p: &Protocol, s: &Stage, opts: &CheckOptions) -> Result<Outcome> {
    match inductive_query(p, s) {
        None => Ok(Outcome::Holds),
        Some(q) => refute(p, &q, opts, true),
    }
}

fn inductive_query(p: &Protocol, s: &Stage) -> Option<Formula> {
    let mut closed = s.constraint.clone();
    if let Some(root) = &s.flow_root {
        closed = Formula::and([root.dead_region(p), closed]);
    }
    if closed == Formula::True {
        return None;
    }
    Some(Formula::and([s.denotation(p), step_formula(p), negate(&primed_formula(&closed, p.states()))]))
}

/// Sequences of effective transitions, as per-state lower bounds for
/// enabledness and total effect.
#[derive(Clone)]
struct Seq {
    need: Vec<i64>,
    delta: Vec<i64>,
}

impl Seq {
    fn empty(n: usize) -> Self {
        Seq { need: vec![0; n], delta: vec![0; n] }
    }

    fn extend(&self, pre: &[u64], d: &[i64]) -> Seq {
        let mut need = self.need.clone();
        let mut delta = self.delta.clone();
        for q in 0..need.len() {
            need[q] = need[q].max(pre[q] as i64 - delta[q]);
            delta[q] += d[q];
        }
        Seq { need, delta }
    }

    fn not_enabled(&self, states: &[String]) -> Formula {
        Formula::or(
            self.need
                .iter()
                .enumerate()
                .filter(|(_, &k)| k > 0)
                .map(|(q, &k)| Formula::var_cmp(&states[q], CmpOp::Le, k - 1)),
        )
    }
}

fn effect_of(expr: &LinExpr, states: &[String], delta: &[i64]) -> i64 {
    states.iter().zip(delta).map(|(q, d)| expr.coeff(q) * d).sum()
}

/// Weak-decrease clause set for one bound `B`.
fn decrease_clauses(p: &Protocol, rank: &Ranking, bound: u32) -> Formula {
    let states = p.states();
    let ts: Vec<(Vec<u64>, Vec<i64>)> =
        p.effective_transitions().into_iter().map(|t| (p.pre_vector(t), p.delta(t))).collect();
    let n = p.num_states();

    if let Some(f) = rank.as_linear() {
        let mut clauses = Vec::new();
        let mut frontier = vec![Seq::empty(n)];
        for _ in 0..bound {
            let mut next = Vec::new();
            for s in &frontier {
                for (pre, d) in &ts {
                    let s2 = s.extend(pre, d);
                    if effect_of(f, states, &s2.delta) < 0 {
                        clauses.push(s2.not_enabled(states));
                    } else {
                        next.push(s2);
                    }
                }
            }
            frontier = next;
        }
        return Formula::and(clauses);
    }

    let mut seqs = Vec::new();
    let mut frontier = vec![Seq::empty(n)];
    for _ in 0..bound {
        let mut next = Vec::new();
        for s in &frontier {
            for (pre, d) in &ts {
                next.push(s.extend(pre, d));
            }
        }
        seqs.extend(next.iter().cloned());
        frontier = next;
    }
    let cases = rank.pieces.iter().map(|(gi, fi)| {
        let per_seq = seqs.iter().map(|s| {
            let map = shift_map(p, &s.delta);
            let no_decrease = Formula::and(rank.pieces.iter().map(|(gj, fj)| {
                Formula::or([negate(&gj.substitute(&map)), Formula::ge(fj.substitute(&map), fi.clone())])
            }));
            Formula::or([s.not_enabled(states), no_decrease])
        });
        Formula::and(std::iter::once(gi.normalize()).chain(per_seq))
    });
    Formula::or(cases)
}

fn sequence_count(p: &Protocol, bound: u32) -> Option<u64> {
    (p.effective_transitions().len() as u64).checked_pow(bound)
}

/// Bounded weak decrease: no `C` in `parent` outside all `children` such that
/// every enabled sequence of at most `B` transitions keeps the ranking from
/// decreasing. Returns the outcome at the bound used.
pub fn check_node(p: &Protocol, parent: &Stage, children: &[&Stage], opts: &CheckOptions) -> Result<(Outcome, u32)> {
    let rank = parent
        .rank
        .as_ref()
        .ok_or_else(|| StageGraphError::Malformed(format!("stage '{}' has no ranking function", parent.id)))?;
    let bounds: Vec<u32> = match rank.bound {
        Some(b) => vec![b],
        None => (1..=opts.max_bound.max(1)).collect(),
    };
    let t = p.effective_transitions().len();
    let query = |b: u32| node_query(p, parent, rank, children, b);
    let mut last = None;
    for (i, &b) in bounds.iter().enumerate() {
        let fits = sequence_count(p, b).is_some_and(|c| c <= opts.max_sequences);
        if !fits {
            if i == 0 {
                return Err(StageGraphError::BoundTooLarge { bound: b, transitions: t });
            }
            break;
        }
        let out = refute(p, &query(b), &CheckOptions { minimize: false, ..*opts }, false)?;
        if out.holds() {
            return Ok((out, b));
        }
        last = Some(b);
    }
    let b = last.expect("at least one bound is tried");
    Ok((refute(p, &query(b), opts, false)?, b))
}

fn node_query(p: &Protocol, parent: &Stage, rank: &Ranking, children: &[&Stage], b: u32) -> Formula {
    let mut parts = vec![parent.denotation(p), nonempty(p)];
    parts.extend(children.iter().map(|c| negate(&c.constraint)));
    parts.push(decrease_clauses(p, rank, b));
    Formula::and(parts)
}

/// Queries whose satisfiability refutes a well-formed ranking, with a label.
fn ranking_queries(p: &Protocol, s: &Stage, rank: &Ranking) -> Vec<(String, Formula)> {
    let den = s.denotation(p);
    let mut out = Vec::new();
    for (k, (g, e)) in rank.pieces.iter().enumerate() {
        let q = Formula::and([den.clone(), g.normalize(), Formula::cmp(e.clone(), CmpOp::Le, LinExpr::constant(-1))]);
        out.push((format!("piece {k} is negative"), q));
    }
    if rank.as_linear().is_none() {
        let q = Formula::and(std::iter::once(den.clone()).chain(rank.pieces.iter().map(|(g, _)| negate(g))));
        out.push(("guards are not exhaustive".into(), q));
        for i in 0..rank.pieces.len() {
            for j in i + 1..rank.pieces.len() {
                let q = Formula::and([den.clone(), rank.pieces[i].0.normalize(), rank.pieces[j].0.normalize()]);
                out.push((format!("guards {i} and {j} overlap"), q));
            }
        }
    }
    out
}

/// Nonnegativity, exhaustiveness and disjointness of the ranking pieces on the stage.
fn check_ranking(p: &Protocol, s: &Stage, rank: &Ranking, opts: &CheckOptions) -> Result<(Outcome, String)> {
    for (label, q) in ranking_queries(p, s, rank) {
        let out = refute(p, &q, opts, false)?;
        if !out.holds() {
            return Ok((out, label));
        }
    }
    Ok((Outcome::Holds, String::new()))
}

/// Every initial configuration with `φ`-value `b` lies in the initial stage.
fn check_initial(p: &Protocol, g: &StageGraph, phi: &Formula, opts: &CheckOptions) -> Result<Outcome> {
    refute(p, &initial_query(p, g, phi), opts, false)
}

fn initial_query(p: &Protocol, g: &StageGraph, phi: &Formula) -> Formula {
    let s = g.stage(&g.initial).expect("validated");
    let side = initial_side(p, phi, g.target);
    let goal = match &s.flow_root {
        None => s.constraint.clone(),
        Some(root) if root.origin == side => Formula::and([root.dead_region(p), s.constraint.clone()]),
        Some(root) => Formula::and([root.origin.clone(), root.dead_region(p), s.constraint.clone()]),
    };
    Formula::and([side, negate(&goal)])
}

fn bottom_query(p: &Protocol, g: &StageGraph, s: &Stage) -> Formula {
    Formula::and([s.denotation(p), wrong_output(p, g.target)])
}

fn validate_inputs(p: &Protocol, g: &StageGraph, phi: &Formula) -> Result<()> {
    g.validate(p)?;
    let inputs: BTreeSet<&str> = p.input_vars().iter().map(String::as_str).collect();
    if let Some(v) = phi.free_vars().into_iter().find(|v| !inputs.contains(v.as_str())) {
        return Err(StageGraphError::Malformed(format!("predicate uses '{v}', which is not an input variable")));
    }
    Ok(())
}

/// Every obligation of `g` as a formula that is unsatisfiable exactly when
/// the obligation holds, labelled by obligation id. Weak decrease uses the
/// stage's explicit bound, or 1.
pub fn obligation_queries(p: &Protocol, g: &StageGraph, phi: &Formula) -> Result<Vec<(String, Formula)>> {
    validate_inputs(p, g, phi)?;
    let mut out = vec![(format!("0-initial:{}", g.initial), initial_query(p, g, phi))];
    for s in &g.stages {
        if let Some(q) = inductive_query(p, s) {
            out.push((format!("1-inductive:{}", s.id), q));
        }
        match &s.rank {
            Some(r) => {
                for (k, (_, q)) in ranking_queries(p, s, r).into_iter().enumerate() {
                    out.push((format!("2-ranking:{}:{k}", s.id), q));
                }
                let b = r.bound.unwrap_or(1);
                if !sequence_count(p, b).is_some_and(|c| c <= CheckOptions::default().max_sequences) {
                    return Err(StageGraphError::BoundTooLarge {
                        bound: b,
                        transitions: p.effective_transitions().len(),
                    });
                }
                let children = g.children(&s.id);
                out.push((format!("3-decrease:{}", s.id), node_query(p, s, r, &children, b)));
            }
            None => out.push((format!("4-bottom:{}", s.id), bottom_query(p, g, s))),
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

enum Task<'a> {
    Initial,
    Inductive(&'a Stage),
    Ranking(&'a Stage, &'a Ranking),
    Node(&'a Stage),
    Bottom(&'a Stage),
}

/// Checks all obligations of `g` against the `g.target` side of `φ`.
pub fn check_stage_graph(p: &Protocol, g: &StageGraph, phi: &Formula, opts: &CheckOptions) -> Result<CheckReport> {
    validate_inputs(p, g, phi)?;
    let mut tasks = vec![Task::Initial];
    for s in &g.stages {
        tasks.push(Task::Inductive(s));
        match &s.rank {
            Some(r) => {
                tasks.push(Task::Ranking(s, r));
                tasks.push(Task::Node(s));
            }
            None => tasks.push(Task::Bottom(s)),
        }
    }
    let results: Vec<Result<Obligation>> = tasks
        .par_iter()
        .map(|task| {
            let ob = |id: String, kind, stages: Vec<String>, out: Outcome, detail: String| {
                let (pass, counterexample) = match out {
                    Outcome::Holds => (true, Vec::new()),
                    Outcome::Counterexample(c) => (false, c),
                };
                Obligation { id, kind, stages, pass, counterexample, detail }
            };
            Ok(match task {
                Task::Initial => ob(
                    format!("0-initial:{}", g.initial),
                    ObligationKind::InitialContainment,
                    vec![g.initial.clone()],
                    check_initial(p, g, phi, opts)?,
                    String::new(),
                ),
                Task::Inductive(s) => ob(
                    format!("1-inductive:{}", s.id),
                    ObligationKind::Inductive,
                    vec![s.id.clone()],
                    check_inductive_with(p, s, opts)?,
                    String::new(),
                ),
                Task::Ranking(s, r) => {
                    let (out, detail) = check_ranking(p, s, r, opts)?;
                    ob(
                        format!("2-ranking:{}", s.id),
                        ObligationKind::RankingWellFormed,
                        vec![s.id.clone()],
                        out,
                        detail,
                    )
                }
                Task::Node(s) => {
                    let children = g.children(&s.id);
                    let (out, b) = check_node(p, s, &children, opts)?;
                    let mut stages = vec![s.id.clone()];
                    stages.extend(children.iter().map(|c| c.id.clone()));
                    ob(format!("3-decrease:{}", s.id), ObligationKind::WeakDecrease, stages, out, format!("B = {b}"))
                }
                Task::Bottom(s) => {
                    let q = bottom_query(p, g, s);
                    ob(
                        format!("4-bottom:{}", s.id),
                        ObligationKind::BottomConsensus,
                        vec![s.id.clone()],
                        refute(p, &q, opts, false)?,
                        format!("consensus {}", g.target),
                    )
                }
            })
        })
        .collect();
    let mut obligations = results.into_iter().collect::<Result<Vec<_>>>()?;
    obligations.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(CheckReport { pass: obligations.iter().all(|o| o.pass), obligations })
}
