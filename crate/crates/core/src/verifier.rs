//! Automatic stage-graph synthesis.
//!
//! Every synthesized stage shares one flow root per side (the state-equation
//! overapproximation of the initial configurations) and differs only by a
//! quantifier-free refinement, so negated stages never contain existentials.
//! A run that reports success has passed [`check_stage_graph`] on both graphs.

use std::collections::{BTreeSet, VecDeque};

use presburger::{default_budget, Assignment, CmpOp, Formula, LinExpr, SolveResult, Solver};
use thiserror::Error;

use crate::model::Protocol;
use crate::stagegraph::formulas::{
    disabled_formula, enabled_formula, initial_side, is_siphon, is_trap, origin_var, primed, step_formula, wrong_output,
};
use crate::stagegraph::{
    check_node, check_stage_graph, CheckOptions, CheckReport, FlowRoot, Ranking, Stage, StageGraph, StageGraphError,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("solver: {0}")]
    Solver(#[from] presburger::Error),

    #[error(transparent)]
    StageGraph(#[from] StageGraphError),
}

type Result<T> = std::result::Result<T, VerifyError>;

/// A flow root plus a quantifier-free refinement and the transitions known
/// dead on the stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowStage {
    pub root: FlowRoot,
    pub refinement: Formula,
    pub dead: BTreeSet<usize>,
}

impl FlowStage {
    pub fn membership(&self, p: &Protocol) -> Formula {
        Formula::and([self.root.membership(p), self.refinement.normalize()])
    }

    pub fn to_stage(&self, id: &str, rank: Option<Ranking>) -> Stage {
        Stage { id: id.to_string(), constraint: self.refinement.clone(), rank, flow_root: Some(self.root.clone()) }
    }

    fn refined(&self, extra: Formula) -> FlowStage {
        FlowStage {
            root: self.root.clone(),
            refinement: Formula::and([self.refinement.clone(), extra]),
            dead: self.dead.clone(),
        }
    }
}

/// Eventually-dead transitions `u` with ranking `g`.
///
/// With `universal`, `g` never increases on a step inside the stage and
/// strictly decreases on every step by a transition of `u`, so `g` bounds the
/// number of `u`-firings. Otherwise `g` is only weakly decreasing with bound
/// `bound` towards the region where `u` is dead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeadCertificate {
    pub u: BTreeSet<usize>,
    pub g: LinExpr,
    pub bound: u32,
    pub universal: bool,
}

fn sat(f: &Formula) -> Result<Option<Assignment>> {
    Ok(match Solver::default().solve(f, &BTreeSet::new())? {
        SolveResult::Sat(w) => Some(w),
        SolveResult::Unsat => None,
    })
}

/// Node budget for individual synthesis queries. Exhaustion is read as
/// "unknown" and resolved conservatively at each call site.
const QUERY_BUDGET: u64 = 20_000;

enum Answer {
    Sat(Assignment),
    Unsat,
    Unknown,
}

fn probe(f: &Formula) -> Result<Answer> {
    match Solver::new(QUERY_BUDGET.min(default_budget())).solve(f, &BTreeSet::new()) {
        Ok(SolveResult::Sat(w)) => Ok(Answer::Sat(w)),
        Ok(SolveResult::Unsat) => Ok(Answer::Unsat),
        Err(presburger::Error::BudgetExhausted(_)) => Ok(Answer::Unknown),
        Err(e) => Err(e.into()),
    }
}

fn unsat(f: &Formula) -> Result<bool> {
    Ok(matches!(probe(f)?, Answer::Unsat))
}

fn negate(f: &Formula) -> Formula {
    Formula::not(f.clone()).normalize()
}

fn primed_formula(p: &Protocol, f: &Formula) -> Formula {
    let states: BTreeSet<&str> = p.states().iter().map(String::as_str).collect();
    f.rename(&|v: &str| if states.contains(v) { primed(v) } else { v.to_string() })
}

fn value(w: &Assignment, name: &str) -> i64 {
    w.get(name).copied().unwrap_or(0)
}

/// Largest trap inside `set`.
fn max_trap(p: &Protocol, mut set: BTreeSet<usize>) -> BTreeSet<usize> {
    loop {
        let bad = p.transitions().iter().find_map(|tr| {
            let produces = set.contains(&tr.post.0) || set.contains(&tr.post.1);
            if produces {
                return None;
            }
            [tr.pre.0, tr.pre.1].into_iter().find(|q| set.contains(q))
        });
        match bad {
            Some(q) => {
                set.remove(&q);
            }
            None => return set,
        }
    }
}

/// Largest siphon inside `set`.
fn max_siphon(p: &Protocol, mut set: BTreeSet<usize>) -> BTreeSet<usize> {
    loop {
        let bad = p.transitions().iter().find_map(|tr| {
            let consumes = set.contains(&tr.pre.0) || set.contains(&tr.pre.1);
            if consumes {
                return None;
            }
            [tr.post.0, tr.post.1].into_iter().find(|q| set.contains(q))
        });
        match bad {
            Some(q) => {
                set.remove(&q);
            }
            None => return set,
        }
    }
}

/// Closure of `{q}` to a trap (adding both outputs of violating transitions)
/// or a siphon (adding both inputs of violating transitions).
fn closure(p: &Protocol, q: usize, trap: bool) -> BTreeSet<usize> {
    let mut set: BTreeSet<usize> = [q].into();
    loop {
        let violating = p.transitions().iter().find(|tr| {
            let pre = set.contains(&tr.pre.0) || set.contains(&tr.pre.1);
            let post = set.contains(&tr.post.0) || set.contains(&tr.post.1);
            if trap {
                pre && !post
            } else {
                post && !pre
            }
        });
        match violating {
            Some(tr) if trap => set.extend([tr.post.0, tr.post.1]),
            Some(tr) => set.extend([tr.pre.0, tr.pre.1]),
            None => return set,
        }
    }
}

/// State-equation overapproximation of the configurations reachable from
/// `origin`. With `strengthen`, the trap and siphon closures of every single
/// state are added.
pub fn preach(p: &Protocol, origin: &Formula, strengthen: bool) -> FlowStage {
    let mut root = FlowRoot::new(origin.clone());
    if strengthen {
        for q in 0..p.num_states() {
            let t = closure(p, q, true);
            if is_trap(p, &t) && !root.traps.contains(&t) {
                root.traps.push(t);
            }
            let s = closure(p, q, false);
            if is_siphon(p, &s) && !root.siphons.contains(&s) {
                root.siphons.push(s);
            }
        }
    }
    FlowStage { root, refinement: Formula::True, dead: BTreeSet::new() }
}

/// Adds a trap or siphon excluding the witness `(origin, C)` if one exists.
fn refine_root(p: &Protocol, root: &mut FlowRoot, w: &Assignment) -> bool {
    let states = p.states();
    let c = |q: usize| value(w, &states[q]);
    let o = |q: usize| value(w, &origin_var(&states[q]));
    let unmarked_now: BTreeSet<usize> = (0..p.num_states()).filter(|&q| c(q) == 0).collect();
    let trap = max_trap(p, unmarked_now);
    if !trap.is_empty() && trap.iter().map(|&q| o(q)).sum::<i64>() >= 1 && !root.traps.contains(&trap) {
        root.traps.push(trap);
        return true;
    }
    let unmarked_before: BTreeSet<usize> = (0..p.num_states()).filter(|&q| o(q) == 0).collect();
    let siphon = max_siphon(p, unmarked_before);
    if !siphon.is_empty() && siphon.iter().map(|&q| c(q)).sum::<i64>() >= 1 && !root.siphons.contains(&siphon) {
        root.siphons.push(siphon);
        return true;
    }
    false
}

/// Solves `membership(root) ∧ extra`, strengthening the root with traps and
/// siphons while the witness is spurious for them.
fn sat_refining(p: &Protocol, root: &mut FlowRoot, refinement: &Formula, extra: &Formula) -> Result<Answer> {
    loop {
        let q = Formula::and([root.membership(p), refinement.normalize(), extra.clone()]);
        match probe(&q)? {
            Answer::Sat(w) if refine_root(p, root, &w) => {}
            other => return Ok(other),
        }
    }
}

/// Largest set of transitions that never fire from `root.origin`, witnessed
/// by the region where they are all disabled being initial and closed.
fn initially_dead(p: &Protocol, root: &FlowRoot) -> Result<BTreeSet<usize>> {
    let states = p.states();
    let mut dead: BTreeSet<usize> = p.effective_transitions().into_iter().collect();
    let enabled_at = |w: &Assignment, rename: &dyn Fn(&str) -> String, t: usize| {
        p.pre_vector(t).iter().enumerate().all(|(q, &k)| value(w, &rename(&states[q])) >= k as i64)
    };
    while !dead.is_empty() {
        let trial = FlowRoot { dead: dead.clone(), ..root.clone() };
        let region = trial.dead_region(p);
        match probe(&Formula::and([root.origin.normalize(), negate(&region)]))? {
            Answer::Sat(w) => {
                dead.retain(|&t| !enabled_at(&w, &|q| q.to_string(), t));
                continue;
            }
            Answer::Unknown => return Ok(BTreeSet::new()),
            Answer::Unsat => {}
        }
        let step = Formula::and([trial.membership(p), step_formula(p), negate(&primed_formula(p, &region))]);
        match probe(&step)? {
            Answer::Sat(w) => dead.retain(|&t| !enabled_at(&w, &primed, t)),
            Answer::Unsat => break,
            Answer::Unknown => return Ok(BTreeSet::new()),
        }
    }
    Ok(dead)
}

/// Effective transitions not known dead and enabled somewhere in `s`.
pub fn alive_transitions(p: &Protocol, s: &FlowStage) -> Result<Vec<usize>> {
    let m = s.membership(p);
    let mut out = Vec::new();
    for t in p.effective_transitions() {
        if !s.dead.contains(&t) && !unsat(&Formula::and([m.clone(), enabled_formula(p, t)]))? {
            out.push(t);
        }
    }
    Ok(out)
}

fn never_enabled(p: &Protocol, s: &FlowStage) -> Result<BTreeSet<usize>> {
    let alive: BTreeSet<usize> = alive_transitions(p, s)?.into_iter().collect();
    Ok(p.effective_transitions().into_iter().filter(|t| !alive.contains(t)).collect())
}

fn g_var(q: usize) -> String {
    format!("_g{q}")
}

/// Nonnegative integer `g` with `g·Δt ≤ 0` on `alive` and `g·Δt ≤ -1` on `strict`.
fn universal_query(p: &Protocol, alive: &[usize], strict: &BTreeSet<usize>) -> Formula {
    Formula::and(alive.iter().map(|&t| {
        let d = p.delta(t);
        let e = LinExpr::from_terms((0..p.num_states()).filter(|&q| d[q] != 0).map(|q| (g_var(q), d[q])), 0);
        let bound = if strict.contains(&t) { -1 } else { 0 };
        Formula::cmp(e, CmpOp::Le, LinExpr::constant(bound))
    }))
}

/// Maximal `U` with a universal linear certificate. Feasible strict sets are
/// closed under union (sum the certificates), so `U` is the set of
/// individually feasible transitions.
fn universal_certificate(p: &Protocol, alive: &[usize]) -> Result<Option<(BTreeSet<usize>, LinExpr)>> {
    let mut u = BTreeSet::new();
    for &t in alive {
        if sat(&universal_query(p, alive, &[t].into()))?.is_some() {
            u.insert(t);
        }
    }
    if u.is_empty() {
        return Ok(None);
    }
    let base = universal_query(p, alive, &u);
    let total = LinExpr::from_terms((0..p.num_states()).map(|q| (g_var(q), 1)), 0);
    let mut w = sat(&base)?.expect("union of feasible certificates is feasible");
    for _ in 0..32 {
        let size: i64 = (0..p.num_states()).map(|q| value(&w, &g_var(q))).sum();
        let tighter = Formula::and([base.clone(), Formula::cmp(total.clone(), CmpOp::Le, LinExpr::constant(size - 1))]);
        match sat(&tighter)? {
            Some(v) => w = v,
            None => break,
        }
    }
    let g = LinExpr::from_terms(
        p.states().iter().enumerate().map(|(q, name)| (name.as_str(), value(&w, &g_var(q)))).filter(|(_, c)| *c != 0),
        0,
    );
    Ok(Some((u, g)))
}

/// Drops disjuncts that no configuration of `s` satisfies.
fn simplify_under(p: &Protocol, s: &FlowStage, f: Formula) -> Result<Formula> {
    let m = s.membership(p);
    Ok(match f {
        Formula::Or(parts) => {
            let mut kept = Vec::new();
            for a in parts {
                if !unsat(&Formula::and([m.clone(), a.clone()]))? {
                    kept.push(a);
                }
            }
            Formula::or(kept)
        }
        Formula::And(parts) => {
            let mut out: Vec<Formula> = Vec::new();
            for a in parts {
                let a = simplify_under(p, s, a)?;
                if !out.contains(&a) {
                    out.push(a);
                }
            }
            // Absorption: `a ∧ (a ∨ b)` is `a`.
            let atoms: Vec<Formula> = out.iter().filter(|f| !matches!(f, Formula::Or(_))).cloned().collect();
            out.retain(|f| match f {
                Formula::Or(ds) => !ds.iter().any(|d| atoms.contains(d)),
                _ => true,
            });
            Formula::and(out)
        }
        other => other,
    })
}

fn closed_in(p: &Protocol, s: &FlowStage, r: &Formula) -> Result<bool> {
    let q = Formula::and([s.membership(p), r.normalize(), step_formula(p), negate(&primed_formula(p, r))]);
    unsat(&q)
}

/// A refinement `R` under which every transition of `u` is disabled and that is
/// closed under all steps inside `s`; `False` when no template candidate closes.
///
/// Candidates are tried from weakest to strongest: first `⋀_{t∈U} ¬enabled_t`,
/// then conjunctions picking one emptied input state per transition.
pub fn dead_underapprox(p: &Protocol, s: &FlowStage, u: &BTreeSet<usize>) -> Result<Formula> {
    let mut candidates = vec![Formula::and(u.iter().map(|&t| disabled_formula(p, t)))];
    let choices: Vec<Vec<Formula>> = u
        .iter()
        .map(|&t| match disabled_formula(p, t) {
            Formula::Or(parts) => parts,
            atom => vec![atom],
        })
        .collect();
    if choices.iter().any(|c| c.len() > 1) {
        let mut combos: Vec<Vec<Formula>> = vec![Vec::new()];
        for options in &choices {
            combos = combos
                .into_iter()
                .flat_map(|prefix| {
                    options.iter().map(move |o| {
                        let mut v = prefix.clone();
                        v.push(o.clone());
                        v
                    })
                })
                .take(64)
                .collect();
        }
        candidates.extend(combos.into_iter().map(Formula::and));
    }
    for c in candidates {
        let simplified = simplify_under(p, s, c)?;
        if simplified == Formula::False {
            continue;
        }
        if closed_in(p, s, &simplified)? {
            return Ok(simplified);
        }
    }
    Ok(Formula::False)
}

fn ranked_holds(p: &Protocol, s: &FlowStage, child: &FlowStage, g: &LinExpr) -> Result<Option<u32>> {
    let parent = s.to_stage("parent", Some(Ranking::linear(g.clone(), None)));
    let child = child.to_stage("child", None);
    let opts = CheckOptions {
        minimize: false,
        solver_budget: Some(QUERY_BUDGET.min(default_budget())),
        ..CheckOptions::default()
    };
    match check_node(p, &parent, &[&child], &opts) {
        Ok((out, b)) => Ok(out.holds().then_some(b)),
        Err(StageGraphError::BoundTooLarge { .. }) => Ok(None),
        Err(StageGraphError::Solver(presburger::Error::BudgetExhausted(_))) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Finds eventually-dead transitions of `s` with a ranking certificate.
///
/// First the maximal universal linear certificate; failing that, subsets of
/// the alive transitions (largest first) against small state-count rankings
/// checked for bounded weak decrease towards `dead_underapprox`.
pub fn find_eventually_dead(p: &Protocol, s: &FlowStage) -> Result<Option<DeadCertificate>> {
    let alive = alive_transitions(p, s)?;
    if alive.is_empty() {
        return Ok(None);
    }
    let universal = universal_certificate(p, &alive)?;
    if let Some((u, g)) = &universal {
        let r = dead_underapprox(p, s, u)?;
        if r != Formula::False {
            if let Some(b) = ranked_holds(p, s, &s.refined(r), g)? {
                return Ok(Some(DeadCertificate { u: u.clone(), g: g.clone(), bound: b, universal: true }));
            }
        }
    }

    let subsets: Vec<BTreeSet<usize>> = if alive.len() <= 6 {
        let mut all: Vec<BTreeSet<usize>> = (1u32..1 << alive.len())
            .map(|mask| alive.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &t)| t).collect())
            .collect();
        all.sort_by_key(|set: &BTreeSet<usize>| std::cmp::Reverse(set.len()));
        all
    } else {
        std::iter::once(alive.iter().copied().collect()).chain(alive.iter().map(|&t| [t].into())).collect()
    };
    let n = p.num_states();
    let mut templates: Vec<LinExpr> = Vec::new();
    if let Some((_, g)) = &universal {
        templates.push(g.clone());
    }
    templates.extend((0..n).map(|q| LinExpr::var(&p.states()[q])));
    for a in 0..n {
        for b in a + 1..n {
            templates.push(LinExpr::from_terms([(p.states()[a].as_str(), 1), (p.states()[b].as_str(), 1)], 0));
        }
    }
    let mut budget = 400usize;
    for u in subsets {
        let r = dead_underapprox(p, s, &u)?;
        if r == Formula::False {
            continue;
        }
        let child = s.refined(r);
        for g in &templates {
            if budget == 0 {
                return Ok(None);
            }
            budget -= 1;
            if let Some(b) = ranked_holds(p, s, &child, g)? {
                return Ok(Some(DeadCertificate { u, g: g.clone(), bound: b, universal: false }));
            }
        }
    }
    Ok(None)
}

/// Splits `s` by emptiness of one or two states occurring in inputs of alive
/// transitions. Every child must be nonempty and closed; candidates with a
/// non-closed child are rejected. Returns no children when nothing works.
pub fn split_stage(p: &Protocol, s: &FlowStage) -> Result<Vec<FlowStage>> {
    let alive = alive_transitions(p, s)?;
    let mut candidates: Vec<usize> = Vec::new();
    for &t in &alive {
        let tr = p.transitions()[t];
        for q in [tr.pre.0, tr.pre.1] {
            if !candidates.contains(&q) {
                candidates.push(q);
            }
        }
    }
    let m = s.membership(p);
    let zero = |q: usize| Formula::var_cmp(&p.states()[q], CmpOp::Eq, 0);
    let pos = |q: usize| Formula::var_cmp(&p.states()[q], CmpOp::Ge, 1);
    let try_split = |parts: Vec<Formula>| -> Result<Option<Vec<FlowStage>>> {
        let mut children = Vec::new();
        for r in parts {
            if unsat(&Formula::and([m.clone(), r.clone()]))? || !closed_in(p, s, &r)? {
                return Ok(None);
            }
            let mut child = s.refined(r);
            child.dead.extend(never_enabled(p, &child)?);
            children.push(child);
        }
        Ok(Some(children))
    };
    for &q in &candidates {
        if let Some(c) = try_split(vec![zero(q), pos(q)])? {
            return Ok(c);
        }
    }
    for (i, &a) in candidates.iter().enumerate() {
        for &b in &candidates[i + 1..] {
            let parts = vec![
                Formula::and([zero(a), zero(b)]),
                Formula::and([zero(a), pos(b)]),
                Formula::and([pos(a), zero(b)]),
                Formula::and([pos(a), pos(b)]),
            ];
            if let Some(c) = try_split(parts)? {
                return Ok(c);
            }
        }
    }
    Ok(Vec::new())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthesisOptions {
    /// Maximal number of stages per graph.
    pub node_budget: usize,
    /// Add single-state trap and siphon closures to the flow root up front.
    pub strengthen: bool,
    pub check: CheckOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions { node_budget: 200, strengthen: false, check: CheckOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Failure {
    NodeBudget { side: u8, stages: usize },
    Stuck { side: u8, stage: String },
    Validation { side: u8, report: CheckReport },
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::NodeBudget { side, stages } => {
                write!(f, "side {side}: node budget exhausted after {stages} stages")
            }
            Failure::Stuck { side, stage } => {
                write!(f, "side {side}: stage {stage} is not terminal, has no eventually-dead transitions and cannot be split")
            }
            Failure::Validation { side, report } => {
                let ids: Vec<&str> = report.failures().map(|o| o.id.as_str()).collect();
                write!(f, "side {side}: synthesized graph fails the checker ({})", ids.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthesisResult {
    /// `(graph for consensus 1, graph for consensus 0)` on success.
    pub graphs: Option<(StageGraph, StageGraph)>,
    pub trace: Vec<String>,
    pub failure: Option<Failure>,
}

impl SynthesisResult {
    pub fn success(&self) -> bool {
        self.graphs.is_some()
    }
}

struct Node {
    id: String,
    refinement: Formula,
    dead: BTreeSet<usize>,
    rank: Option<Ranking>,
}

fn names(p: &Protocol, set: &BTreeSet<usize>) -> String {
    let v: Vec<String> = set.iter().map(|&t| format!("({})", p.transition_name(t))).collect();
    format!("{{{}}}", v.join(", "))
}

fn synthesize_side(
    p: &Protocol,
    phi: &Formula,
    b: u8,
    opts: &SynthesisOptions,
    trace: &mut Vec<String>,
) -> Result<std::result::Result<StageGraph, Failure>> {
    let origin = initial_side(p, phi, b);
    let mut root = preach(p, &origin, opts.strengthen).root;
    root.dead = initially_dead(p, &root)?;
    if !root.dead.is_empty() {
        trace.push(format!("side {b}: dead from the start: {}", names(p, &root.dead)));
    }
    let mut nodes = vec![Node { id: "S0".into(), refinement: Formula::True, dead: root.dead.clone(), rank: None }];
    let mut edges: Vec<(String, String)> = Vec::new();
    let mut work = VecDeque::from([0usize]);
    while let Some(i) = work.pop_front() {
        if nodes.len() > opts.node_budget {
            return Ok(Err(Failure::NodeBudget { side: b, stages: nodes.len() }));
        }
        let refinement = nodes[i].refinement.clone();
        let id = nodes[i].id.clone();
        if matches!(sat_refining(p, &mut root, &refinement, &wrong_output(p, b))?, Answer::Unsat) {
            trace.push(format!("side {b}: {id} is terminal"));
            continue;
        }
        for t in p.effective_transitions() {
            if !nodes[i].dead.contains(&t) {
                sat_refining(p, &mut root, &refinement, &enabled_formula(p, t))?;
            }
        }
        let mut s = FlowStage { root: root.clone(), refinement, dead: nodes[i].dead.clone() };
        s.dead.extend(never_enabled(p, &s)?);
        nodes[i].dead = s.dead.clone();

        let mut add_child = |nodes: &mut Vec<Node>, child: FlowStage| {
            let cid = format!("S{}", nodes.len());
            edges.push((id.clone(), cid.clone()));
            nodes.push(Node { id: cid.clone(), refinement: child.refinement, dead: child.dead, rank: None });
            work.push_back(nodes.len() - 1);
            cid
        };
        if let Some(cert) = find_eventually_dead(p, &s)? {
            let r = dead_underapprox(p, &s, &cert.u)?;
            let mut child = s.refined(r.clone());
            child.dead.extend(&cert.u);
            child.dead.extend(never_enabled(p, &child)?);
            nodes[i].rank = Some(Ranking::linear(cert.g.clone(), Some(cert.bound)));
            let cid = add_child(&mut nodes, child);
            trace.push(format!(
                "side {b}: {id}: eventually dead {} via g = {} (B = {}{}) -> {cid}: {r}",
                names(p, &cert.u),
                cert.g,
                cert.bound,
                if cert.universal { "" } else { ", weak decrease" },
            ));
            continue;
        }
        let children = split_stage(p, &s)?;
        if children.is_empty() {
            trace.push(format!("side {b}: {id}: stuck"));
            return Ok(Err(Failure::Stuck { side: b, stage: id }));
        }
        nodes[i].rank = Some(Ranking::linear(LinExpr::zero(), Some(1)));
        let mut ids = Vec::new();
        for c in children {
            let extra = c.refinement.to_string();
            ids.push(format!("{} ({extra})", add_child(&mut nodes, c)));
        }
        trace.push(format!("side {b}: {id}: split into {}", ids.join(", ")));
    }
    let stages = nodes
        .into_iter()
        .map(|n| Stage { id: n.id, constraint: n.refinement, rank: n.rank, flow_root: Some(root.clone()) })
        .collect();
    Ok(Ok(StageGraph { target: b, initial: "S0".into(), stages, edges }))
}

/// Synthesizes stage graphs for both sides of `φ` and validates them with the
/// independent checker before reporting success.
pub fn synthesize(p: &Protocol, phi: &Formula, opts: &SynthesisOptions) -> Result<SynthesisResult> {
    let mut trace = Vec::new();
    let mut graphs = Vec::new();
    for b in [1u8, 0] {
        let g = match synthesize_side(p, phi, b, opts, &mut trace)? {
            Ok(g) => g,
            Err(failure) => return Ok(SynthesisResult { graphs: None, trace, failure: Some(failure) }),
        };
        let report = check_stage_graph(p, &g, phi, &opts.check)?;
        if !report.pass {
            trace.push(format!("side {b}: self-validation failed"));
            return Ok(SynthesisResult { graphs: None, trace, failure: Some(Failure::Validation { side: b, report }) });
        }
        trace.push(format!("side {b}: {} stages, validated", g.stages.len()));
        graphs.push(g);
    }
    let zero = graphs.pop().unwrap();
    let one = graphs.pop().unwrap();
    Ok(SynthesisResult { graphs: Some((one, zero)), trace, failure: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protolib::{gen_flock_linear, gen_majority};
    use presburger::parse_formula;

    fn stage(p: &Protocol, phi: &str, b: u8, refinement: &str) -> FlowStage {
        let mut s = preach(p, &initial_side(p, &parse_formula(phi).unwrap(), b), false);
        s.refinement = parse_formula(refinement).unwrap();
        s
    }

    #[test]
    fn preach_contains_one_firing() {
        let p = gen_majority().protocol;
        let s = preach(&p, &parse_formula("AY >= 1 & AN >= 1 & PY = 0 & PN = 0").unwrap(), false);
        let at = |c: [i64; 4]| Formula::and(p.states().iter().zip(c).map(|(q, v)| Formula::var_cmp(q, CmpOp::Eq, v)));
        assert!(sat(&Formula::and([s.membership(&p), at([0, 0, 1, 1])])).unwrap().is_some());
        assert!(sat(&Formula::and([s.membership(&p), at([0, 0, 0, 1])])).unwrap().is_none());
        let empty = preach(&p, &Formula::False, false);
        assert!(sat(&empty.membership(&p)).unwrap().is_none());
    }

    #[test]
    fn majority_first_dead_set() {
        let p = gen_majority().protocol;
        let s = stage(&p, "x >= y", 0, "true");
        let cert = find_eventually_dead(&p, &s).unwrap().unwrap();
        assert_eq!(cert.u, [0].into());
        assert!(cert.universal);
        let r = dead_underapprox(&p, &s, &cert.u).unwrap();
        assert_eq!(r, parse_formula("AY <= 0").unwrap());
    }

    #[test]
    fn majority_second_dead_set() {
        let p = gen_majority().protocol;
        let s = stage(&p, "x >= y", 0, "AY = 0");
        let r = dead_underapprox(&p, &s, &[2, 3].into()).unwrap();
        let expected = parse_formula("PY = 0").unwrap();
        let m = s.membership(&p);
        let equiv = Formula::and([
            m,
            Formula::or([Formula::and([r.clone(), negate(&expected)]), Formula::and([expected, negate(&r)])]),
        ]);
        assert!(sat(&equiv).unwrap().is_none(), "{r}");
        let cert = find_eventually_dead(&p, &s).unwrap().unwrap();
        assert_eq!(cert.u, [2, 3].into());
        assert_eq!(cert.g, LinExpr::var("PY"));
    }

    #[test]
    fn no_alive_transitions() {
        let p = gen_majority().protocol;
        let s = stage(&p, "x >= y", 0, "AY = 0 & PY = 0");
        assert!(find_eventually_dead(&p, &s).unwrap().is_none());
    }

    #[test]
    fn flock_merge_is_eventually_dead() {
        let g = gen_flock_linear(2).unwrap();
        let s = stage(&g.protocol, "x >= 2", 1, "true");
        let cert = find_eventually_dead(&g.protocol, &s).unwrap().unwrap();
        let merge = g.protocol.transition_for(1, 1).unwrap();
        assert!(cert.u.contains(&merge));
    }

    #[test]
    fn reopened_region_is_rejected() {
        // t4 = (PY, PN): t1 produces both inputs.
        let p = gen_majority().protocol;
        let s = stage(&p, "x >= y", 1, "true");
        assert_eq!(dead_underapprox(&p, &s, &[3].into()).unwrap(), Formula::False);
    }

    #[test]
    fn split_covers_stage() {
        let p = gen_majority().protocol;
        let s = stage(&p, "x >= y", 1, "true");
        let children = split_stage(&p, &s).unwrap();
        if !children.is_empty() {
            let cover = Formula::or(children.iter().map(|c| c.refinement.clone()));
            assert!(sat(&Formula::and([s.membership(&p), negate(&cover)])).unwrap().is_none());
        }
    }

    #[test]
    fn traps_and_siphons_from_closure() {
        let p = gen_majority().protocol;
        let s = preach(&p, &Formula::True, true);
        assert!(s.root.traps.iter().all(|t| is_trap(&p, t)));
        assert!(s.root.siphons.iter().all(|t| is_siphon(&p, t)));
        assert!(s.root.siphons.contains(&[0].into()));
        assert!(max_trap(&p, [1, 2].into()) == [1, 2].into());
    }
}
