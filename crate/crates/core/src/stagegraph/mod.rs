//! Stage-graph certificates and their checker.
//!
//! A stage graph is a DAG of stages. Each stage is a set of configurations
//! (a quantifier-free constraint, optionally intersected with a flow root);
//! each non-bottom stage carries a ranking function with a step bound `B`.
//! The checker reduces every proof obligation to a quantifier-free
//! satisfiability query.

mod check;
pub mod formulas;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use petgraph::algo::is_cyclic_directed;
use petgraph::graph::DiGraph;
use presburger::{parse_formula, parse_linexpr, Formula, LinExpr};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::model::{Configuration, Protocol};

pub use check::{
    check_inductive, check_node, check_stage_graph, obligation_queries, CheckOptions, CheckReport, Obligation,
    ObligationKind, Outcome,
};
pub use formulas::{reach_formula, step_formula};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StageGraphError {
    #[error("malformed stage graph: {0}")]
    Malformed(String),

    #[error("{field}: {msg}")]
    Format { field: String, msg: String },

    #[error("bound too large: B = {bound} with {transitions} transitions exceeds the sequence cap")]
    BoundTooLarge { bound: u32, transitions: usize },

    #[error("solver: {0}")]
    Solver(#[from] presburger::Error),

    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

fn format_err(field: impl Into<String>, msg: impl Into<String>) -> StageGraphError {
    StageGraphError::Format { field: field.into(), msg: msg.into() }
}

/// Piecewise-linear ranking function with an optional step bound.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    pub pieces: Vec<(Formula, LinExpr)>,
    /// `None`: try `B = 1, 2, 3` in order.
    pub bound: Option<u32>,
}

impl Ranking {
    pub fn linear(expr: LinExpr, bound: Option<u32>) -> Self {
        Ranking { pieces: vec![(Formula::True, expr)], bound }
    }

    /// The single expression when the function has one unguarded piece.
    pub fn as_linear(&self) -> Option<&LinExpr> {
        match self.pieces.as_slice() {
            [(Formula::True, e)] => Some(e),
            _ => None,
        }
    }
}

/// Inductive-by-construction overapproximation of the configurations
/// reachable from `origin`: `{C : ∃C0 ⊨ origin, x ∈ ℕ^T. C = C0 + M x}`,
/// strengthened by marked traps staying marked and empty siphons staying empty.
///
/// Transitions in `dead` are claimed never to fire from `origin`: their Parikh
/// counts are fixed to zero and the set is intersected with the region where
/// they are all disabled. That claim is not inductive by construction; the
/// checker verifies that the region is closed and contains the initial stage.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FlowRoot {
    /// Over state variables; may use `_i_x` input variables existentially.
    pub origin: Formula,
    pub traps: Vec<BTreeSet<usize>>,
    pub siphons: Vec<BTreeSet<usize>>,
    pub dead: BTreeSet<usize>,
}

impl FlowRoot {
    pub fn new(origin: Formula) -> Self {
        FlowRoot { origin, traps: Vec::new(), siphons: Vec::new(), dead: BTreeSet::new() }
    }

    /// All transitions in `dead` disabled.
    pub fn dead_region(&self, p: &Protocol) -> Formula {
        Formula::and(self.dead.iter().map(|&t| formulas::disabled_formula(p, t)))
    }

    /// Membership of the configuration named by the state variables.
    pub fn membership(&self, p: &Protocol) -> Formula {
        use formulas::{origin_var, parikh_var};
        let names = p.states();
        let o_map: HashMap<String, String> = names.iter().map(|q| (q.clone(), origin_var(q))).collect();
        let origin = self.origin.rename(&|v: &str| o_map.get(v).cloned().unwrap_or_else(|| v.to_string()));
        let mut parts = vec![origin.normalize()];
        let effective = p.effective_transitions();
        for (q, name) in names.iter().enumerate() {
            let mut rhs = LinExpr::var(origin_var(name));
            for &t in effective.iter().filter(|t| !self.dead.contains(t)) {
                let d = p.delta(t)[q];
                if d != 0 {
                    rhs.add_term(d, parikh_var(t));
                }
            }
            parts.push(Formula::eq(LinExpr::var(name), rhs));
        }
        parts.push(self.dead_region(p));
        let sum = |set: &BTreeSet<usize>, f: &dyn Fn(&str) -> String| {
            LinExpr::from_terms(set.iter().map(|&q| (f(&names[q]), 1)), 0)
        };
        for trap in &self.traps {
            parts.push(Formula::or([
                Formula::le(sum(trap, &origin_var), LinExpr::zero()),
                Formula::ge(sum(trap, &|q| q.to_string()), LinExpr::constant(1)),
            ]));
        }
        for siphon in &self.siphons {
            parts.push(Formula::or([
                Formula::ge(sum(siphon, &origin_var), LinExpr::constant(1)),
                Formula::le(sum(siphon, &|q| q.to_string()), LinExpr::zero()),
            ]));
        }
        Formula::and(parts)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub id: String,
    /// Quantifier-free over state variables; for flow-rooted stages, the refinement.
    pub constraint: Formula,
    pub rank: Option<Ranking>,
    pub flow_root: Option<FlowRoot>,
}

impl Stage {
    pub fn plain(id: &str, constraint: Formula, rank: Option<Ranking>) -> Self {
        Stage { id: id.to_string(), constraint, rank, flow_root: None }
    }

    /// Full denotation as an existential formula.
    pub fn denotation(&self, p: &Protocol) -> Formula {
        match &self.flow_root {
            None => self.constraint.clone(),
            Some(root) => Formula::and([root.membership(p), self.constraint.normalize()]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageGraph {
    pub target: u8,
    pub initial: String,
    pub stages: Vec<Stage>,
    pub edges: Vec<(String, String)>,
}

impl StageGraph {
    pub fn stage(&self, id: &str) -> Option<&Stage> {
        self.stages.iter().find(|s| s.id == id)
    }

    pub fn children(&self, id: &str) -> Vec<&Stage> {
        self.edges.iter().filter(|(a, _)| a == id).filter_map(|(_, b)| self.stage(b)).collect()
    }

    pub fn is_bottom(&self, id: &str) -> bool {
        !self.edges.iter().any(|(a, _)| a == id)
    }

    /// Structural well-formedness: ids, edges, acyclicity, ranking placement,
    /// variables and flow-root sharing.
    pub fn validate(&self, p: &Protocol) -> Result<(), StageGraphError> {
        let mal = |m: String| Err(StageGraphError::Malformed(m));
        if self.target > 1 {
            return mal(format!("target must be 0 or 1, got {}", self.target));
        }
        let mut ids = HashMap::new();
        for (i, s) in self.stages.iter().enumerate() {
            if ids.insert(s.id.as_str(), i).is_some() {
                return mal(format!("duplicate stage id '{}'", s.id));
            }
        }
        if !ids.contains_key(self.initial.as_str()) {
            return mal(format!("initial stage '{}' does not exist", self.initial));
        }
        let mut g: DiGraph<(), ()> = DiGraph::new();
        let nodes: Vec<_> = self.stages.iter().map(|_| g.add_node(())).collect();
        for (a, b) in &self.edges {
            let (Some(&i), Some(&j)) = (ids.get(a.as_str()), ids.get(b.as_str())) else {
                return mal(format!("edge ({a}, {b}) references an unknown stage"));
            };
            g.add_edge(nodes[i], nodes[j], ());
        }
        if is_cyclic_directed(&g) {
            return mal("the stage graph has a cycle".into());
        }
        let states: BTreeSet<&str> = p.states().iter().map(String::as_str).collect();
        for s in &self.stages {
            for v in s.constraint.free_vars() {
                if !states.contains(v.as_str()) {
                    return mal(format!("stage '{}' uses unknown variable '{v}'", s.id));
                }
            }
            let bottom = self.is_bottom(&s.id);
            match (&s.rank, bottom) {
                (None, false) => return mal(format!("non-bottom stage '{}' has no ranking function", s.id)),
                (Some(_), true) => return mal(format!("bottom stage '{}' has a ranking function", s.id)),
                _ => {}
            }
            if let Some(r) = &s.rank {
                if r.pieces.is_empty() {
                    return mal(format!("stage '{}' has an empty ranking function", s.id));
                }
                for (guard, e) in &r.pieces {
                    for v in guard.free_vars().into_iter().chain(e.terms().keys().cloned()) {
                        if !states.contains(v.as_str()) {
                            return mal(format!("ranking of stage '{}' uses unknown variable '{v}'", s.id));
                        }
                    }
                }
            }
            if let Some(root) = &s.flow_root {
                for v in root.origin.free_vars() {
                    if !states.contains(v.as_str()) && !v.starts_with("_i_") {
                        return mal(format!("flow root of '{}' uses unknown variable '{v}'", s.id));
                    }
                }
                let n = p.num_states();
                if root.traps.iter().chain(&root.siphons).any(|set| set.iter().any(|&q| q >= n)) {
                    return mal(format!("flow root of '{}' references an unknown state", s.id));
                }
                if root.dead.iter().any(|&t| t >= p.transitions().len()) {
                    return mal(format!("flow root of '{}' references an unknown transition", s.id));
                }
            }
            for c in self.children(&s.id) {
                if c.flow_root.is_some() && c.flow_root != s.flow_root {
                    return mal(format!("child '{}' of '{}' has a flow root different from its parent's", c.id, s.id));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// JSON

fn parse_field_formula(v: &Value, field: &str) -> Result<Formula, StageGraphError> {
    let s = v.as_str().ok_or_else(|| format_err(field, "expected a formula string"))?;
    parse_formula(s).map_err(|e| format_err(field, e.to_string()))
}

fn parse_field_expr(v: &Value, field: &str) -> Result<LinExpr, StageGraphError> {
    match v {
        Value::String(s) => parse_linexpr(s).map_err(|e| format_err(field, e.to_string())),
        Value::Number(n) => n.as_i64().map(LinExpr::constant).ok_or_else(|| format_err(field, "expected an integer")),
        _ => Err(format_err(field, "expected a linear expression")),
    }
}

fn parse_state_sets(p: &Protocol, v: Option<&Value>, field: &str) -> Result<Vec<BTreeSet<usize>>, StageGraphError> {
    let Some(v) = v else { return Ok(Vec::new()) };
    let arr = v.as_array().ok_or_else(|| format_err(field, "expected an array of state lists"))?;
    arr.iter()
        .enumerate()
        .map(|(i, set)| {
            let names =
                set.as_array().ok_or_else(|| format_err(format!("{field}[{i}]"), "expected a list of states"))?;
            names
                .iter()
                .map(|n| {
                    n.as_str()
                        .and_then(|s| p.state_index(s))
                        .ok_or_else(|| format_err(format!("{field}[{i}]"), format!("unknown state {n}")))
                })
                .collect()
        })
        .collect()
}

fn parse_transitions(p: &Protocol, v: Option<&Value>, field: &str) -> Result<BTreeSet<usize>, StageGraphError> {
    let Some(v) = v else { return Ok(BTreeSet::new()) };
    let arr = v.as_array().ok_or_else(|| format_err(field, "expected an array of [q1, q2] pairs"))?;
    arr.iter()
        .enumerate()
        .map(|(i, pair)| {
            let f = format!("{field}[{i}]");
            let names = pair.as_array().filter(|a| a.len() == 2).ok_or_else(|| format_err(&f, "expected [q1, q2]"))?;
            let idx = |n: &Value| {
                n.as_str().and_then(|s| p.state_index(s)).ok_or_else(|| format_err(&f, format!("unknown state {n}")))
            };
            let (q1, q2) = (idx(&names[0])?, idx(&names[1])?);
            p.transition_for(q1, q2).ok_or_else(|| format_err(&f, "no transition for this pair"))
        })
        .collect()
}

fn parse_rank(v: &Value, field: &str) -> Result<Option<Ranking>, StageGraphError> {
    let obj = match v {
        Value::Null => return Ok(None),
        Value::String(_) => return Ok(Some(Ranking::linear(parse_field_expr(v, field)?, None))),
        Value::Object(o) => o,
        _ => return Err(format_err(field, "expected null, an expression, or an object")),
    };
    let bound = match obj.get("B") {
        None | Some(Value::Null) => None,
        Some(b) => Some(
            b.as_u64()
                .and_then(|b| u32::try_from(b).ok())
                .ok_or_else(|| format_err(format!("{field}.B"), "expected a natural number"))?,
        ),
    };
    let pieces = if let Some(e) = obj.get("expr") {
        vec![(Formula::True, parse_field_expr(e, &format!("{field}.expr"))?)]
    } else {
        let arr = obj
            .get("pieces")
            .and_then(Value::as_array)
            .ok_or_else(|| format_err(format!("{field}.pieces"), "expected an array of [guard, expr]"))?;
        arr.iter()
            .enumerate()
            .map(|(i, pc)| {
                let f = format!("{field}.pieces[{i}]");
                let pair =
                    pc.as_array().filter(|a| a.len() == 2).ok_or_else(|| format_err(&f, "expected [guard, expr]"))?;
                Ok((parse_field_formula(&pair[0], &f)?, parse_field_expr(&pair[1], &f)?))
            })
            .collect::<Result<_, StageGraphError>>()?
    };
    Ok(Some(Ranking { pieces, bound }))
}

impl StageGraph {
    pub fn from_json_value(p: &Protocol, v: &Value) -> Result<StageGraph, StageGraphError> {
        let obj = v.as_object().ok_or_else(|| format_err("$", "expected an object"))?;
        let target = obj
            .get("target")
            .and_then(Value::as_u64)
            .filter(|&b| b <= 1)
            .ok_or_else(|| format_err("target", "expected 0 or 1"))? as u8;
        let initial = obj
            .get("initial")
            .and_then(Value::as_str)
            .ok_or_else(|| format_err("initial", "expected a stage id"))?
            .to_string();
        let arr =
            obj.get("stages").and_then(Value::as_array).ok_or_else(|| format_err("stages", "expected an array"))?;
        let mut stages = Vec::new();
        for (i, s) in arr.iter().enumerate() {
            let f = format!("stages[{i}]");
            let so = s.as_object().ok_or_else(|| format_err(&f, "expected an object"))?;
            let id = so
                .get("id")
                .and_then(Value::as_str)
                .ok_or_else(|| format_err(format!("{f}.id"), "expected a string"))?
                .to_string();
            let constraint = match so.get("constraint") {
                Some(c) => parse_field_formula(c, &format!("{f}.constraint"))?,
                None => return Err(format_err(format!("{f}.constraint"), "missing")),
            };
            let rank = parse_rank(so.get("rank").unwrap_or(&Value::Null), &format!("{f}.rank"))?;
            let flow_root = match so.get("flowRoot") {
                None | Some(Value::Null) => None,
                Some(r) => {
                    let rf = format!("{f}.flowRoot");
                    let origin = parse_field_formula(
                        r.get("origin").ok_or_else(|| format_err(format!("{rf}.origin"), "missing"))?,
                        &format!("{rf}.origin"),
                    )?;
                    Some(FlowRoot {
                        origin,
                        traps: parse_state_sets(p, r.get("traps"), &format!("{rf}.traps"))?,
                        siphons: parse_state_sets(p, r.get("siphons"), &format!("{rf}.siphons"))?,
                        dead: parse_transitions(p, r.get("dead"), &format!("{rf}.dead"))?,
                    })
                }
            };
            stages.push(Stage { id, constraint, rank, flow_root });
        }
        let edges = match obj.get("edges") {
            None => Vec::new(),
            Some(Value::Array(a)) => a
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    let pair = e
                        .as_array()
                        .filter(|a| a.len() == 2 && a.iter().all(Value::is_string))
                        .ok_or_else(|| format_err(format!("edges[{i}]"), "expected [parent, child]"))?;
                    Ok((pair[0].as_str().unwrap().to_string(), pair[1].as_str().unwrap().to_string()))
                })
                .collect::<Result<_, StageGraphError>>()?,
            Some(_) => return Err(format_err("edges", "expected an array")),
        };
        Ok(StageGraph { target, initial, stages, edges })
    }

    pub fn to_json(&self, p: &Protocol) -> Value {
        let names = |set: &BTreeSet<usize>| -> Vec<String> { set.iter().map(|&q| p.states()[q].clone()).collect() };
        let stages: Vec<Value> = self
            .stages
            .iter()
            .map(|s| {
                let mut o = Map::new();
                o.insert("id".into(), json!(s.id));
                o.insert("constraint".into(), json!(s.constraint.to_string()));
                let rank = match &s.rank {
                    None => Value::Null,
                    Some(r) => {
                        let pieces: Vec<Value> =
                            r.pieces.iter().map(|(g, e)| json!([g.to_string(), e.to_string()])).collect();
                        let mut ro = Map::new();
                        ro.insert("pieces".into(), Value::Array(pieces));
                        if let Some(b) = r.bound {
                            ro.insert("B".into(), json!(b));
                        }
                        Value::Object(ro)
                    }
                };
                o.insert("rank".into(), rank);
                if let Some(root) = &s.flow_root {
                    o.insert("flow".into(), json!(true));
                    o.insert(
                        "flowRoot".into(),
                        json!({
                            "origin": root.origin.to_string(),
                            "traps": root.traps.iter().map(names).collect::<Vec<_>>(),
                            "siphons": root.siphons.iter().map(names).collect::<Vec<_>>(),
                            "dead": root.dead.iter().map(|&t| {
                                let tr = p.transitions()[t];
                                json!([p.states()[tr.pre.0], p.states()[tr.pre.1]])
                            }).collect::<Vec<_>>(),
                            "membership": s.denotation(p).to_string(),
                        }),
                    );
                }
                Value::Object(o)
            })
            .collect();
        json!({
            "target": self.target,
            "initial": self.initial,
            "stages": stages,
            "edges": self.edges.iter().map(|(a, b)| json!([a, b])).collect::<Vec<_>>(),
        })
    }
}

/// Reads one graph, an array of graphs, or `{"graphs": [...]}`.
pub fn stage_graphs_from_json(p: &Protocol, v: &Value) -> Result<Vec<StageGraph>, StageGraphError> {
    let list = match v {
        Value::Array(a) => a.clone(),
        Value::Object(o) if o.contains_key("graphs") => {
            o["graphs"].as_array().cloned().ok_or_else(|| format_err("graphs", "expected an array"))?
        }
        Value::Object(_) => vec![v.clone()],
        _ => return Err(format_err("$", "expected an object or array")),
    };
    list.iter()
        .enumerate()
        .map(|(i, g)| {
            StageGraph::from_json_value(p, g).map_err(|e| match e {
                StageGraphError::Format { field, msg } => format_err(format!("graphs[{i}].{field}"), msg),
                other => other,
            })
        })
        .collect()
}

pub fn load_stage_graphs(p: &Protocol, path: impl AsRef<Path>) -> Result<Vec<StageGraph>, StageGraphError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| StageGraphError::Io { path: path.display().to_string(), msg: e.to_string() })?;
    let v: Value = serde_json::from_str(&text).map_err(|e| format_err("$", e.to_string()))?;
    stage_graphs_from_json(p, &v)
}

/// Restricts a solver witness to the state variables.
pub fn config_from_witness(p: &Protocol, w: &presburger::Assignment, rename: &dyn Fn(&str) -> String) -> Configuration {
    Configuration(p.states().iter().map(|q| w.get(&rename(q)).copied().unwrap_or(0).max(0) as u64).collect())
}
