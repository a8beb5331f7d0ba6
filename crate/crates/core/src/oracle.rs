//! Explicit-state ground truth: reachability graphs, bottom SCCs and
//! exhaustive predicate checking up to a population bound.

use std::collections::{HashMap, VecDeque};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use presburger::{Assignment, Formula};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{Configuration, InputVector, ModelError, Protocol};

pub const DEFAULT_NODE_CAP: usize = 2_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("reachability graph exceeds the node cap of {0}")]
    NodeCap(usize),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error("predicate: {0}")]
    Predicate(#[from] presburger::Error),
}

#[derive(Debug, Clone)]
pub struct ReachGraph {
    pub nodes: Vec<Configuration>,
    pub index: HashMap<Configuration, usize>,
    /// Successor lists, self loops omitted.
    pub succ: Vec<Vec<usize>>,
    /// Bottom strongly connected components, each sorted.
    pub bsccs: Vec<Vec<usize>>,
}

impl ReachGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Breadth-first closure of `c0` under one-step successors.
pub fn explore(p: &Protocol, c0: &Configuration, node_cap: usize) -> Result<ReachGraph, OracleError> {
    let mut nodes = vec![c0.clone()];
    let mut index = HashMap::new();
    index.insert(c0.clone(), 0usize);
    let mut succ: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        let c = nodes[i].clone();
        let mut out = Vec::new();
        if c.size() >= 2 {
            for t in 0..p.transitions().len() {
                if !p.enabled(&c, t) {
                    continue;
                }
                let d = p.fire(&c, t);
                if d == c {
                    continue;
                }
                let j = match index.get(&d) {
                    Some(&j) => j,
                    None => {
                        if nodes.len() >= node_cap {
                            return Err(OracleError::NodeCap(node_cap));
                        }
                        let j = nodes.len();
                        index.insert(d.clone(), j);
                        nodes.push(d);
                        queue.push_back(j);
                        j
                    }
                };
                if !out.contains(&j) {
                    out.push(j);
                }
            }
        }
        if succ.len() <= i {
            succ.resize(i + 1, Vec::new());
        }
        succ[i] = out;
    }
    succ.resize(nodes.len(), Vec::new());
    let bsccs = bottom_sccs(&succ);
    Ok(ReachGraph { nodes, index, succ, bsccs })
}

fn bottom_sccs(succ: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut g: DiGraph<(), ()> = DiGraph::with_capacity(succ.len(), 0);
    for _ in 0..succ.len() {
        g.add_node(());
    }
    for (i, out) in succ.iter().enumerate() {
        for &j in out {
            g.add_edge(NodeIndex::new(i), NodeIndex::new(j), ());
        }
    }
    let sccs = tarjan_scc(&g);
    let mut comp = vec![0usize; succ.len()];
    for (c, members) in sccs.iter().enumerate() {
        for n in members {
            comp[n.index()] = c;
        }
    }
    let mut out = Vec::new();
    for (c, members) in sccs.iter().enumerate() {
        let bottom = members.iter().all(|n| succ[n.index()].iter().all(|&j| comp[j] == c));
        if bottom {
            let mut m: Vec<usize> = members.iter().map(|n| n.index()).collect();
            m.sort_unstable();
            out.push(m);
        }
    }
    out.sort();
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Witness {
    /// A bottom SCC containing a configuration that is not a consensus, or
    /// consensus configurations of both values.
    MixedBottom(Vec<Configuration>),
    /// Two bottom SCCs with different consensus values.
    Conflicting { zero: Configuration, one: Configuration },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Classification {
    Converges(u8),
    NotWellSpecified(Witness),
}

/// Probability-1 verdict from the bottom-SCC structure of the reachability graph.
pub fn classify_graph(p: &Protocol, g: &ReachGraph) -> Classification {
    let mut seen: Option<(u8, usize)> = None;
    for b in &g.bsccs {
        let values: Vec<Option<u8>> = b.iter().map(|&i| p.consensus_of(&g.nodes[i])).collect();
        let first = values[0];
        if first.is_none() || values.iter().any(|v| *v != first) {
            let cfgs = b.iter().take(8).map(|&i| g.nodes[i].clone()).collect();
            return Classification::NotWellSpecified(Witness::MixedBottom(cfgs));
        }
        let v = first.unwrap();
        match seen {
            None => seen = Some((v, b[0])),
            Some((w, j)) if w != v => {
                let (zero, one) = if w == 0 { (j, b[0]) } else { (b[0], j) };
                return Classification::NotWellSpecified(Witness::Conflicting {
                    zero: g.nodes[zero].clone(),
                    one: g.nodes[one].clone(),
                });
            }
            _ => {}
        }
    }
    Classification::Converges(seen.map(|(v, _)| v).unwrap_or(1))
}

pub fn classify(p: &Protocol, c0: &Configuration, node_cap: usize) -> Result<Classification, OracleError> {
    let g = explore(p, c0, node_cap)?;
    Ok(classify_graph(p, &g))
}

/// Node indices whose forward closure is entirely `b`-consensus.
pub fn stable_set(p: &Protocol, g: &ReachGraph, b: u8) -> Vec<bool> {
    let n = g.len();
    let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, out) in g.succ.iter().enumerate() {
        for &j in out {
            pred[j].push(i);
        }
    }
    let mut bad = vec![false; n];
    let mut queue = VecDeque::new();
    for i in 0..n {
        if p.consensus_of(&g.nodes[i]) != Some(b) {
            bad[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(j) = queue.pop_front() {
        for &i in &pred[j] {
            if !bad[i] {
                bad[i] = true;
                queue.push_back(i);
            }
        }
    }
    bad.into_iter().map(|x| !x).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Pass { inputs: usize },
    CounterExample { input: InputVector, expected: u8, got: Classification },
}

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    pub node_cap: usize,
    pub include_zero: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { node_cap: DEFAULT_NODE_CAP, include_zero: false }
    }
}

/// Input vectors of arity `m` with total in `lo..=hi`, ordered by total then lexicographically.
pub fn inputs_up_to(m: usize, lo: u64, hi: u64) -> Vec<InputVector> {
    fn rec(m: usize, total: u64, cur: &mut Vec<u64>, out: &mut Vec<InputVector>) {
        if cur.len() + 1 == m {
            cur.push(total);
            out.push(InputVector(cur.clone()));
            cur.pop();
            return;
        }
        for v in 0..=total {
            cur.push(v);
            rec(m, total - v, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if m == 0 {
        if lo == 0 {
            out.push(InputVector(Vec::new()));
        }
        return out;
    }
    for total in lo..=hi {
        rec(m, total, &mut Vec::new(), &mut out);
    }
    out
}

pub fn eval_predicate(p: &Protocol, phi: &Formula, v: &InputVector) -> Result<u8, OracleError> {
    let a: Assignment = p.input_vars().iter().cloned().zip(v.0.iter().map(|&n| n as i64)).collect();
    Ok(u8::from(phi.eval(&a)?))
}

/// Checks every input with `1 <= Σv <= n` against `phi`; reports the first violation.
pub fn decide_up_to(p: &Protocol, phi: &Formula, n: u64, opts: OracleOptions) -> Result<Decision, OracleError> {
    let lo = if opts.include_zero { 0 } else { 1 };
    let inputs = inputs_up_to(p.input_vars().len(), lo, n);
    let found = inputs
        .par_iter()
        .map(|v| -> Result<Option<Decision>, OracleError> {
            let expected = eval_predicate(p, phi, v)?;
            let c0 = p.initial_config(v)?;
            let got = classify(p, &c0, opts.node_cap)?;
            if got == Classification::Converges(expected) {
                Ok(None)
            } else {
                Ok(Some(Decision::CounterExample { input: v.clone(), expected, got }))
            }
        })
        .find_first(|r| !matches!(r, Ok(None)));
    match found {
        None => Ok(Decision::Pass { inputs: inputs.len() }),
        Some(Ok(d)) => Ok(d.expect("filtered")),
        Some(Err(e)) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protolib::{gen_flock_linear, gen_majority};

    fn cfg(v: &[u64]) -> Configuration {
        Configuration(v.to_vec())
    }

    #[test]
    fn explore_small() {
        let p = gen_majority().protocol;
        let g = explore(&p, &cfg(&[1, 1, 0, 0]), 100).unwrap();
        let mut nodes = g.nodes.clone();
        nodes.sort();
        assert_eq!(nodes, vec![cfg(&[0, 0, 1, 1]), cfg(&[0, 0, 2, 0]), cfg(&[1, 1, 0, 0])]);
        assert_eq!(g.bsccs.len(), 1);
        assert_eq!(g.nodes[g.bsccs[0][0]], cfg(&[0, 0, 2, 0]));

        let g = explore(&p, &cfg(&[0, 1, 0, 0]), 100).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.bsccs, vec![vec![0]]);

        let g = explore(&p, &cfg(&[4, 4, 0, 0]), 1000).unwrap();
        assert!(g.len() <= 165);
        assert!(matches!(explore(&p, &cfg(&[4, 4, 0, 0]), 3), Err(OracleError::NodeCap(3))));
    }

    #[test]
    fn classify_examples() {
        let p = gen_majority().protocol;
        assert_eq!(classify(&p, &cfg(&[1, 2, 0, 0]), 1000).unwrap(), Classification::Converges(0));
        assert_eq!(classify(&p, &cfg(&[2, 2, 0, 0]), 1000).unwrap(), Classification::Converges(1));
        let broken = p.without_transition(3);
        match classify(&broken, &cfg(&[2, 2, 0, 0]), 1000).unwrap() {
            Classification::NotWellSpecified(Witness::MixedBottom(cs)) => {
                assert!(cs.contains(&cfg(&[0, 0, 2, 2])));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stable_set_examples() {
        let p = gen_majority().protocol;
        let g = explore(&p, &cfg(&[1, 1, 0, 0]), 100).unwrap();
        let s1 = stable_set(&p, &g, 1);
        let members: Vec<&Configuration> = (0..g.len()).filter(|&i| s1[i]).map(|i| &g.nodes[i]).collect();
        assert_eq!(members, vec![&cfg(&[0, 0, 2, 0])]);
        let s0 = stable_set(&p, &g, 0);
        assert!(s0.iter().all(|x| !x));
    }

    #[test]
    fn input_enumeration_order() {
        let v = inputs_up_to(2, 1, 2);
        let got: Vec<Vec<u64>> = v.into_iter().map(|i| i.0).collect();
        assert_eq!(got, vec![vec![0, 1], vec![1, 0], vec![0, 2], vec![1, 1], vec![2, 0]]);
        assert_eq!(inputs_up_to(2, 1, 8).len(), 44);
    }

    #[test]
    fn decide_examples() {
        let g = gen_majority();
        assert_eq!(
            decide_up_to(&g.protocol, &g.predicate, 8, OracleOptions::default()).unwrap(),
            Decision::Pass { inputs: 44 }
        );
        let f = gen_flock_linear(3).unwrap();
        assert!(matches!(
            decide_up_to(&f.protocol, &f.predicate, 8, OracleOptions::default()).unwrap(),
            Decision::Pass { .. }
        ));
        let wrong = presburger::parse_formula("x >= 4").unwrap();
        match decide_up_to(&f.protocol, &wrong, 8, OracleOptions::default()).unwrap() {
            Decision::CounterExample { input, expected, got } => {
                assert_eq!(input.0, vec![3]);
                assert_eq!(expected, 0);
                assert_eq!(got, Classification::Converges(1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
