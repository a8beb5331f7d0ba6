//! Stochastic simulation under the uniform random pairwise scheduler.
//!
//! Each interaction draws an ordered pair of distinct agents uniformly among
//! the `n·(n−1)` pairs and applies the matching transition, or nothing if the
//! pair is silent. Silent picks still count as interactions.

use std::collections::HashMap;
use std::fmt::Write as _;

use num_rational::Ratio;
use presburger::Formula;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{Configuration, InputVector, ModelError, Protocol};
use crate::oracle::{self, Classification, OracleError, DEFAULT_NODE_CAP};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("exact stability needs the reachability graph, which exceeds the node cap of {0}; use heuristic mode")]
    NodeCap(usize),

    #[error("cutoff must be at least 1")]
    ZeroCutoff,

    #[error("runs must be at least 1")]
    NoRuns,

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Oracle(OracleError),
}

impl From<OracleError> for SimError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::NodeCap(n) => SimError::NodeCap(n),
            other => SimError::Oracle(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    /// Stop on entering the stable set computed from the reachability graph.
    Exact,
    /// Stop once one consensus has persisted for `window` interactions;
    /// `None` means `50·n²`.
    Heuristic { window: Option<u64> },
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub cutoff: u64,
    pub stability: Stability,
    pub record_trace: bool,
    pub node_cap: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { cutoff: 10_000_000, stability: Stability::Exact, record_trace: false, node_cap: DEFAULT_NODE_CAP }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    StabilizedTo(u8),
    /// Consensus value at the cutoff, if any.
    CutoffReached(Option<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    pub final_config: Configuration,
    pub interactions: u64,
    /// `interactions / |C0|`; zero for the empty population.
    pub parallel_time: Ratio<u64>,
    pub outcome: RunOutcome,
    pub seed: u64,
    /// Initial configuration followed by every configuration change.
    pub trace: Option<Vec<Configuration>>,
}

impl RunResult {
    /// One configuration per line, then a summary line starting with `#`.
    pub fn trace_text(&self, p: &Protocol) -> String {
        let mut out = String::new();
        for c in self.trace.iter().flatten() {
            out.push_str(&p.format_config(c));
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "# interactions={} parallel_time={} outcome={} seed={}",
            self.interactions,
            self.parallel_time,
            outcome_label(self.outcome),
            self.seed
        );
        out
    }
}

pub fn outcome_label(o: RunOutcome) -> String {
    match o {
        RunOutcome::StabilizedTo(b) => format!("stabilized:{b}"),
        RunOutcome::CutoffReached(Some(b)) => format!("cutoff:{b}"),
        RunOutcome::CutoffReached(None) => "cutoff:none".into(),
    }
}

/// Stable configurations of both values, from one exploration of `c0`.
struct StableIndex {
    value: HashMap<Configuration, u8>,
}

impl StableIndex {
    fn new(p: &Protocol, c0: &Configuration, cap: usize) -> Result<Self, SimError> {
        let g = oracle::explore(p, c0, cap)?;
        let mut value = HashMap::new();
        for b in [0u8, 1] {
            for (i, stable) in oracle::stable_set(p, &g, b).into_iter().enumerate() {
                if stable {
                    value.insert(g.nodes[i].clone(), b);
                }
            }
        }
        Ok(StableIndex { value })
    }
}

fn check_options(opts: &SimOptions) -> Result<(), SimError> {
    if opts.cutoff == 0 {
        return Err(SimError::ZeroCutoff);
    }
    Ok(())
}

/// State of the `k`-th agent when agents are listed state by state.
fn agent_state(c: &Configuration, mut k: u64) -> usize {
    for (q, &n) in c.0.iter().enumerate() {
        if k < n {
            return q;
        }
        k -= n;
    }
    unreachable!("agent index below population size")
}

fn run(p: &Protocol, c0: &Configuration, seed: u64, opts: &SimOptions, stable: Option<&StableIndex>) -> RunResult {
    let n = c0.size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = c0.clone();
    let mut trace = opts.record_trace.then(|| vec![c0.clone()]);
    let mut interactions = 0u64;
    let window = match opts.stability {
        Stability::Heuristic { window } => window.unwrap_or(50 * n * n).max(1),
        Stability::Exact => 0,
    };
    let mut consensus = p.consensus_of(&c);
    let mut since = 0u64;

    let outcome = loop {
        if let Some(s) = stable {
            if let Some(&b) = s.value.get(&c) {
                break RunOutcome::StabilizedTo(b);
            }
        } else if let Some(b) = consensus {
            if n >= 2 && interactions - since >= window {
                break RunOutcome::StabilizedTo(b);
            }
        }
        if n < 2 || interactions >= opts.cutoff {
            break RunOutcome::CutoffReached(consensus);
        }
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        interactions += 1;
        let (q1, q2) = (agent_state(&c, i), agent_state(&c, j));
        if let Some(t) = p.transition_for(q1, q2) {
            let next = p.apply(&c, t).expect("pair drawn from the configuration");
            if next != c {
                c = next;
                if let Some(tr) = trace.as_mut() {
                    tr.push(c.clone());
                }
                let now = p.consensus_of(&c);
                if now != consensus {
                    consensus = now;
                    since = interactions;
                }
            }
        }
    };
    RunResult { final_config: c, interactions, parallel_time: Ratio::new(interactions, n.max(1)), outcome, seed, trace }
}

/// One seeded run from `c0`.
pub fn simulate_run(p: &Protocol, c0: &Configuration, seed: u64, opts: &SimOptions) -> Result<RunResult, SimError> {
    check_options(opts)?;
    let stable = match opts.stability {
        Stability::Exact => Some(StableIndex::new(p, c0, opts.node_cap)?),
        Stability::Heuristic { .. } => None,
    };
    Ok(run(p, c0, seed, opts, stable.as_ref()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub runs: usize,
    pub stabilized: usize,
    /// Value runs are measured against; `None` when the oracle finds the
    /// input not well specified.
    pub expected: Option<u8>,
    pub correct: usize,
    pub fraction_correct: f64,
    /// Mean parallel time over stabilized runs.
    pub mean_parallel_time: Option<f64>,
    pub seed: u64,
    pub results: Vec<RunResult>,
}

/// Seed of the `i`-th run of an ensemble.
pub fn derived_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

/// `runs` independent runs from the initial configuration of `v`. Runs are
/// correct when they stabilize to `φ(v)`, or to the oracle's verdict when no
/// predicate is given.
pub fn estimate(
    p: &Protocol,
    v: &InputVector,
    runs: usize,
    seed: u64,
    opts: &SimOptions,
    phi: Option<&Formula>,
) -> Result<EnsembleStats, SimError> {
    check_options(opts)?;
    if runs == 0 {
        return Err(SimError::NoRuns);
    }
    let c0 = p.initial_config(v)?;
    let stable = match opts.stability {
        Stability::Exact => Some(StableIndex::new(p, &c0, opts.node_cap)?),
        Stability::Heuristic { .. } => None,
    };
    let expected = match phi {
        Some(f) => Some(oracle::eval_predicate(p, f, v)?),
        None => match oracle::classify(p, &c0, opts.node_cap)? {
            Classification::Converges(b) => Some(b),
            Classification::NotWellSpecified(_) => None,
        },
    };
    let results: Vec<RunResult> =
        (0..runs).into_par_iter().map(|i| run(p, &c0, derived_seed(seed, i), opts, stable.as_ref())).collect();
    let stabilized: Vec<&RunResult> =
        results.iter().filter(|r| matches!(r.outcome, RunOutcome::StabilizedTo(_))).collect();
    let correct = results.iter().filter(|r| expected.is_some_and(|b| r.outcome == RunOutcome::StabilizedTo(b))).count();
    let mean_parallel_time = (!stabilized.is_empty()).then(|| {
        let sum: f64 =
            stabilized.iter().map(|r| *r.parallel_time.numer() as f64 / *r.parallel_time.denom() as f64).sum();
        sum / stabilized.len() as f64
    });
    Ok(EnsembleStats {
        runs,
        stabilized: stabilized.len(),
        expected,
        correct,
        fraction_correct: correct as f64 / runs as f64,
        mean_parallel_time,
        seed,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protolib::gen_majority;

    fn majority() -> Protocol {
        gen_majority().protocol
    }

    #[test]
    fn three_to_one_stabilizes_to_one() {
        let p = majority();
        for seed in 0..20 {
            let r = simulate_run(&p, &Configuration(vec![3, 1, 0, 0]), seed, &SimOptions::default()).unwrap();
            assert_eq!(r.outcome, RunOutcome::StabilizedTo(1));
            assert_eq!(r.parallel_time * 4, Ratio::from_integer(r.interactions));
        }
    }

    #[test]
    fn lone_agent_hits_cutoff_immediately() {
        let p = majority();
        let opts = SimOptions { stability: Stability::Heuristic { window: None }, ..SimOptions::default() };
        let r = simulate_run(&p, &Configuration(vec![0, 1, 0, 0]), 7, &opts).unwrap();
        assert_eq!(r.outcome, RunOutcome::CutoffReached(Some(0)));
        assert_eq!(r.interactions, 0);
    }

    #[test]
    fn empty_population_has_zero_time() {
        let p = majority();
        let opts = SimOptions { stability: Stability::Heuristic { window: None }, ..SimOptions::default() };
        let r = simulate_run(&p, &Configuration::zero(4), 1, &opts).unwrap();
        assert_eq!(r.parallel_time, Ratio::from_integer(0));
    }

    #[test]
    fn same_seed_same_result() {
        let p = majority();
        let opts = SimOptions { record_trace: true, ..SimOptions::default() };
        let c0 = Configuration(vec![4, 3, 0, 0]);
        assert_eq!(simulate_run(&p, &c0, 42, &opts).unwrap(), simulate_run(&p, &c0, 42, &opts).unwrap());
    }

    #[test]
    fn heuristic_mode_agrees_on_clear_majority() {
        let p = majority();
        let opts = SimOptions { stability: Stability::Heuristic { window: None }, ..SimOptions::default() };
        let r = simulate_run(&p, &Configuration(vec![5, 1, 0, 0]), 3, &opts).unwrap();
        assert_eq!(r.outcome, RunOutcome::StabilizedTo(1));
    }

    #[test]
    fn cutoff_stops_the_run() {
        let p = majority();
        let opts = SimOptions { cutoff: 1, ..SimOptions::default() };
        let r = simulate_run(&p, &Configuration(vec![3, 3, 0, 0]), 0, &opts).unwrap();
        assert_eq!(r.interactions, 1);
        assert!(matches!(r.outcome, RunOutcome::CutoffReached(_)));
        assert!(matches!(
            simulate_run(&p, &Configuration(vec![3, 3, 0, 0]), 0, &SimOptions { cutoff: 0, ..opts }),
            Err(SimError::ZeroCutoff)
        ));
    }

    #[test]
    fn trace_text_layout() {
        let p = majority();
        let opts = SimOptions { record_trace: true, ..SimOptions::default() };
        let r = simulate_run(&p, &Configuration(vec![1, 1, 0, 0]), 5, &opts).unwrap();
        let text = r.trace_text(&p);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "1*AY 1*AN");
        assert!(lines.last().unwrap().starts_with("# interactions="));
        assert!(lines.last().unwrap().ends_with("outcome=stabilized:1 seed=5"));
    }

    #[test]
    fn ensemble_of_one() {
        let p = majority();
        let s = estimate(&p, &InputVector(vec![4, 2]), 1, 9, &SimOptions::default(), None).unwrap();
        assert_eq!((s.runs, s.correct, s.expected), (1, 1, Some(1)));
        assert_eq!(s.fraction_correct, 1.0);
    }
}
