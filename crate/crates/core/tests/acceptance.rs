//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use popproto::oracle::{
    classify, decide_up_to, inputs_up_to, Classification, Decision, OracleOptions, DEFAULT_NODE_CAP,
};
use popproto::protolib::*;
use popproto::sim::{estimate, RunOutcome, SimOptions};
use popproto::stagegraph::formulas::{primed, reach_formula, step_formula};
use popproto::stagegraph::{check_stage_graph, load_stage_graphs, CheckOptions, CheckReport, Ranking, StageGraph};
use popproto::verifier::{synthesize, SynthesisOptions};
use popproto::{Configuration, Protocol};
use presburger::{parse_formula, parse_linexpr, solve, Assignment, CmpOp, Formula, LinExpr};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn req(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn majority_graphs() -> Outcome {
    let p = Protocol::load(data("majority.json")).map_err(|e| e.to_string())?;
    req(p == gen_majority().protocol, || "shipped majority differs from the generator".into())?;
    let phi = parse_formula("x >= y").unwrap();
    let graphs = load_stage_graphs(&p, data("majority_stages.json")).map_err(|e| e.to_string())?;
    req(graphs.len() == 2, || format!("expected 2 graphs, got {}", graphs.len()))?;
    let (left, right) = (graphs[0].clone(), graphs[1].clone());
    let check = |p: &Protocol, g: &StageGraph| -> Result<CheckReport, String> {
        check_stage_graph(p, g, &phi, &CheckOptions::default()).map_err(|e| e.to_string())
    };
    for g in [&left, &right] {
        let r = check(&p, g)?;
        req(r.pass, || format!("graph for consensus {} fails: {:?}", g.target, r.failures().collect::<Vec<_>>()))?;
    }

    let no_t4 = Protocol::load(data("majority_no_t4.json")).map_err(|e| e.to_string())?;
    let mut mutants: Vec<(&str, Protocol, StageGraph)> = vec![("drop t4", no_t4, right.clone())];
    let mut g = right.clone();
    g.stages[0].constraint = parse_formula("AY >= AN").unwrap();
    mutants.push(("weaken initial stage", p.clone(), g));
    let mut g = left.clone();
    g.stages[0].rank = Some(Ranking::linear(parse_linexpr("PY").unwrap(), Some(1)));
    mutants.push(("wrong ranking", p.clone(), g));
    let mut g = left.clone();
    g.stages[0].rank.as_mut().unwrap().bound = Some(0);
    mutants.push(("bound zero", p.clone(), g));
    let mut g = left.clone();
    g.edges = vec![("S1".into(), "S3".into()), ("S2".into(), "S3".into())];
    mutants.push(("swapped edges", p.clone(), g));
    let mut g = left.clone();
    g.target = 1;
    mutants.push(("flipped consensus", p.clone(), g));

    for (name, q, g) in &mutants {
        let r = check(q, g)?;
        req(!r.pass, || format!("mutation '{name}' passes"))?;
        req(r.failures().all(|o| !o.counterexample.is_empty()), || {
            format!("mutation '{name}' lacks a counterexample")
        })?;
    }
    Ok(format!("2 graphs pass, {} mutations refuted", mutants.len()))
}

fn oracle_ground_truth() -> Outcome {
    let g = |r: Result<GeneratedProtocol, GenError>| r.map_err(|e| e.to_string());
    let mut cases: Vec<(GeneratedProtocol, u64)> = vec![(gen_majority(), 8)];
    for k in 1..=4 {
        cases.push((g(gen_flock_linear(k))?, 8));
    }
    for k in 1..=2 {
        cases.push((g(gen_threshold_power2(k))?, 9));
    }
    cases.push((g(gen_diff_power2_first(1))?, 6));
    cases.push((g(gen_diff_power2_second(2))?, 8));
    cases.push((g(gen_remainder(&[1, 1], 5, 3))?, 7));
    cases.push((g(gen_atomic_threshold(&[1, -1], 2))?, 7));
    let flock = g(gen_flock_linear(2))?;
    let rem = g(gen_remainder(&[1], 3, 0))?;
    cases.push((g(gen_product(&flock, &rem, BoolOp::And))?, 9));
    let mut inputs = 0;
    for (gp, n) in &cases {
        match decide_up_to(&gp.protocol, &gp.predicate, *n, OracleOptions::default()).map_err(|e| e.to_string())? {
            Decision::Pass { inputs: k } => inputs += k,
            d => return Err(format!("{} at N={n}: {d:?}", gp.name)),
        }
    }
    Ok(format!("{} protocols, {inputs} inputs", cases.len()))
}

fn synthesis() -> Outcome {
    let opts = SynthesisOptions::default();
    let mut stages = Vec::new();
    for gp in [gen_majority(), gen_flock_linear(3).map_err(|e| e.to_string())?] {
        let r = synthesize(&gp.protocol, &gp.predicate, &opts).map_err(|e| e.to_string())?;
        let (one, zero) =
            r.graphs.ok_or_else(|| format!("{}: {}", gp.name, r.failure.map(|f| f.to_string()).unwrap_or_default()))?;
        for g in [&one, &zero] {
            let back =
                StageGraph::from_json_value(&gp.protocol, &g.to_json(&gp.protocol)).map_err(|e| e.to_string())?;
            let rep = check_stage_graph(&gp.protocol, &back, &gp.predicate, &CheckOptions::default())
                .map_err(|e| e.to_string())?;
            req(rep.pass, || format!("{}: synthesized graph fails the checker", gp.name))?;
        }
        stages.push(format!("{} {}+{} stages", gp.name, one.stages.len(), zero.stages.len()));
    }
    let no_t4 = Protocol::load(data("majority_no_t4.json")).map_err(|e| e.to_string())?;
    let phi = parse_formula("x >= y").unwrap();
    let r = synthesize(&no_t4, &phi, &opts).map_err(|e| e.to_string())?;
    req(!r.success(), || "mutant without t4 verified".into())?;
    Ok(format!("{}; mutant rejected", stages.join(", ")))
}

fn configs_up_to(n: usize, max: u64) -> BTreeMap<u64, Vec<Configuration>> {
    fn of_size(n: usize, size: u64) -> Vec<Configuration> {
        if n == 1 {
            return vec![Configuration(vec![size])];
        }
        let mut out = Vec::new();
        for first in 0..=size {
            for rest in of_size(n - 1, size - first) {
                let mut v = vec![first];
                v.extend(rest.0);
                out.push(Configuration(v));
            }
        }
        out
    }
    (0..=max).map(|s| (s, of_size(n, s))).collect()
}

fn pinned(p: &Protocol, f: &Formula, c: &Configuration, d: &Configuration) -> Formula {
    let mut parts = vec![f.clone()];
    for (q, name) in p.states().iter().enumerate() {
        parts.push(Formula::var_cmp(name, CmpOp::Eq, c.get(q) as i64));
        parts.push(Formula::var_cmp(&primed(name), CmpOp::Eq, d.get(q) as i64));
    }
    Formula::and(parts)
}

fn within(p: &Protocol, c: &Configuration, depth: usize) -> BTreeSet<Configuration> {
    let mut seen: BTreeSet<Configuration> = [c.clone()].into();
    let mut frontier = seen.clone();
    for _ in 0..depth {
        let mut next = BTreeSet::new();
        for x in &frontier {
            for y in p.successors(x) {
                if seen.insert(y.clone()) {
                    next.insert(y);
                }
            }
        }
        frontier = next;
    }
    seen
}

const VARS: [&str; 3] = ["x", "y", "z"];

fn random_formula(rng: &mut ChaCha8Rng, depth: u32) -> Formula {
    if depth == 0 || rng.gen_bool(0.35) {
        let mut e = LinExpr::zero();
        for _ in 0..rng.gen_range(1..=3) {
            e.add_term(rng.gen_range(-5..=5), VARS[rng.gen_range(0..3)]);
        }
        return match rng.gen_range(0..6) {
            0..=3 => {
                let op = [CmpOp::Lt, CmpOp::Le, CmpOp::Eq, CmpOp::Ge, CmpOp::Gt][rng.gen_range(0..5)];
                Formula::Threshold { expr: e, op, bound: rng.gen_range(-15..=40) }
            }
            4 => {
                let m = rng.gen_range(2..=5);
                Formula::remainder(e, m, rng.gen_range(0..m)).unwrap()
            }
            _ => {
                if rng.gen_bool(0.5) {
                    Formula::True
                } else {
                    Formula::False
                }
            }
        };
    }
    let sub = |rng: &mut ChaCha8Rng| random_formula(rng, depth - 1);
    match rng.gen_range(0..4) {
        0 => Formula::Not(Box::new(sub(rng))),
        1 => Formula::And((0..rng.gen_range(2..=3)).map(|_| sub(rng)).collect()),
        2 => Formula::Or((0..rng.gen_range(2..=3)).map(|_| sub(rng)).collect()),
        _ => {
            let a = sub(rng);
            Formula::implies(a, sub(rng))
        }
    }
}

fn brute_sat(f: &Formula, max: i64) -> bool {
    let vars: Vec<String> = f.free_vars().into_iter().collect();
    let mut cur = vec![0i64; vars.len()];
    loop {
        let a: Assignment = vars.iter().cloned().zip(cur.iter().copied()).collect();
        if f.eval(&a).unwrap() {
            return true;
        }
        let mut i = 0;
        loop {
            if i == cur.len() {
                return false;
            }
            cur[i] += 1;
            if cur[i] <= max {
                break;
            }
            cur[i] = 0;
            i += 1;
        }
    }
}

fn formula_exactness() -> Outcome {
    let mut pairs = 0usize;
    for p in [gen_majority().protocol, gen_flock_linear(3).map_err(|e| e.to_string())?.protocol] {
        let groups = configs_up_to(p.num_states(), 6);
        let all: Vec<Configuration> = groups.values().flatten().cloned().collect();
        let step = step_formula(&p);
        let bad = all.par_iter().find_any(|c| {
            let succ = p.successors(c);
            all.iter().any(|d| step.eval(&pin_assignment(&p, c, d)).unwrap() != succ.contains(d))
        });
        req(bad.is_none(), || format!("step formula disagrees at {}", bad.unwrap()))?;
        pairs += all.len() * all.len();
        for bound in 1..=3 {
            let f = reach_formula(&p, bound);
            for cs in groups.values() {
                let bad = cs.par_iter().find_any(|c| {
                    let reach = within(&p, c, bound);
                    cs.iter().any(|d| {
                        solve(&pinned(&p, &f, c, d), &Default::default()).unwrap().is_sat() != reach.contains(d)
                    })
                });
                req(bad.is_none(), || format!("reach formula B={bound} disagrees at {}", bad.unwrap()))?;
                pairs += cs.len() * cs.len();
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    const MAX: i64 = 20;
    for i in 0..500 {
        let f = random_formula(&mut rng, 3);
        let mut parts = vec![f.clone()];
        parts.extend(f.free_vars().iter().map(|v| Formula::var_cmp(v, CmpOp::Le, MAX)));
        let boxed = Formula::and(parts);
        let got = solve(&boxed, &Default::default()).map_err(|e| format!("formula {i}: {e}"))?;
        req(got.is_sat() == brute_sat(&f, MAX), || format!("solver disagrees on {f}"))?;
        if let Some(w) = got.witness() {
            req(boxed.eval(w).unwrap(), || format!("bad witness for {f}"))?;
        }
    }
    Ok(format!("{pairs} configuration pairs, 500 random formulas"))
}

fn pin_assignment(p: &Protocol, c: &Configuration, d: &Configuration) -> Assignment {
    let mut a = Assignment::new();
    for (q, name) in p.states().iter().enumerate() {
        a.insert(name.clone(), c.get(q) as i64);
        a.insert(primed(name), d.get(q) as i64);
    }
    a
}

fn simulation_consistency() -> Outcome {
    let mut runs = 0usize;
    for gp in [gen_majority(), gen_diff_power2_second(1).map_err(|e| e.to_string())?] {
        let p = &gp.protocol;
        for v in inputs_up_to(p.input_vars().len(), 1, 5) {
            let c0 = p.initial_config(&v).map_err(|e| e.to_string())?;
            let b = match classify(p, &c0, DEFAULT_NODE_CAP).map_err(|e| e.to_string())? {
                Classification::Converges(b) => b,
                other => return Err(format!("{} at {v:?}: {other:?}", gp.name)),
            };
            let s = estimate(p, &v, 200, 77, &SimOptions::default(), None).map_err(|e| e.to_string())?;
            for r in &s.results {
                req(r.outcome == RunOutcome::StabilizedTo(b), || {
                    format!("{} at {v:?}: seed {} gave {:?}", gp.name, r.seed, r.outcome)
                })?;
                req(r.parallel_time * Ratio::from_integer(c0.size()) == Ratio::from_integer(r.interactions), || {
                    format!("{}: parallel time bookkeeping off for seed {}", gp.name, r.seed)
                })?;
            }
            runs += s.runs;
        }
    }
    Ok(format!("{runs} runs stabilized to the oracle verdict"))
}

fn succinctness() -> Outcome {
    for k in 1..=10u32 {
        let g = gen_threshold_power2(k).map_err(|e| e.to_string())?;
        req(g.protocol.num_states() == k as usize + 3, || {
            format!("threshold_power2({k}) has {} states", g.protocol.num_states())
        })?;
        req(g.predicate.to_string() == format!("x >= {}", 1u64 << k), || {
            format!("threshold_power2({k}) decides {}", g.predicate)
        })?;
    }
    for k in 1..=6u32 {
        let first = gen_diff_power2_first(k).map_err(|e| e.to_string())?.protocol.num_states();
        let second = gen_diff_power2_second(k).map_err(|e| e.to_string())?.protocol.num_states();
        req(second == 2 * (k as usize + 2) * 2, || format!("second protocol k={k}: {second} states"))?;
        req(first == 2 * ((1usize << k) + 1) * 2, || format!("first protocol k={k}: {first} states"))?;
    }
    Ok("state counts k+3 for 2^k; 2(k+2)2 vs 2(2^k+1)2".into())
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome, Duration); 6] = [
        (1, "stage graphs of the worked example", majority_graphs, Duration::from_secs(10)),
        (2, "oracle ground truth", oracle_ground_truth, Duration::from_secs(300)),
        (3, "stage-graph synthesis", synthesis, Duration::from_secs(120)),
        (4, "formula-layer exactness", formula_exactness, Duration::from_secs(120)),
        (5, "simulation consistency", simulation_consistency, Duration::from_secs(180)),
        (6, "succinctness witness shape", succinctness, Duration::from_secs(10)),
    ];
    let mut failed = 0;
    for (n, name, f, limit) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let took = start.elapsed();
        let result = match result {
            Ok(d) if took > limit => Err(format!("{d}, but took {took:.1?} (limit {limit:?})")),
            other => other,
        };
        match result {
            Ok(detail) => println!("criterion {n} ({name}): PASS in {took:.1?} - {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL in {took:.1?} - {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
