//! `ppverify`: command-line front end for population-protocol verification.
//!
//! Exit codes: 0 success, 1 property violated, 2 input error, 3 resource
//! budget exceeded.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use popproto::oracle::{decide_up_to, Classification, Decision, OracleError, OracleOptions, Witness, DEFAULT_NODE_CAP};
use popproto::protolib::{self, BoolOp, GenError, GeneratedProtocol};
use popproto::sim::{estimate, outcome_label, simulate_run, RunOutcome, SimError, SimOptions, Stability};
use popproto::stagegraph::{check_stage_graph, load_stage_graphs, obligation_queries, CheckOptions, StageGraphError};
use popproto::verifier::{synthesize, Failure, SynthesisOptions, VerifyError};
use popproto::{Configuration, InputVector, ModelError, Protocol};
use presburger::{export_smtlib, parse_formula, Formula};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "ppverify", version, about = "Verify, synthesize certificates for, and simulate population protocols")]
struct Cli {
    /// Print a machine-readable JSON report.
    #[arg(long, global = true)]
    json: bool,

    /// Worker threads for parallel commands (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check stage graphs against a protocol and predicate.
    Check(CheckArgs),
    /// Synthesize and validate stage graphs for both sides of the predicate.
    Verify(VerifyArgs),
    /// Decide correctness exhaustively for all inputs up to a population size.
    Oracle(OracleArgs),
    /// Run seeded simulations under the uniform random scheduler.
    Simulate(SimulateArgs),
    /// Write a generated protocol and its predicate.
    Gen(GenArgs),
    /// Export a formula or every stage-graph obligation as SMT-LIB2.
    ExportSmt(ExportArgs),
}

#[derive(Args, Debug)]
struct ProtocolArg {
    /// Protocol JSON file.
    #[arg(long)]
    protocol: PathBuf,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[command(flatten)]
    protocol: ProtocolArg,
    /// Stage-graph JSON file (one graph, an array, or {"graphs": [...]}).
    #[arg(long)]
    stage_graphs: PathBuf,
    /// Predicate over the input variables; `@file` reads it from a file.
    #[arg(long)]
    predicate: String,
    /// Largest step bound tried for rankings without an explicit bound.
    #[arg(long, default_value_t = 3)]
    max_bound: u32,
    /// Report counterexamples as found instead of shrinking them.
    #[arg(long)]
    no_minimize: bool,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    protocol: ProtocolArg,
    #[arg(long)]
    predicate: String,
    /// Maximal number of stages per graph.
    #[arg(long, default_value_t = 200)]
    node_budget: usize,
    /// Add single-state trap and siphon closures to the flow roots up front.
    #[arg(long)]
    strengthen: bool,
    /// Write the synthesized graphs here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// On failure, search for a concrete counterexample up to this many agents (0 disables).
    #[arg(long, default_value_t = 6)]
    oracle_agents: u64,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    protocol: ProtocolArg,
    #[arg(long)]
    predicate: String,
    #[arg(long)]
    max_agents: u64,
    /// Largest reachability graph explored per input.
    #[arg(long, default_value_t = DEFAULT_NODE_CAP)]
    node_cap: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Exact,
    Heuristic,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    protocol: ProtocolArg,
    /// Input vector, e.g. `x=3,y=2` or `3,2`.
    #[arg(long, conflicts_with = "config")]
    input: Option<String>,
    /// Initial configuration, e.g. `AY:3,AN:1` or `3,1,0,0`.
    #[arg(long)]
    config: Option<String>,
    /// Judge runs against this predicate instead of the oracle's verdict.
    #[arg(long)]
    predicate: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    /// Maximal number of interactions per run.
    #[arg(long, default_value_t = 10_000_000)]
    cutoff: u64,
    #[arg(long, value_enum, default_value_t = Mode::Exact)]
    mode: Mode,
    /// Consensus persistence window for heuristic mode (default 50·n²).
    #[arg(long)]
    window: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_NODE_CAP)]
    node_cap: usize,
    /// Write the trace of the first run to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Generator {
    Majority,
    FlockLinear,
    ThresholdPower2,
    DiffPower2First,
    DiffPower2Second,
    Remainder,
    AtomicThreshold,
    Product,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Op {
    And,
    Or,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(value_enum)]
    generator: Generator,
    #[arg(long)]
    k: Option<u32>,
    /// Comma-separated coefficients, e.g. `1,-1`.
    #[arg(long, allow_hyphen_values = true)]
    coeffs: Option<String>,
    #[arg(long)]
    modulus: Option<i64>,
    #[arg(long)]
    residue: Option<i64>,
    #[arg(long, allow_hyphen_values = true)]
    bound: Option<i64>,
    /// Product operands as `name[:param...]`, e.g. `flock-linear:2` or `remainder:1,1:3:0`.
    #[arg(long)]
    left: Option<String>,
    #[arg(long)]
    right: Option<String>,
    #[arg(long, value_enum, default_value_t = Op::And)]
    op: Op,
    /// Protocol output file; the predicate goes next to it with extension `.predicate`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// A single formula to export.
    #[arg(long, conflicts_with_all = ["protocol", "stage_graphs"])]
    formula: Option<String>,
    #[arg(long, requires_all = ["stage_graphs", "predicate"])]
    protocol: Option<PathBuf>,
    #[arg(long)]
    stage_graphs: Option<PathBuf>,
    #[arg(long)]
    predicate: Option<String>,
    /// Write one `.smt2` file per obligation into this directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Terminal result of a command.
struct Report {
    code: u8,
    text: String,
    json: Value,
}

struct Fail {
    code: u8,
    msg: String,
}

impl Fail {
    fn input(msg: impl Into<String>) -> Self {
        Fail { code: 2, msg: msg.into() }
    }

    fn budget(msg: impl Into<String>) -> Self {
        Fail { code: 3, msg: msg.into() }
    }
}

impl From<ModelError> for Fail {
    fn from(e: ModelError) -> Self {
        Fail::input(e.to_string())
    }
}

impl From<presburger::Error> for Fail {
    fn from(e: presburger::Error) -> Self {
        match e {
            presburger::Error::BudgetExhausted(_) => Fail::budget(e.to_string()),
            other => Fail::input(other.to_string()),
        }
    }
}

impl From<StageGraphError> for Fail {
    fn from(e: StageGraphError) -> Self {
        match e {
            StageGraphError::Solver(s) => s.into(),
            StageGraphError::BoundTooLarge { .. } => Fail::budget(e.to_string()),
            other => Fail::input(other.to_string()),
        }
    }
}

impl From<VerifyError> for Fail {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::Solver(s) => s.into(),
            VerifyError::StageGraph(s) => s.into(),
        }
    }
}

impl From<OracleError> for Fail {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::NodeCap(_) => Fail::budget(e.to_string()),
            OracleError::Model(m) => m.into(),
            OracleError::Predicate(p) => p.into(),
        }
    }
}

impl From<SimError> for Fail {
    fn from(e: SimError) -> Self {
        match e {
            SimError::NodeCap(_) => Fail::budget(e.to_string()),
            SimError::Oracle(o) => o.into(),
            other => Fail::input(other.to_string()),
        }
    }
}

impl From<GenError> for Fail {
    fn from(e: GenError) -> Self {
        Fail::input(e.to_string())
    }
}

fn io_fail(path: &Path, e: std::io::Error) -> Fail {
    Fail::input(format!("{}: {e}", path.display()))
}

fn load_protocol(path: &Path) -> Result<Protocol, Fail> {
    Protocol::load(path).map_err(|e| Fail::input(format!("{}: {e}", path.display())))
}

fn read_predicate(text: &str, p: Option<&Protocol>) -> Result<Formula, Fail> {
    let source = match text.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path).map_err(|e| io_fail(Path::new(path), e))?,
        None => text.to_string(),
    };
    let f = parse_formula(source.trim()).map_err(|e| Fail::input(format!("predicate: {e}")))?;
    if let Some(p) = p {
        if let Some(v) = f.free_vars().into_iter().find(|v| !p.input_vars().contains(v)) {
            return Err(Fail::input(format!("predicate: '{v}' is not an input variable of the protocol")));
        }
    }
    Ok(f)
}

fn configs_text(p: &Protocol, cs: &[Configuration]) -> String {
    cs.iter().map(|c| p.format_config(c)).collect::<Vec<_>>().join(" -> ")
}

fn cmd_check(a: &CheckArgs) -> Result<Report, Fail> {
    let p = load_protocol(&a.protocol.protocol)?;
    let phi = read_predicate(&a.predicate, Some(&p))?;
    let graphs = load_stage_graphs(&p, &a.stage_graphs)?;
    let opts = CheckOptions { max_bound: a.max_bound, minimize: !a.no_minimize, ..CheckOptions::default() };
    let mut text = String::new();
    let mut reports = Vec::new();
    let mut pass = true;
    for (i, g) in graphs.iter().enumerate() {
        let r = check_stage_graph(&p, g, &phi, &opts)?;
        pass &= r.pass;
        text.push_str(&format!("graph {i} (consensus {}): {}\n", g.target, if r.pass { "pass" } else { "FAIL" }));
        for o in &r.obligations {
            let mut line = format!("  {} {} [{}]", if o.pass { "ok  " } else { "FAIL" }, o.id, o.kind.name());
            if !o.detail.is_empty() {
                line.push_str(&format!(" {}", o.detail));
            }
            if !o.counterexample.is_empty() {
                line.push_str(&format!(" counterexample: {}", configs_text(&p, &o.counterexample)));
            }
            text.push_str(&line);
            text.push('\n');
        }
        let mut j = r.to_json(&p);
        j["target"] = json!(g.target);
        reports.push(j);
    }
    text.push_str(if pass { "all stage graphs pass\n" } else { "some obligations fail\n" });
    Ok(Report { code: if pass { 0 } else { 1 }, text, json: json!({ "pass": pass, "graphs": reports }) })
}

fn decision_json(p: &Protocol, d: &Decision) -> Value {
    match d {
        Decision::Pass { inputs } => json!({ "pass": true, "inputs": inputs }),
        Decision::CounterExample { input, expected, got } => json!({
            "pass": false,
            "input": p.input_vars().iter().zip(&input.0).map(|(k, v)| (k.clone(), json!(v))).collect::<serde_json::Map<_, _>>(),
            "expected": expected,
            "got": classification_json(p, got),
        }),
    }
}

fn classification_json(p: &Protocol, c: &Classification) -> Value {
    match c {
        Classification::Converges(b) => json!({ "converges": b }),
        Classification::NotWellSpecified(Witness::MixedBottom(cs)) => json!({
            "notWellSpecified": "mixed-bottom",
            "witness": cs.iter().map(|c| p.config_map(c)).collect::<Vec<_>>(),
        }),
        Classification::NotWellSpecified(Witness::Conflicting { zero, one }) => json!({
            "notWellSpecified": "conflicting-bottoms",
            "witness": [p.config_map(zero), p.config_map(one)],
        }),
    }
}

fn classification_text(p: &Protocol, c: &Classification) -> String {
    match c {
        Classification::Converges(b) => format!("converges to {b}"),
        Classification::NotWellSpecified(Witness::MixedBottom(cs)) => {
            format!("not well specified: bottom component with {}", configs_text(p, cs))
        }
        Classification::NotWellSpecified(Witness::Conflicting { zero, one }) => format!(
            "not well specified: bottom components with consensus 0 ({}) and 1 ({})",
            p.format_config(zero),
            p.format_config(one)
        ),
    }
}

fn input_text(p: &Protocol, v: &InputVector) -> String {
    p.input_vars().iter().zip(&v.0).map(|(x, n)| format!("{x}={n}")).collect::<Vec<_>>().join(",")
}

fn decision_text(p: &Protocol, d: &Decision) -> String {
    match d {
        Decision::Pass { inputs } => format!("Pass ({inputs} inputs)"),
        Decision::CounterExample { input, expected, got } => format!(
            "CounterExample: input {} expected {expected}, got {}",
            input_text(p, input),
            classification_text(p, got)
        ),
    }
}

fn cmd_oracle(a: &OracleArgs) -> Result<Report, Fail> {
    let p = load_protocol(&a.protocol.protocol)?;
    let phi = read_predicate(&a.predicate, Some(&p))?;
    if a.max_agents < 1 {
        return Err(Fail::input("--max-agents must be at least 1"));
    }
    let d = decide_up_to(&p, &phi, a.max_agents, OracleOptions { node_cap: a.node_cap, include_zero: false })?;
    let code = if matches!(d, Decision::Pass { .. }) { 0 } else { 1 };
    Ok(Report { code, text: decision_text(&p, &d) + "\n", json: decision_json(&p, &d) })
}

fn cmd_verify(a: &VerifyArgs) -> Result<Report, Fail> {
    let p = load_protocol(&a.protocol.protocol)?;
    let phi = read_predicate(&a.predicate, Some(&p))?;
    let opts = SynthesisOptions { node_budget: a.node_budget, strengthen: a.strengthen, ..SynthesisOptions::default() };
    let r = synthesize(&p, &phi, &opts)?;
    let mut text: String = r.trace.iter().map(|l| format!("{l}\n")).collect();
    let mut j = json!({ "success": r.success(), "trace": r.trace });
    if let Some((one, zero)) = &r.graphs {
        let graphs = json!({ "graphs": [one.to_json(&p), zero.to_json(&p)] });
        if let Some(out) = &a.out {
            let body = serde_json::to_string_pretty(&graphs).expect("serializable");
            std::fs::write(out, body).map_err(|e| io_fail(out, e))?;
            text.push_str(&format!("stage graphs written to {}\n", out.display()));
        }
        j["graphs"] = graphs["graphs"].clone();
        text.push_str("verified: the protocol computes the predicate\n");
        return Ok(Report { code: 0, text, json: j });
    }
    let failure = r.failure.as_ref().expect("failed synthesis carries a failure");
    text.push_str(&format!("not verified: {failure}\n"));
    j["failure"] = json!(failure.to_string());
    if let Failure::Validation { report, .. } = failure {
        for o in report.failures() {
            text.push_str(&format!("  FAIL {} counterexample: {}\n", o.id, configs_text(&p, &o.counterexample)));
        }
        j["report"] = report.to_json(&p);
    }
    if a.oracle_agents > 0 {
        let opts = OracleOptions { node_cap: 200_000, include_zero: false };
        match decide_up_to(&p, &phi, a.oracle_agents, opts) {
            Ok(d) => {
                text.push_str(&format!("oracle up to {} agents: {}\n", a.oracle_agents, decision_text(&p, &d)));
                j["oracle"] = decision_json(&p, &d);
            }
            Err(e) => text.push_str(&format!("oracle up to {} agents: {e}\n", a.oracle_agents)),
        }
    }
    let code = if matches!(failure, Failure::NodeBudget { .. }) { 3 } else { 1 };
    Ok(Report { code, text, json: j })
}

fn parse_input(p: &Protocol, s: &str) -> Result<InputVector, Fail> {
    let vars = p.input_vars();
    let mut v = vec![0u64; vars.len()];
    let parts: Vec<&str> = s.split(',').map(str::trim).filter(|x| !x.is_empty()).collect();
    if parts.iter().all(|x| !x.contains('=') && !x.contains(':')) {
        if parts.len() != vars.len() {
            return Err(Fail::input(format!("--input: expected {} values, got {}", vars.len(), parts.len())));
        }
        for (i, x) in parts.iter().enumerate() {
            v[i] = x.parse().map_err(|_| Fail::input(format!("--input: bad count '{x}'")))?;
        }
        return Ok(InputVector(v));
    }
    for part in parts {
        let (name, n) = part
            .split_once(['=', ':'])
            .ok_or_else(|| Fail::input(format!("--input: expected var=count, got '{part}'")))?;
        let i = vars
            .iter()
            .position(|x| x == name.trim())
            .ok_or_else(|| Fail::input(format!("--input: unknown input variable '{}'", name.trim())))?;
        v[i] = n.trim().parse().map_err(|_| Fail::input(format!("--input: bad count '{n}'")))?;
    }
    Ok(InputVector(v))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<Report, Fail> {
    let p = load_protocol(&a.protocol.protocol)?;
    let phi = a.predicate.as_deref().map(|s| read_predicate(s, Some(&p))).transpose()?;
    let stability = match a.mode {
        Mode::Exact => Stability::Exact,
        Mode::Heuristic => Stability::Heuristic { window: a.window },
    };
    let opts = SimOptions { cutoff: a.cutoff, stability, record_trace: a.trace.is_some(), node_cap: a.node_cap };
    let (results, expected, stats) = match (&a.input, &a.config) {
        (Some(s), _) => {
            let v = parse_input(&p, s)?;
            let st = estimate(&p, &v, a.runs.max(1), a.seed, &opts, phi.as_ref())?;
            let stats = json!({
                "runs": st.runs,
                "stabilized": st.stabilized,
                "expected": st.expected,
                "correct": st.correct,
                "fractionCorrect": st.fraction_correct,
                "meanParallelTime": st.mean_parallel_time,
                "seed": st.seed,
            });
            (st.results, st.expected, Some(stats))
        }
        (None, Some(s)) => {
            let c0 = p.parse_config(s)?;
            let results = (0..a.runs.max(1))
                .map(|i| simulate_run(&p, &c0, popproto::sim::derived_seed(a.seed, i), &opts))
                .collect::<Result<Vec<_>, _>>()?;
            (results, None, None)
        }
        (None, None) => return Err(Fail::input("simulate needs --input or --config")),
    };
    if let (Some(path), Some(first)) = (&a.trace, results.first()) {
        std::fs::write(path, first.trace_text(&p)).map_err(|e| io_fail(path, e))?;
    }
    let mut text = String::new();
    for r in &results {
        text.push_str(&format!(
            "seed {}: {} after {} interactions (parallel time {}), final {}\n",
            r.seed,
            outcome_label(r.outcome),
            r.interactions,
            r.parallel_time,
            p.format_config(&r.final_config)
        ));
    }
    let wrong = results.iter().any(|r| match (r.outcome, expected) {
        (RunOutcome::StabilizedTo(b), Some(e)) => b != e,
        _ => false,
    });
    let cut = results.iter().any(|r| matches!(r.outcome, RunOutcome::CutoffReached(_)));
    if let Some(s) = &stats {
        text.push_str(&format!(
            "{} of {} runs correct (expected {})\n",
            s["correct"],
            s["runs"],
            expected.map_or("none".to_string(), |b| b.to_string())
        ));
    }
    let runs: Vec<Value> = results
        .iter()
        .map(|r| {
            json!({
                "seed": r.seed,
                "outcome": outcome_label(r.outcome),
                "interactions": r.interactions,
                "parallelTime": r.parallel_time.to_string(),
                "finalConfig": p.config_map(&r.final_config),
            })
        })
        .collect();
    let code = if wrong {
        1
    } else if cut {
        3
    } else {
        0
    };
    Ok(Report { code, text, json: json!({ "runs": runs, "stats": stats }) })
}

fn coeffs(s: &str) -> Result<Vec<i64>, Fail> {
    s.split(',').map(|x| x.trim().parse().map_err(|_| Fail::input(format!("bad coefficient '{x}'")))).collect()
}

fn need<T: Copy>(v: Option<T>, name: &str) -> Result<T, Fail> {
    v.ok_or_else(|| Fail::input(format!("missing --{name}")))
}

/// Operand descriptor `name[:param...]` for products.
fn operand(desc: &str) -> Result<GeneratedProtocol, Fail> {
    let parts: Vec<&str> = desc.split(':').collect();
    let int = |i: usize| -> Result<i64, Fail> {
        parts
            .get(i)
            .ok_or_else(|| Fail::input(format!("operand '{desc}': missing parameter {i}")))?
            .parse()
            .map_err(|_| Fail::input(format!("operand '{desc}': bad parameter {i}")))
    };
    let k = |i: usize| -> Result<u32, Fail> {
        u32::try_from(int(i)?).map_err(|_| Fail::input(format!("operand '{desc}': parameter {i} must be nonnegative")))
    };
    let list = |i: usize| -> Result<Vec<i64>, Fail> {
        coeffs(parts.get(i).ok_or_else(|| Fail::input(format!("operand '{desc}': missing coefficients")))?)
    };
    Ok(match parts[0] {
        "majority" => protolib::gen_majority(),
        "flock-linear" => protolib::gen_flock_linear(k(1)?)?,
        "threshold-power2" => protolib::gen_threshold_power2(k(1)?)?,
        "diff-power2-first" => protolib::gen_diff_power2_first(k(1)?)?,
        "diff-power2-second" => protolib::gen_diff_power2_second(k(1)?)?,
        "remainder" => protolib::gen_remainder(&list(1)?, int(2)?, int(3)?)?,
        "atomic-threshold" => protolib::gen_atomic_threshold(&list(1)?, int(2)?)?,
        other => return Err(Fail::input(format!("unknown operand generator '{other}'"))),
    })
}

fn cmd_gen(a: &GenArgs) -> Result<Report, Fail> {
    let g = match a.generator {
        Generator::Majority => protolib::gen_majority(),
        Generator::FlockLinear => protolib::gen_flock_linear(need(a.k, "k")?)?,
        Generator::ThresholdPower2 => protolib::gen_threshold_power2(need(a.k, "k")?)?,
        Generator::DiffPower2First => protolib::gen_diff_power2_first(need(a.k, "k")?)?,
        Generator::DiffPower2Second => protolib::gen_diff_power2_second(need(a.k, "k")?)?,
        Generator::Remainder => protolib::gen_remainder(
            &coeffs(a.coeffs.as_deref().ok_or_else(|| Fail::input("missing --coeffs"))?)?,
            need(a.modulus, "modulus")?,
            need(a.residue, "residue")?,
        )?,
        Generator::AtomicThreshold => protolib::gen_atomic_threshold(
            &coeffs(a.coeffs.as_deref().ok_or_else(|| Fail::input("missing --coeffs"))?)?,
            need(a.bound, "bound")?,
        )?,
        Generator::Product => {
            let l = operand(a.left.as_deref().ok_or_else(|| Fail::input("missing --left"))?)?;
            let r = operand(a.right.as_deref().ok_or_else(|| Fail::input("missing --right"))?)?;
            let op = match a.op {
                Op::And => BoolOp::And,
                Op::Or => BoolOp::Or,
            };
            protolib::gen_product(&l, &r, op)?
        }
    };
    let protocol = g.protocol.to_json();
    let predicate = g.predicate.to_string();
    let mut text = format!("{}: {} states, predicate {predicate}\n", g.name, g.protocol.num_states());
    let mut j = json!({
        "name": g.name,
        "states": g.protocol.num_states(),
        "statesFormula": g.states_formula,
        "predicate": predicate,
    });
    match &a.out {
        Some(out) => {
            let body = serde_json::to_string_pretty(&protocol).expect("serializable");
            std::fs::write(out, body + "\n").map_err(|e| io_fail(out, e))?;
            let side = out.with_extension("predicate");
            std::fs::write(&side, format!("{predicate}\n")).map_err(|e| io_fail(&side, e))?;
            text.push_str(&format!("wrote {} and {}\n", out.display(), side.display()));
            j["files"] = json!([out.display().to_string(), side.display().to_string()]);
        }
        None => {
            text.push_str(&serde_json::to_string_pretty(&protocol).expect("serializable"));
            text.push('\n');
            j["protocol"] = protocol;
        }
    }
    Ok(Report { code: 0, text, json: j })
}

fn cmd_export(a: &ExportArgs) -> Result<Report, Fail> {
    let scripts: Vec<(String, String)> = match (&a.formula, &a.protocol) {
        (Some(f), _) => vec![("formula".into(), export_smtlib(&read_predicate(f, None)?))],
        (None, Some(path)) => {
            let p = load_protocol(path)?;
            let phi = read_predicate(a.predicate.as_deref().expect("required by clap"), Some(&p))?;
            let graphs = load_stage_graphs(&p, a.stage_graphs.as_ref().expect("required by clap"))?;
            let mut out = Vec::new();
            for (i, g) in graphs.iter().enumerate() {
                for (id, q) in obligation_queries(&p, g, &phi)? {
                    let name = format!("g{i}-{}", id.replace(':', "-"));
                    out.push((name, export_smtlib(&q)));
                }
            }
            out
        }
        (None, None) => return Err(Fail::input("export-smt needs --formula or --protocol/--stage-graphs/--predicate")),
    };
    let mut text = String::new();
    match &a.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))?;
            for (name, body) in &scripts {
                let path = dir.join(format!("{name}.smt2"));
                std::fs::write(&path, body).map_err(|e| io_fail(&path, e))?;
                text.push_str(&format!("{}\n", path.display()));
            }
        }
        None => {
            for (name, body) in &scripts {
                text.push_str(&format!("; {name}\n{body}\n"));
            }
        }
    }
    let names: Vec<&str> = scripts.iter().map(|(n, _)| n.as_str()).collect();
    let j = json!({ "scripts": names });
    Ok(Report { code: 0, text, json: j })
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Check(_) => "check",
        Command::Verify(_) => "verify",
        Command::Oracle(_) => "oracle",
        Command::Simulate(_) => "simulate",
        Command::Gen(_) => "gen",
        Command::ExportSmt(_) => "export-smt",
    }
}

fn apply_solver_budget() -> Result<(), Fail> {
    if let Ok(v) = std::env::var("PPVERIFY_SOLVER_BUDGET") {
        let n: u64 = v
            .trim()
            .parse()
            .map_err(|_| Fail::input(format!("PPVERIFY_SOLVER_BUDGET: expected a node count, got '{v}'")))?;
        presburger::set_default_budget(n);
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<Report, Fail> {
    apply_solver_budget()?;
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Fail::input(format!("--jobs: {e}")))?;
    }
    match &cli.command {
        Command::Check(a) => cmd_check(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Gen(a) => cmd_gen(a),
        Command::ExportSmt(a) => cmd_export(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let name = command_name(&cli.command);
    let (code, text, body) = match run(&cli) {
        Ok(r) => (r.code, r.text, r.json),
        Err(f) => {
            let text = format!("error: {}\n", f.msg);
            (f.code, text, json!({ "error": f.msg }))
        }
    };
    if cli.json {
        let mut out = json!({ "schema": 1, "command": name, "exit": code });
        if let (Value::Object(o), Value::Object(b)) = (&mut out, body) {
            o.extend(b);
        }
        println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
    } else if code == 2 || (code == 3 && text.starts_with("error:")) {
        eprint!("{text}");
    } else {
        print!("{text}");
    }
    ExitCode::from(code)
}
