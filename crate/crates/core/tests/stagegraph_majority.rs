use std::path::PathBuf;

use popproto::stagegraph::{
    check_node, check_stage_graph, load_stage_graphs, CheckOptions, CheckReport, ObligationKind, Outcome, Ranking,
    StageGraph,
};
use popproto::{Configuration, Protocol};
use presburger::{parse_formula, parse_linexpr, Formula};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn majority() -> Protocol {
    Protocol::load(data("majority.json")).unwrap()
}

fn graphs(p: &Protocol) -> (StageGraph, StageGraph) {
    let mut g = load_stage_graphs(p, data("majority_stages.json")).unwrap();
    assert_eq!(g.len(), 2);
    let right = g.pop().unwrap();
    let left = g.pop().unwrap();
    (left, right)
}

fn phi() -> Formula {
    parse_formula("x >= y").unwrap()
}

fn check(p: &Protocol, g: &StageGraph) -> CheckReport {
    check_stage_graph(p, g, &phi(), &CheckOptions::default()).unwrap()
}

fn failing(report: &CheckReport) -> Vec<(ObligationKind, String, Vec<Configuration>)> {
    report.failures().map(|o| (o.kind, o.stages[0].clone(), o.counterexample.clone())).collect()
}

fn assert_fails_with_counterexample(report: &CheckReport) {
    assert!(!report.pass);
    for o in report.failures() {
        assert!(!o.counterexample.is_empty(), "{} has no counterexample", o.id);
    }
}

#[test]
fn shipped_protocol_matches_generator() {
    assert_eq!(majority(), popproto::protolib::gen_majority().protocol);
}

#[test]
fn both_graphs_pass() {
    let p = majority();
    let (left, right) = graphs(&p);
    let l = check(&p, &left);
    assert!(l.pass, "{:?}", failing(&l));
    let r = check(&p, &right);
    assert!(r.pass, "{:?}", failing(&r));
    assert!(r.obligations.iter().any(|o| o.kind == ObligationKind::WeakDecrease && o.detail == "B = 1"));
}

#[test]
fn second_stage_decreases_despite_t4() {
    let p = majority();
    let (left, _) = graphs(&p);
    let s2 = left.stage("S2").unwrap();
    let s3 = left.stage("S3").unwrap();
    let (out, b) = check_node(&p, s2, &[s3], &CheckOptions::default()).unwrap();
    assert_eq!((out, b), (Outcome::Holds, 1));
}

#[test]
fn mutation_drop_t4() {
    let p = Protocol::load(data("majority_no_t4.json")).unwrap();
    let (_, right) = graphs(&p);
    let r = check(&p, &right);
    assert_fails_with_counterexample(&r);
    let f = failing(&r);
    assert!(f
        .iter()
        .any(|(k, s, c)| *k == ObligationKind::WeakDecrease && s == "S3" && c[0] == Configuration(vec![0, 0, 1, 1])));
}

#[test]
fn mutation_weaken_right_initial_stage() {
    let p = majority();
    let (_, mut right) = graphs(&p);
    right.stages[0].constraint = parse_formula("AY >= AN").unwrap();
    let r = check(&p, &right);
    assert_fails_with_counterexample(&r);
    let f = failing(&r);
    assert!(f.iter().all(|(k, s, _)| *k == ObligationKind::WeakDecrease && s == "S1"), "{f:?}");
    let ce = &f[0].2[0];
    assert_eq!(ce, &Configuration(vec![0, 0, 0, 1]));
    // The witness sits in the weakened stage, outside both children, and is stuck.
    assert!(p.successors(ce).iter().all(|c| c == ce));
}

#[test]
fn mutation_wrong_ranking() {
    let p = majority();
    let (mut left, _) = graphs(&p);
    left.stages[0].rank = Some(Ranking::linear(parse_linexpr("PY").unwrap(), Some(1)));
    let r = check(&p, &left);
    assert_fails_with_counterexample(&r);
    let f = failing(&r);
    assert_eq!(f.len(), 1, "{f:?}");
    let (kind, stage, ce) = &f[0];
    assert_eq!((*kind, stage.as_str()), (ObligationKind::WeakDecrease, "S1"));
    // No one-step successor decreases PY.
    let c = &ce[0];
    let py = p.state_index("PY").unwrap();
    assert!(p.successors(c).iter().all(|d| d.get(py) >= c.get(py)));
    let s1 = left.stage("S1").unwrap();
    let fixed = Formula::and(
        p.states().iter().zip(&c.0).map(|(q, &v)| presburger::Formula::var_cmp(q, presburger::CmpOp::Eq, v as i64)),
    );
    let mut pinned = s1.clone();
    pinned.constraint = Formula::and([s1.constraint.clone(), fixed]);
    let (out, _) = check_node(&p, &pinned, &[left.stage("S2").unwrap()], &CheckOptions::default()).unwrap();
    assert!(!out.holds());

    // The documented witness (1, 2, 0, 0) is also a genuine counterexample.
    let named = Configuration(vec![1, 2, 0, 0]);
    assert!(p.successors(&named).iter().all(|d| d.get(py) >= named.get(py)));
}

#[test]
fn mutation_bound_zero() {
    let p = majority();
    let (mut left, _) = graphs(&p);
    left.stages[0].rank.as_mut().unwrap().bound = Some(0);
    let r = check(&p, &left);
    assert_fails_with_counterexample(&r);
    let f = failing(&r);
    assert!(f.iter().all(|(k, s, _)| *k == ObligationKind::WeakDecrease && s == "S1"));
}

#[test]
fn mutation_swap_child_edges() {
    let p = majority();
    let (mut left, _) = graphs(&p);
    left.edges = vec![("S1".into(), "S3".into()), ("S2".into(), "S3".into())];
    let r = check(&p, &left);
    assert_fails_with_counterexample(&r);
    let f = failing(&r);
    assert!(
        f.iter().any(|(k, s, c)| {
            *k == ObligationKind::WeakDecrease && s == "S1" && {
                let cfg = &c[0];
                // In S1, not in S3, and without AY no transition lowers AY + AN.
                cfg.get(0) == 0 && cfg.get(1) > 0 && cfg.get(2) > 0
            }
        }),
        "{f:?}"
    );
}

#[test]
fn mutation_flip_bottom_consensus() {
    let p = majority();
    let (mut left, _) = graphs(&p);
    left.target = 1;
    let r = check(&p, &left);
    assert_fails_with_counterexample(&r);
    let f = failing(&r);
    assert!(f
        .iter()
        .any(|(k, s, c)| *k == ObligationKind::BottomConsensus && s == "S3" && p.consensus_of(&c[0]) != Some(1)));
}

#[test]
fn malformed_graphs_are_rejected() {
    let p = majority();
    let (mut left, _) = graphs(&p);
    left.edges.push(("S3".into(), "S1".into()));
    assert!(check_stage_graph(&p, &left, &phi(), &CheckOptions::default()).is_err());

    let (mut left, _) = graphs(&p);
    left.stages[1].rank = None;
    assert!(check_stage_graph(&p, &left, &phi(), &CheckOptions::default()).is_err());
}

#[test]
fn default_bound_and_sequence_cap() {
    let p = majority();
    let (mut left, _) = graphs(&p);
    left.stages[0].rank.as_mut().unwrap().bound = None;
    assert!(check(&p, &left).pass);

    left.stages[0].rank.as_mut().unwrap().bound = Some(9);
    let err = check_stage_graph(&p, &left, &phi(), &CheckOptions::default()).unwrap_err();
    assert!(matches!(err, popproto::stagegraph::StageGraphError::BoundTooLarge { bound: 9, .. }));
}

#[test]
fn piecewise_ranking() {
    let p = majority();
    let (mut left, _) = graphs(&p);
    left.stages[1].rank = Some(Ranking {
        pieces: vec![
            (parse_formula("PY >= 3").unwrap(), parse_linexpr("PY").unwrap()),
            (parse_formula("PY <= 2").unwrap(), parse_linexpr("PY").unwrap()),
        ],
        bound: Some(1),
    });
    assert!(check(&p, &left).pass);

    left.stages[1].rank.as_mut().unwrap().pieces[1].0 = parse_formula("PY <= 3").unwrap();
    let r = check(&p, &left);
    assert!(r.failures().any(|o| o.kind == ObligationKind::RankingWellFormed));
}

#[test]
fn json_round_trip() {
    let p = majority();
    let (left, right) = graphs(&p);
    for g in [left, right] {
        let v = g.to_json(&p);
        let back = StageGraph::from_json_value(&p, &v).unwrap();
        assert_eq!(back, g);
    }
}
