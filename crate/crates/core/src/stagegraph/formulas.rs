//! Presburger encodings of protocol semantics.
//!
//! Configuration variables are the state names. Successor configurations use
//! primed names (`AY'`), intermediate configurations of `reach_formula` use
//! `_r{i}_{q}`, flow-root origins use `_o_{q}`, Parikh counts `_x{t}`, and
//! predicate inputs `_i_{x}`.

use std::collections::{BTreeSet, HashMap};

use presburger::{CmpOp, Formula, LinExpr};

use crate::model::Protocol;

pub fn primed(name: &str) -> String {
    format!("{name}'")
}

pub fn reach_var(i: usize, q: &str) -> String {
    format!("_r{i}_{q}")
}

pub fn origin_var(q: &str) -> String {
    format!("_o_{q}")
}

pub fn parikh_var(t: usize) -> String {
    format!("_x{t}")
}

pub fn input_var(x: &str) -> String {
    format!("_i_{x}")
}

/// `Σ_q C(q)` over the named configuration variables.
pub fn total(vars: &[String]) -> LinExpr {
    LinExpr::from_terms(vars.iter().map(|v| (v.as_str(), 1)), 0)
}

/// At least one agent.
pub fn nonempty(p: &Protocol) -> Formula {
    Formula::ge(total(p.states()), LinExpr::constant(1))
}

fn named(p: &Protocol, f: &dyn Fn(&str) -> String) -> Vec<String> {
    p.states().iter().map(|q| f(q)).collect()
}

/// Per-state lower bounds that enable `t` on the configuration `vars`.
fn enabled_on(p: &Protocol, t: usize, vars: &[String]) -> Formula {
    let pre = p.pre_vector(t);
    Formula::and(
        pre.iter().enumerate().filter(|(_, &k)| k > 0).map(|(q, &k)| Formula::var_cmp(&vars[q], CmpOp::Ge, k as i64)),
    )
}

/// `enabled_t(C)` over the unprimed state variables.
pub fn enabled_formula(p: &Protocol, t: usize) -> Formula {
    enabled_on(p, t, p.states())
}

/// `¬enabled_t(C)` as per-state upper bounds.
pub fn disabled_formula(p: &Protocol, t: usize) -> Formula {
    let pre = p.pre_vector(t);
    Formula::or(
        pre.iter()
            .enumerate()
            .filter(|(_, &k)| k > 0)
            .map(|(q, &k)| Formula::var_cmp(&p.states()[q], CmpOp::Le, k as i64 - 1)),
    )
}

fn step_t(p: &Protocol, t: usize, from: &[String], to: &[String]) -> Formula {
    let d = p.delta(t);
    let mut parts = vec![enabled_on(p, t, from)];
    for q in 0..from.len() {
        parts.push(Formula::eq(LinExpr::var(&to[q]), LinExpr::from_terms([(from[q].as_str(), 1)], d[q])));
    }
    Formula::and(parts)
}

fn identity(from: &[String], to: &[String]) -> Formula {
    Formula::and(from.iter().zip(to).map(|(a, b)| Formula::eq(LinExpr::var(b), LinExpr::var(a))))
}

/// One-step relation over `(C, C')`: a transition fires, or `C' = C`. The
/// identity disjunct matches `successors`, which always contains `C`.
pub fn step_formula(p: &Protocol) -> Formula {
    reach1(p, p.states(), &named(p, &primed))
}

fn reach1(p: &Protocol, from: &[String], to: &[String]) -> Formula {
    let mut parts = vec![identity(from, to)];
    parts.extend((0..p.transitions().len()).map(|t| step_t(p, t, from, to)));
    Formula::or(parts)
}

/// `C →^{≤B} C'` with intermediate configurations as free auxiliary
/// variables; meaningful only under existential solving.
pub fn reach_formula(p: &Protocol, bound: usize) -> Formula {
    assert!(bound >= 1, "reach_formula needs B >= 1");
    let mut layers: Vec<Vec<String>> = vec![p.states().to_vec()];
    for i in 1..bound {
        layers.push(named(p, &|q| reach_var(i, q)));
    }
    layers.push(named(p, &primed));
    Formula::and(layers.windows(2).map(|w| reach1(p, &w[0], &w[1])))
}

/// Substitution `q ↦ q + d(q)`.
pub fn shift_map(p: &Protocol, d: &[i64]) -> HashMap<String, LinExpr> {
    p.states()
        .iter()
        .enumerate()
        .filter(|(q, _)| d[*q] != 0)
        .map(|(q, name)| (name.clone(), LinExpr::from_terms([(name.as_str(), 1)], d[q])))
        .collect()
}

/// `f(C + d)`.
pub fn shifted(p: &Protocol, f: &Formula, d: &[i64]) -> Formula {
    f.substitute(&shift_map(p, d))
}

/// Initial configurations with inputs `_i_x`: `C(q) = leaders(q) + Σ_{x ↦ q} _i_x`.
pub fn init_formula(p: &Protocol) -> Formula {
    let mut parts = Vec::new();
    for (q, name) in p.states().iter().enumerate() {
        let mut e = LinExpr::constant(p.leaders()[q] as i64);
        for (i, x) in p.input_vars().iter().enumerate() {
            if p.input_state(i) == q {
                e.add_term(1, input_var(x));
            }
        }
        parts.push(Formula::eq(LinExpr::var(name), e));
    }
    Formula::and(parts)
}

/// `φ` over `_i_x` variables.
pub fn predicate_on_inputs(p: &Protocol, phi: &Formula) -> Formula {
    let vars: BTreeSet<String> = p.input_vars().iter().cloned().collect();
    phi.rename(&|v: &str| if vars.contains(v) { input_var(v) } else { v.to_string() })
}

/// Initial configurations whose input has `φ`-value `b` and at least one agent.
pub fn initial_side(p: &Protocol, phi: &Formula, b: u8) -> Formula {
    let side = if b == 1 { phi.clone() } else { Formula::not(phi.clone()) };
    let inputs = LinExpr::from_terms(p.input_vars().iter().map(|x| (input_var(x), 1)), 0);
    Formula::and([
        init_formula(p),
        predicate_on_inputs(p, &side).normalize(),
        Formula::ge(inputs, LinExpr::constant(1)),
    ])
}

/// Some agent sits in a state whose output differs from `b`.
pub fn wrong_output(p: &Protocol, b: u8) -> Formula {
    Formula::or(
        (0..p.num_states()).filter(|&q| p.output(q) != b).map(|q| Formula::var_cmp(&p.states()[q], CmpOp::Ge, 1)),
    )
}

fn preset_hits(p: &Protocol, t: usize, set: &BTreeSet<usize>) -> bool {
    let tr = p.transitions()[t];
    set.contains(&tr.pre.0) || set.contains(&tr.pre.1)
}

fn postset_hits(p: &Protocol, t: usize, set: &BTreeSet<usize>) -> bool {
    let tr = p.transitions()[t];
    set.contains(&tr.post.0) || set.contains(&tr.post.1)
}

/// Every transition consuming from the set also produces into it.
pub fn is_trap(p: &Protocol, set: &BTreeSet<usize>) -> bool {
    !set.is_empty() && (0..p.transitions().len()).all(|t| !preset_hits(p, t, set) || postset_hits(p, t, set))
}

/// Every transition producing into the set also consumes from it.
pub fn is_siphon(p: &Protocol, set: &BTreeSet<usize>) -> bool {
    !set.is_empty() && (0..p.transitions().len()).all(|t| !postset_hits(p, t, set) || preset_hits(p, t, set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protolib::gen_majority;
    use presburger::{solve, Assignment, SolveResult};

    #[test]
    fn step_pairs() {
        let p = gen_majority().protocol;
        let f = step_formula(&p);
        assert!(f.eval(&asg(&p, &[1, 1, 0, 0], &[0, 0, 1, 1])).unwrap());
        assert!(f.eval(&asg(&p, &[1, 1, 0, 0], &[1, 1, 0, 0])).unwrap());
        assert!(f.eval(&asg(&p, &[1, 0, 0, 0], &[1, 0, 0, 0])).unwrap());
        assert!(!f.eval(&asg(&p, &[1, 0, 0, 0], &[0, 1, 0, 0])).unwrap());
        assert!(!f.eval(&asg(&p, &[1, 1, 0, 0], &[0, 0, 2, 0])).unwrap());
    }

    fn asg(p: &Protocol, c: &[i64], d: &[i64]) -> Assignment {
        let mut a = Assignment::new();
        for (q, name) in p.states().iter().enumerate() {
            a.insert(name.clone(), c[q]);
            a.insert(primed(name), d[q]);
        }
        a
    }

    #[test]
    fn reach_examples() {
        let p = gen_majority().protocol;
        let r1 = reach_formula(&p, 1);
        assert!(r1.eval(&asg(&p, &[1, 0, 0, 0], &[1, 0, 0, 0])).unwrap());
        assert!(!r1.eval(&asg(&p, &[1, 0, 0, 0], &[0, 1, 0, 0])).unwrap());

        let r2 = reach_formula(&p, 2);
        let fixed = Formula::and([
            r2,
            Formula::and(p.states().iter().zip([2, 2, 0, 0]).map(|(q, v)| Formula::var_cmp(q, CmpOp::Eq, v))),
            Formula::and(p.states().iter().zip([0, 0, 2, 2]).map(|(q, v)| Formula::var_cmp(&primed(q), CmpOp::Eq, v))),
        ]);
        assert!(matches!(solve(&fixed, &Default::default()).unwrap(), SolveResult::Sat(_)));
    }

    #[test]
    fn traps_and_siphons() {
        let p = gen_majority().protocol;
        let set = |names: &[&str]| names.iter().map(|n| p.state_index(n).unwrap()).collect::<BTreeSet<_>>();
        assert!(is_trap(&p, &set(&["AY", "AN", "PY"])));
        assert!(is_siphon(&p, &set(&["AY"])));
        assert!(!is_siphon(&p, &set(&["PY"])));
    }
}
