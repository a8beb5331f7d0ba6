//! Generators for concrete protocols, each paired with the predicate it decides.

use std::collections::BTreeMap;

use presburger::{CmpOp, Formula, LinExpr};
use thiserror::Error;

use crate::model::{ModelError, Protocol};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone)]
pub struct GeneratedProtocol {
    pub name: String,
    pub protocol: Protocol,
    pub predicate: Formula,
    /// Closed form of the state count in the generator parameters.
    pub states_formula: String,
    /// Value of `states_formula` at the given parameters.
    pub declared_states: usize,
}

/// Accumulates a protocol by state name; transitions that leave the
/// multiset of states unchanged are dropped.
struct Builder {
    states: Vec<String>,
    outputs: BTreeMap<String, u8>,
    inputs: Vec<(String, String)>,
    transitions: Vec<[String; 4]>,
}

impl Builder {
    fn new() -> Self {
        Builder { states: Vec::new(), outputs: BTreeMap::new(), inputs: Vec::new(), transitions: Vec::new() }
    }

    fn state(&mut self, name: impl Into<String>, out: u8) {
        let name = name.into();
        self.outputs.insert(name.clone(), out);
        self.states.push(name);
    }

    fn input(&mut self, var: &str, state: impl Into<String>) {
        self.inputs.push((var.to_string(), state.into()));
    }

    fn rule(&mut self, a: &str, b: &str, c: &str, d: &str) {
        let same = (a == c && b == d) || (a == d && b == c);
        if !same {
            self.transitions.push([a.into(), b.into(), c.into(), d.into()]);
        }
    }

    fn build(self) -> Result<Protocol, ModelError> {
        Protocol::new(self.states, &self.outputs, &self.inputs, &BTreeMap::new(), &self.transitions)
    }
}

fn finish(
    name: String,
    protocol: Protocol,
    predicate: Formula,
    states_formula: &str,
    declared_states: usize,
) -> GeneratedProtocol {
    debug_assert_eq!(protocol.num_states(), declared_states, "{name}");
    GeneratedProtocol { name, protocol, predicate, states_formula: states_formula.into(), declared_states }
}

/// Input variable names for `n` coefficients: `x, y, z` or `x1..xn`.
pub fn input_names(n: usize) -> Vec<String> {
    if n <= 3 {
        ["x", "y", "z"][..n].iter().map(|s| s.to_string()).collect()
    } else {
        (1..=n).map(|i| format!("x{i}")).collect()
    }
}

/// Four-state majority: active/passive × blue/red, deciding `x >= y`.
pub fn gen_majority() -> GeneratedProtocol {
    let mut b = Builder::new();
    b.state("AY", 1);
    b.state("AN", 0);
    b.state("PY", 1);
    b.state("PN", 0);
    b.input("x", "AY");
    b.input("y", "AN");
    b.rule("AY", "AN", "PY", "PN");
    b.rule("AY", "PN", "AY", "PY");
    b.rule("AN", "PY", "AN", "PN");
    b.rule("PY", "PN", "PY", "PY");
    let p = b.build().expect("majority is well formed");
    let phi = Formula::ge(LinExpr::var("x"), LinExpr::var("y"));
    finish("majority".into(), p, phi, "4", 4)
}

/// Flock of birds with values `0..=k`; decides `x >= k` with `k + 1` states.
pub fn gen_flock_linear(k: u32) -> Result<GeneratedProtocol, GenError> {
    if k == 0 {
        return Err(GenError::Parameter("flock_linear needs k >= 1".into()));
    }
    let s = |i: u32| format!("s{i}");
    let mut b = Builder::new();
    for i in 0..=k {
        b.state(s(i), u8::from(i == k));
    }
    b.input("x", s(1));
    for i in 1..k {
        for j in 1..k {
            let hi = (i + j).min(k);
            b.rule(&s(i), &s(j), &s(hi), &s(i + j - hi));
        }
    }
    for j in 0..k {
        b.rule(&s(k), &s(j), &s(k), &s(k));
    }
    let p = b.build()?;
    let phi = Formula::var_cmp("x", CmpOp::Ge, k as i64);
    Ok(finish(format!("flock_linear({k})"), p, phi, "k + 1", k as usize + 1))
}

/// Doubling protocol deciding `x >= 2^k` with `k + 3` states.
///
/// States: `z` (empty), `p0..pk` (holding `2^i`), `acc`. Equal powers merge;
/// an agent holding `2^k` converts itself and its partner to `acc`, which spreads.
pub fn gen_threshold_power2(k: u32) -> Result<GeneratedProtocol, GenError> {
    if k == 0 || k > 62 {
        return Err(GenError::Parameter("threshold_power2 needs 1 <= k <= 62".into()));
    }
    let p = |i: u32| format!("p{i}");
    let mut b = Builder::new();
    b.state("z", 0);
    for i in 0..=k {
        b.state(p(i), u8::from(i == k));
    }
    b.state("acc", 1);
    b.input("x", p(0));
    for i in 0..k {
        b.rule(&p(i), &p(i), &p(i + 1), "z");
    }
    let mut all: Vec<String> = vec!["z".into()];
    all.extend((0..=k).map(p));
    for q in &all {
        b.rule(&p(k), q, "acc", "acc");
    }
    for q in &all {
        b.rule("acc", q, "acc", "acc");
    }
    let proto = b.build()?;
    let phi = Formula::var_cmp("x", CmpOp::Ge, 1i64 << k);
    Ok(finish(format!("threshold_power2({k})"), proto, phi, "k + 3", k as usize + 3))
}

fn pebble_state(blue: bool, bag: u64, up: bool) -> String {
    format!("{}{}{}", if blue { 'b' } else { 'r' }, bag, if up { 'u' } else { 'd' })
}

/// `x >= y + 2^k` over naturals.
fn diff_predicate(k: u32) -> Formula {
    Formula::ge(LinExpr::var("x"), LinExpr::from_terms([("y", 1)], 1i64 << k))
}

#[derive(Clone, Copy)]
struct Agent {
    blue: bool,
    bag: u64,
    up: bool,
}

fn pebble_protocol(
    name: String,
    k: u32,
    bags: &[u64],
    blue_pair: impl Fn(u64, u64, u64) -> (u64, u64),
    cancels: impl Fn(u64, u64) -> bool,
    states_formula: &str,
) -> Result<GeneratedProtocol, GenError> {
    let cap = 1u64 << k;
    let mut agents = Vec::new();
    for &blue in &[true, false] {
        for &bag in bags {
            for &up in &[false, true] {
                agents.push(Agent { blue, bag, up });
            }
        }
    }
    let mut b = Builder::new();
    for a in &agents {
        b.state(pebble_state(a.blue, a.bag, a.up), u8::from(a.up));
    }
    b.input("x", pebble_state(true, 1, false));
    b.input("y", pebble_state(false, 1, false));
    for a1 in &agents {
        for a2 in &agents {
            let both_up = a1.up && a2.up;
            let (n1, n2) = match (a1.blue, a2.blue) {
                (false, false) => continue,
                (true, true) => {
                    let (n1, n2) = blue_pair(a1.bag, a2.bag, cap);
                    let up = n1 == cap || n2 == cap || both_up;
                    b.rule(
                        &pebble_state(true, a1.bag, a1.up),
                        &pebble_state(true, a2.bag, a2.up),
                        &pebble_state(true, n1, up),
                        &pebble_state(true, n2, up),
                    );
                    continue;
                }
                _ => (a1.bag, a2.bag),
            };
            let (blue_bag, red_bag) = if a1.blue { (n1, n2) } else { (n2, n1) };
            let (nb, nr, up) = if cancels(blue_bag, red_bag) {
                (blue_bag - 1, red_bag - 1, false)
            } else {
                (blue_bag, red_bag, blue_bag == cap || both_up)
            };
            let (m1, m2) = if a1.blue { (nb, nr) } else { (nr, nb) };
            b.rule(
                &pebble_state(a1.blue, a1.bag, a1.up),
                &pebble_state(a2.blue, a2.bag, a2.up),
                &pebble_state(a1.blue, m1, up),
                &pebble_state(a2.blue, m2, up),
            );
        }
    }
    let proto = b.build()?;
    let declared = 2 * bags.len() * 2;
    Ok(finish(name, proto, diff_predicate(k), states_formula, declared))
}

/// First pebble protocol for `x - y >= 2^k`: bags hold `0..=2^k` pebbles.
///
/// Blue pairs: the first agent gives the second as many pebbles as its bag
/// can still hold. Flags are raised when the receiving bag is full afterwards
/// or both flags were up before the interaction.
pub fn gen_diff_power2_first(k: u32) -> Result<GeneratedProtocol, GenError> {
    if k == 0 || k > 10 {
        return Err(GenError::Parameter("diff_power2_first needs 1 <= k <= 10".into()));
    }
    let cap = 1u64 << k;
    let bags: Vec<u64> = (0..=cap).collect();
    pebble_protocol(
        format!("diff_power2_first({k})"),
        k,
        &bags,
        |giver, recv, cap| {
            let amount = giver.min(cap - recv);
            (giver - amount, recv + amount)
        },
        |blue, red| blue > 0 && red > 0,
        "2 * (2^k + 1) * 2",
    )
}

/// Second pebble protocol: bags hold `0` or a power of two up to `2^k`.
///
/// Blue pairs with equal nonzero bags: the first gives the second as many as
/// fit. A blue agent with an empty bag receives half of its partner's pebbles
/// (partners holding a single pebble keep it). Cancellation needs exactly one
/// pebble on each side.
pub fn gen_diff_power2_second(k: u32) -> Result<GeneratedProtocol, GenError> {
    if k == 0 || k > 62 {
        return Err(GenError::Parameter("diff_power2_second needs 1 <= k <= 62".into()));
    }
    let mut bags = vec![0u64];
    bags.extend((0..=k).map(|i| 1u64 << i));
    pebble_protocol(
        format!("diff_power2_second({k})"),
        k,
        &bags,
        |n1, n2, cap| {
            if n1 == n2 && n1 > 0 {
                let amount = n1.min(cap - n2);
                (n1 - amount, n2 + amount)
            } else if n1 == 0 && n2 >= 2 {
                (n2 / 2, n2 / 2)
            } else if n2 == 0 && n1 >= 2 {
                (n1 / 2, n1 / 2)
            } else {
                (n1, n2)
            }
        },
        |blue, red| blue == 1 && red == 1,
        "2 * (k + 2) * 2",
    )
}

/// Remainder protocol for `(Σ a_i x_i) mod m = b` with `m + 2` states.
pub fn gen_remainder(a: &[i64], m: i64, b: i64) -> Result<GeneratedProtocol, GenError> {
    if m < 2 {
        return Err(GenError::Parameter(format!("modulus must be at least 2, got {m}")));
    }
    if !(0..m).contains(&b) {
        return Err(GenError::Parameter(format!("residue must lie in [0, {m}), got {b}")));
    }
    if a.is_empty() {
        return Err(GenError::Parameter("need at least one coefficient".into()));
    }
    let act = |u: i64| format!("a{u}");
    let pas = |c: bool| format!("p{}", u8::from(c));
    let mut bl = Builder::new();
    for u in 0..m {
        bl.state(act(u), u8::from(u == b));
    }
    bl.state(pas(false), 0);
    bl.state(pas(true), 1);
    let names = input_names(a.len());
    for (v, ai) in names.iter().zip(a) {
        bl.input(v, act(ai.rem_euclid(m)));
    }
    for u in 0..m {
        for v in 0..m {
            let w = (u + v) % m;
            bl.rule(&act(u), &act(v), &act(w), &pas(w == b));
        }
        for c in [false, true] {
            bl.rule(&act(u), &pas(c), &act(u), &pas(u == b));
        }
    }
    let proto = bl.build()?;
    let sum = LinExpr::from_terms(names.iter().map(String::as_str).zip(a.iter().copied()), 0);
    let phi = Formula::remainder(sum, m, b).map_err(|e| GenError::Parameter(e.to_string()))?;
    Ok(finish(format!("remainder({a:?}, {m}, {b})"), proto, phi, "m + 2", m as usize + 2))
}

/// Threshold protocol for `Σ a_i x_i >= b`.
///
/// Agents carry a role (leader `L` or follower `F`), a value in `[-s, s]`
/// with `s = max(|b| + 1, max |a_i|)`, and an output bit. Every agent starts
/// as a leader holding its coefficient. In an interaction involving a
/// leader, the leader keeps `clamp(u + v)`, the partner becomes a follower
/// holding the rest, and both adopt the leader's verdict `[clamp(u + v) >= b]`.
/// Two leaders merge into one. `4 (2s + 1)` states.
pub fn gen_atomic_threshold(a: &[i64], b: i64) -> Result<GeneratedProtocol, GenError> {
    if a.is_empty() || a.iter().all(|&x| x == 0) {
        return Err(GenError::Parameter("coefficients must not all be zero".into()));
    }
    let s = (b.abs() + 1).max(a.iter().map(|x| x.abs()).max().unwrap_or(0));
    if s > 64 {
        return Err(GenError::Parameter("coefficients too large for the truncation construction".into()));
    }
    let name = |leader: bool, u: i64, o: bool| {
        let v = if u < 0 { format!("m{}", -u) } else { format!("p{u}") };
        format!("{}{}_{}", if leader { 'L' } else { 'F' }, v, u8::from(o))
    };
    let mut bl = Builder::new();
    let mut all = Vec::new();
    for leader in [true, false] {
        for u in -s..=s {
            for o in [false, true] {
                bl.state(name(leader, u, o), u8::from(o));
                all.push((leader, u, o));
            }
        }
    }
    let names = input_names(a.len());
    for (v, &ai) in names.iter().zip(a) {
        bl.input(v, name(true, ai, ai >= b));
    }
    for &(l1, u, o1) in &all {
        for &(l2, v, o2) in &all {
            if !l1 && !l2 {
                continue;
            }
            let w = (u + v).clamp(-s, s);
            let rest = u + v - w;
            let beta = w >= b;
            let (r1, r2) = if l1 {
                (name(true, w, beta), name(false, rest, beta))
            } else {
                (name(false, rest, beta), name(true, w, beta))
            };
            bl.rule(&name(l1, u, o1), &name(l2, v, o2), &r1, &r2);
        }
    }
    let proto = bl.build()?;
    let sum = LinExpr::from_terms(names.iter().map(String::as_str).zip(a.iter().copied()), 0);
    let phi = Formula::ge(sum, LinExpr::constant(b));
    let declared = 4 * (2 * s as usize + 1);
    Ok(finish(
        format!("atomic_threshold({a:?}, {b})"),
        proto,
        phi,
        "4 * (2s + 1), s = max(|b| + 1, max |a_i|)",
        declared,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoolOp {
    And,
    Or,
}

/// Synchronous product of two leaderless protocols over the same inputs.
pub fn gen_product(g1: &GeneratedProtocol, g2: &GeneratedProtocol, op: BoolOp) -> Result<GeneratedProtocol, GenError> {
    let (p1, p2) = (&g1.protocol, &g2.protocol);
    if p1.input_vars() != p2.input_vars() {
        return Err(GenError::Parameter("product needs identical input variable lists".into()));
    }
    if p1.has_leaders() || p2.has_leaders() {
        return Err(GenError::Parameter("product is supported for leaderless protocols only".into()));
    }
    let (n1, n2) = (p1.num_states(), p2.num_states());
    let name = |i: usize, j: usize| format!("{}__{}", p1.states()[i], p2.states()[j]);
    let mut bl = Builder::new();
    for i in 0..n1 {
        for j in 0..n2 {
            let o = match op {
                BoolOp::And => p1.output(i) & p2.output(j),
                BoolOp::Or => p1.output(i) | p2.output(j),
            };
            bl.state(name(i, j), o);
        }
    }
    for (v, var) in p1.input_vars().iter().enumerate() {
        bl.input(var, name(p1.input_state(v), p2.input_state(v)));
    }
    let step = |p: &Protocol, a: usize, b: usize| match p.transition_for(a, b) {
        Some(t) => p.transitions()[t].post,
        None => (a, b),
    };
    for i1 in 0..n1 {
        for j1 in 0..n2 {
            for i2 in 0..n1 {
                for j2 in 0..n2 {
                    let (a1, a2) = step(p1, i1, i2);
                    let (b1, b2) = step(p2, j1, j2);
                    if (a1, a2, b1, b2) != (i1, i2, j1, j2) {
                        bl.transitions.push([name(i1, j1), name(i2, j2), name(a1, b1), name(a2, b2)]);
                    }
                }
            }
        }
    }
    let proto = bl.build()?;
    let phi = match op {
        BoolOp::And => Formula::and([g1.predicate.clone(), g2.predicate.clone()]),
        BoolOp::Or => Formula::or([g1.predicate.clone(), g2.predicate.clone()]),
    };
    let label = match op {
        BoolOp::And => "and",
        BoolOp::Or => "or",
    };
    Ok(finish(format!("product({}, {}, {label})", g1.name, g2.name), proto, phi, "|Q1| * |Q2|", n1 * n2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Configuration;

    #[test]
    fn majority_shape() {
        let g = gen_majority();
        assert_eq!(g.protocol.num_states(), 4);
        assert_eq!(g.protocol.transitions().len(), 4);
        assert_eq!(g.protocol.transition_name(0), "AY, AN -> PY, PN");
        assert_eq!(g.protocol.transition_name(3), "PY, PN -> PY, PY");
    }

    #[test]
    fn state_counts_match_formulas() {
        for k in 1..=6 {
            assert_eq!(gen_flock_linear(k).unwrap().protocol.num_states(), k as usize + 1);
            assert_eq!(gen_threshold_power2(k).unwrap().protocol.num_states(), k as usize + 3);
            assert_eq!(gen_diff_power2_second(k).unwrap().protocol.num_states(), 2 * (k as usize + 2) * 2);
            assert_eq!(gen_diff_power2_first(k).unwrap().protocol.num_states(), 2 * ((1 << k) + 1) * 2);
        }
        assert_eq!(gen_remainder(&[1, 1], 5, 3).unwrap().protocol.num_states(), 7);
        let m = gen_majority();
        assert_eq!(gen_product(&m, &m, BoolOp::And).unwrap().protocol.num_states(), 16);
    }

    #[test]
    fn zero_parameters_rejected() {
        assert!(gen_flock_linear(0).is_err());
        assert!(gen_threshold_power2(0).is_err());
        assert!(gen_diff_power2_first(0).is_err());
        assert!(gen_diff_power2_second(0).is_err());
        assert!(gen_remainder(&[1], 1, 0).is_err());
        assert!(gen_remainder(&[1], 3, 3).is_err());
        assert!(gen_atomic_threshold(&[0, 0], 1).is_err());
    }

    #[test]
    fn remainder_preserves_residue_sum() {
        let g = gen_remainder(&[1, 2], 4, 1).unwrap();
        let p = &g.protocol;
        for t in 0..p.transitions().len() {
            let tr = p.transitions()[t];
            let val = |q: usize| p.states()[q].strip_prefix('a').map(|v| v.parse::<i64>().unwrap()).unwrap_or(0);
            assert_eq!((val(tr.pre.0) + val(tr.pre.1)) % 4, (val(tr.post.0) + val(tr.post.1)) % 4);
        }
    }

    #[test]
    fn flock_transitions() {
        let g = gen_flock_linear(3).unwrap();
        let p = &g.protocol;
        let s = |n: &str| p.state_index(n).unwrap();
        let t = p.transition_for(s("s2"), s("s2")).unwrap();
        assert_eq!(p.transitions()[t].post, (s("s3"), s("s1")));
        let t = p.transition_for(s("s3"), s("s0")).unwrap();
        assert_eq!(p.transitions()[t].post, (s("s3"), s("s3")));
        assert!(p.transition_for(s("s0"), s("s3")).is_none());
    }

    #[test]
    fn second_pebble_rules() {
        let g = gen_diff_power2_second(2).unwrap();
        let p = &g.protocol;
        let s = |n: &str| p.state_index(n).unwrap();
        let post = |a: &str, b: &str| {
            p.transition_for(s(a), s(b)).map(|t| {
                let tr = p.transitions()[t];
                (p.states()[tr.post.0].clone(), p.states()[tr.post.1].clone())
            })
        };
        assert_eq!(post("b2d", "b2d"), Some(("b0u".into(), "b4u".into())));
        assert_eq!(post("b0d", "b4d"), Some(("b2d".into(), "b2d".into())));
        assert_eq!(post("b1d", "r1d"), Some(("b0d".into(), "r0d".into())));
        assert_eq!(post("b2u", "r0u"), None);
        assert_eq!(post("b4d", "r0d"), Some(("b4u".into(), "r0u".into())));
    }

    #[test]
    fn product_moves_components_independently() {
        let f = gen_flock_linear(2).unwrap();
        let r = gen_remainder(&[1], 3, 0).unwrap();
        let g = gen_product(&f, &r, BoolOp::And).unwrap();
        let p = &g.protocol;
        let c0 = p.initial_config(&crate::model::InputVector(vec![2])).unwrap();
        let start = p.state_index("s1__a1").unwrap();
        assert_eq!(c0.get(start), 2);
        let t = p.transition_for(start, start).unwrap();
        let c1 = p.apply(&c0, t).unwrap();
        let mut want = Configuration::zero(p.num_states());
        want.0[p.state_index("s2__a2").unwrap()] = 1;
        want.0[p.state_index("s0__p0").unwrap()] = 1;
        assert_eq!(c1, want);
    }
}
