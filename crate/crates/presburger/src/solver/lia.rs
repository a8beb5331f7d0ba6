//! Integer feasibility of a conjunction of linear constraints.
//!
//! Equalities (including congruences, which become equalities with a fresh
//! integer multiplier) are eliminated exactly: unit coefficients are solved
//! for directly, other equalities are reduced by unimodular column operations
//! until some coefficient becomes ±1. The remaining inequalities are
//! gcd-tightened and decided by branch-and-bound over the simplex relaxation,
//! falling back to shadow elimination when the search is inconclusive.

use num_integer::Integer;
use num_traits::{Signed, ToPrimitive, Zero};

use super::simplex::{q, Simplex, Q};
use super::{Budget, Exhausted};

#[derive(Clone, Debug)]
pub(crate) enum Constraint {
    /// `Σ a x ≤ c`
    Le(Vec<(usize, i64)>, i64),
    /// `Σ a x = c`
    Eq(Vec<(usize, i64)>, i64),
    /// `Σ a x ≡ r (mod m)`
    Mod(Vec<(usize, i64)>, i64, i64),
}

/// Dense affine row `Σ coeffs[j] x_j + constant` over the current variables.
#[derive(Clone, Debug)]
pub(crate) struct Affine {
    pub(crate) coeffs: Vec<i128>,
    pub(crate) constant: i128,
}

impl Affine {
    pub(crate) fn zero(n: usize) -> Self {
        Affine { coeffs: vec![0; n], constant: 0 }
    }

    pub(crate) fn unit(n: usize, k: usize) -> Self {
        let mut a = Affine::zero(n);
        a.coeffs[k] = 1;
        a
    }

    pub(crate) fn eval(&self, x: &[i128]) -> i128 {
        self.coeffs.iter().zip(x).map(|(c, v)| c * v).sum::<i128>() + self.constant
    }

    fn substitute_unit(&mut self, k: usize, def: &Affine) {
        let e = self.coeffs[k];
        if e == 0 {
            return;
        }
        self.coeffs[k] = 0;
        for (j, d) in def.coeffs.iter().enumerate() {
            self.coeffs[j] += e * d;
        }
        self.constant += e * def.constant;
    }

    /// Applies `x_k = p y_k - bl y_l`, `x_l = qq y_k + ak y_l`.
    fn transform(&mut self, k: usize, l: usize, p: i128, qq: i128, bl: i128, ak: i128) {
        let (ek, el) = (self.coeffs[k], self.coeffs[l]);
        self.coeffs[k] = ek * p + el * qq;
        self.coeffs[l] = -ek * bl + el * ak;
    }
}

/// Eliminates every equality by substitution, rewriting `ineqs` and `defs`
/// accordingly. Returns false if the equalities have no integer solution.
pub(crate) fn eliminate(
    eqs: &mut Vec<Affine>,
    ineqs: &mut [Affine],
    defs: &mut [Affine],
    budget: &mut Budget,
) -> Result<bool, Exhausted> {
    while let Some(mut eq) = eqs.pop() {
        let n = eq.coeffs.len();
        loop {
            budget.tick()?;
            let g = gcd_all(&eq.coeffs);
            if g == 0 {
                if eq.constant != 0 {
                    return Ok(false);
                }
                break;
            }
            if eq.constant % g != 0 {
                return Ok(false);
            }
            if g != 1 {
                eq.coeffs.iter_mut().for_each(|c| *c /= g);
                eq.constant /= g;
            }
            if let Some(k) = eq.coeffs.iter().position(|c| c.abs() == 1) {
                // x_k = -a_k (Σ_{j≠k} a_j x_j + constant)
                let ak = eq.coeffs[k];
                let mut def = Affine::zero(n);
                for (j, c) in eq.coeffs.iter().enumerate() {
                    if j != k {
                        def.coeffs[j] = -ak * c;
                    }
                }
                def.constant = -ak * eq.constant;
                for other in eqs.iter_mut().chain(ineqs.iter_mut()).chain(defs.iter_mut()) {
                    other.substitute_unit(k, &def);
                }
                break;
            }
            // Reduce the two smallest coefficients to their gcd.
            let mut idx: Vec<usize> = (0..n).filter(|&j| eq.coeffs[j] != 0).collect();
            idx.sort_by_key(|&j| eq.coeffs[j].abs());
            let (k, l) = (idx[0], idx[1]);
            let (a, b) = (eq.coeffs[k], eq.coeffs[l]);
            let ext = a.extended_gcd(&b);
            let (g2, p, qq) = (ext.gcd, ext.x, ext.y);
            let (bl, ak) = (b / g2, a / g2);
            eq.transform(k, l, p, qq, bl, ak);
            for other in eqs.iter_mut().chain(ineqs.iter_mut()).chain(defs.iter_mut()) {
                other.transform(k, l, p, qq, bl, ak);
            }
        }
    }
    Ok(true)
}

pub(crate) fn gcd_all(v: &[i128]) -> i128 {
    v.iter().fold(0i128, |g, x| g.gcd(x))
}

/// Returns an integer point satisfying all constraints and the variable
/// bounds, or `None` if there is none.
pub(crate) fn solve_int(
    nvars: usize,
    constraints: &[Constraint],
    lower: &[Option<i64>],
    upper: &[Option<i64>],
    budget: &mut Budget,
) -> Result<Option<Vec<i64>>, Exhausted> {
    let n_mod = constraints.iter().filter(|c| matches!(c, Constraint::Mod(..))).count();
    let n = nvars + n_mod;

    // Equalities are kept as `affine = 0`, inequalities as `affine ≤ 0`.
    let mut eqs: Vec<Affine> = Vec::new();
    let mut ineqs: Vec<Affine> = Vec::new();
    let mut next_aux = nvars;
    for c in constraints {
        let mut a = Affine::zero(n);
        match c {
            Constraint::Le(terms, rhs) => {
                for (v, k) in terms {
                    a.coeffs[*v] += *k as i128;
                }
                a.constant = -(*rhs as i128);
                ineqs.push(a);
            }
            Constraint::Eq(terms, rhs) => {
                for (v, k) in terms {
                    a.coeffs[*v] += *k as i128;
                }
                a.constant = -(*rhs as i128);
                eqs.push(a);
            }
            Constraint::Mod(terms, m, r) => {
                for (v, k) in terms {
                    a.coeffs[*v] += *k as i128;
                }
                a.coeffs[next_aux] = -(*m as i128);
                next_aux += 1;
                a.constant = -(*r as i128);
                eqs.push(a);
            }
        }
    }
    for v in 0..nvars {
        if let (Some(l), Some(u)) = (lower[v], upper[v]) {
            if l == u {
                let mut a = Affine::zero(n);
                a.coeffs[v] = 1;
                a.constant = -(l as i128);
                eqs.push(a);
                continue;
            }
        }
        if let Some(l) = lower[v] {
            let mut a = Affine::zero(n);
            a.coeffs[v] = -1;
            a.constant = l as i128;
            ineqs.push(a);
        }
        if let Some(u) = upper[v] {
            let mut a = Affine::zero(n);
            a.coeffs[v] = 1;
            a.constant = -(u as i128);
            ineqs.push(a);
        }
    }

    // defs[i]: original variable i over the current variables.
    let mut defs: Vec<Affine> = (0..nvars).map(|i| Affine::unit(n, i)).collect();

    if !eliminate(&mut eqs, &mut ineqs, &mut defs, budget)? {
        return Ok(None);
    }

    // gcd tightening; constant rows are decided here.
    let mut rows: Vec<Vec<i128>> = Vec::new();
    let mut bounds: Vec<i128> = Vec::new();
    for mut ineq in ineqs {
        let g = gcd_all(&ineq.coeffs);
        if g == 0 {
            if ineq.constant > 0 {
                return Ok(None);
            }
            continue;
        }
        // Σ a x ≤ -constant
        let rhs = Integer::div_floor(&(-ineq.constant), &g);
        ineq.coeffs.iter_mut().for_each(|c| *c /= g);
        rows.push(ineq.coeffs);
        bounds.push(rhs);
    }

    let point = match branch_and_bound(n, &rows, &bounds, budget)? {
        Some(p) => p,
        None => return Ok(None),
    };
    let mut out = Vec::with_capacity(nvars);
    for d in &defs {
        match i64::try_from(d.eval(&point)) {
            Ok(x) => out.push(x),
            Err(_) => return Ok(None),
        }
    }
    Ok(Some(out))
}

enum Search {
    Found(Vec<i128>),
    Infeasible,
    /// Infeasible inside the box, or stopped by the node cap.
    Inconclusive,
}

/// Branch-and-bound with a small node cap, then inside small boxes; both
/// find typical solutions fast. Depth-first search can dive forever along an
/// unbounded direction, so an inconclusive outcome falls back to the complete
/// shadow elimination in [`super::omega`].
fn branch_and_bound(
    n: usize,
    rows: &[Vec<i128>],
    bounds: &[i128],
    budget: &mut Budget,
) -> Result<Option<Vec<i128>>, Exhausted> {
    let mut root = Simplex::new(n, rows);
    for (i, b) in bounds.iter().enumerate() {
        let s = root.slack(i);
        if !root.set_upper(s, q(*b)) {
            return Ok(None);
        }
    }
    match bnb(&root, n, None, Some(256), budget)? {
        Search::Found(p) => return Ok(Some(p)),
        Search::Infeasible => return Ok(None),
        Search::Inconclusive => {}
    }
    for radius in [8i128, 64] {
        if let Search::Found(p) = bnb(&root, n, Some(radius), Some(4096), budget)? {
            return Ok(Some(p));
        }
    }
    let ineqs = rows.iter().zip(bounds).map(|(r, b)| Affine { coeffs: r.clone(), constant: -b }).collect();
    super::omega::solve_system(Vec::new(), ineqs, n, budget)
}

fn bnb(
    root: &Simplex,
    n: usize,
    radius: Option<i128>,
    cap: Option<u64>,
    budget: &mut Budget,
) -> Result<Search, Exhausted> {
    let mut start = root.clone();
    if let Some(r) = radius {
        for j in 0..n {
            if !start.set_lower(j, q(-r)) || !start.set_upper(j, q(r)) {
                return Ok(Search::Inconclusive);
            }
        }
    }
    let mut stack = vec![start];
    let mut nodes = 0u64;
    while let Some(mut node) = stack.pop() {
        budget.tick()?;
        nodes += 1;
        if cap.is_some_and(|c| nodes > c) {
            return Ok(Search::Inconclusive);
        }
        if !node.check(&mut budget.pivots) {
            continue;
        }
        let frac = (0..n).find(|&j| !node.value(j).is_integer());
        match frac {
            None => {
                let point = (0..n).map(|j| node.value(j).to_integer().to_i128().expect("value fits in i128")).collect();
                return Ok(Search::Found(point));
            }
            Some(j) => {
                let v: Q = node.value(j).clone();
                let fl = v.floor();
                let ce = v.ceil();
                let mut up = node.clone();
                let up_ok = up.set_lower(j, ce);
                let down_ok = node.set_upper(j, fl.clone());
                // Explore toward zero first.
                let prefer_down = fl.is_positive() || fl.is_zero();
                match (down_ok, up_ok, prefer_down) {
                    (true, true, true) => {
                        stack.push(up);
                        stack.push(node);
                    }
                    (true, true, false) => {
                        stack.push(node);
                        stack.push(up);
                    }
                    (true, false, _) => stack.push(node),
                    (false, true, _) => stack.push(up),
                    (false, false, _) => {}
                }
            }
        }
    }
    Ok(if radius.is_some() { Search::Inconclusive } else { Search::Infeasible })
}
