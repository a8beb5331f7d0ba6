//! Complete integer feasibility for systems of linear inequalities.
//!
//! Variables are projected out one at a time. When every lower or every
//! upper bound on the variable has a unit coefficient the real shadow is
//! exact. Otherwise the dark shadow is tried, and if it is empty while the
//! real shadow is not, the lower bounds are split into finitely many
//! equalities. Each step removes a variable, so the search terminates.

use std::collections::BTreeMap;

use num_integer::Integer;

use super::lia::{eliminate, gcd_all, Affine};
use super::{Budget, Exhausted};

type Res<T> = Result<T, Exhausted>;

/// Integer point with `eqs = 0` and `ineqs <= 0` over `n` free variables.
pub(crate) fn solve_system(
    mut eqs: Vec<Affine>,
    mut ineqs: Vec<Affine>,
    n: usize,
    budget: &mut Budget,
) -> Res<Option<Vec<i128>>> {
    let mut defs: Vec<Affine> = (0..n).map(|i| Affine::unit(n, i)).collect();
    if !eliminate(&mut eqs, &mut ineqs, &mut defs, budget)? {
        return Ok(None);
    }
    Ok(project(ineqs, n, budget)?.map(|p| defs.iter().map(|d| d.eval(&p)).collect()))
}

fn checked(a: i128, b: i128) -> Res<i128> {
    a.checked_mul(b).ok_or(Exhausted)
}

/// `a * x + b * y` row-wise.
fn combine(a: i128, x: &Affine, b: i128, y: &Affine) -> Res<Affine> {
    let mut coeffs = Vec::with_capacity(x.coeffs.len());
    for (cx, cy) in x.coeffs.iter().zip(&y.coeffs) {
        coeffs.push(checked(a, *cx)?.checked_add(checked(b, *cy)?).ok_or(Exhausted)?);
    }
    let constant = checked(a, x.constant)?.checked_add(checked(b, y.constant)?).ok_or(Exhausted)?;
    Ok(Affine { coeffs, constant })
}

enum Kind {
    OneSided,
    Exact,
    Inexact,
}

fn project(rows: Vec<Affine>, n: usize, budget: &mut Budget) -> Res<Option<Vec<i128>>> {
    budget.tick()?;
    // Normalize to `a·x <= rhs` with gcd(a) = 1, keeping the tightest rhs per direction.
    let mut tight: BTreeMap<Vec<i128>, i128> = BTreeMap::new();
    for r in rows {
        let g = gcd_all(&r.coeffs);
        if g == 0 {
            if r.constant > 0 {
                return Ok(None);
            }
            continue;
        }
        let rhs = Integer::div_floor(&(-r.constant), &g);
        let key: Vec<i128> = r.coeffs.iter().map(|c| c / g).collect();
        tight.entry(key).and_modify(|b| *b = (*b).min(rhs)).or_insert(rhs);
    }
    for (key, &b) in &tight {
        let neg: Vec<i128> = key.iter().map(|c| -c).collect();
        if let Some(&b2) = tight.get(&neg) {
            if b + b2 < 0 {
                return Ok(None);
            }
            if b + b2 == 0 {
                let eq = Affine { coeffs: key.clone(), constant: -b };
                let rest = tight
                    .iter()
                    .filter(|(k, _)| *k != key && **k != neg)
                    .map(|(k, b)| Affine { coeffs: k.clone(), constant: -b })
                    .collect();
                return solve_system(vec![eq], rest, n, budget);
            }
        }
    }
    let rows: Vec<Affine> = tight.into_iter().map(|(coeffs, b)| Affine { coeffs, constant: -b }).collect();
    if rows.is_empty() {
        return Ok(Some(vec![0; n]));
    }

    let mut best: Option<(usize, Kind, (u8, usize))> = None;
    for z in 0..n {
        let (mut lo, mut up, mut lo_unit, mut up_unit) = (0usize, 0usize, true, true);
        for r in &rows {
            let a = r.coeffs[z];
            if a > 0 {
                up += 1;
                up_unit &= a == 1;
            } else if a < 0 {
                lo += 1;
                lo_unit &= a == -1;
            }
        }
        if lo + up == 0 {
            continue;
        }
        let (kind, score) = if lo == 0 || up == 0 {
            (Kind::OneSided, (0, 0))
        } else if lo_unit || up_unit {
            (Kind::Exact, (1, lo * up))
        } else {
            (Kind::Inexact, (2, lo * up))
        };
        if best.as_ref().is_none_or(|(_, _, s)| score < *s) {
            best = Some((z, kind, score));
        }
    }
    let (z, kind, _) = best.expect("some row mentions a variable");
    let (with, without): (Vec<Affine>, Vec<Affine>) = rows.into_iter().partition(|r| r.coeffs[z] != 0);

    if let Kind::OneSided = kind {
        return Ok(project(without, n, budget)?.map(|p| place(z, &with, p)));
    }

    let shadow = |dark: bool, budget: &mut Budget| -> Res<Vec<Affine>> {
        let mut out = without.clone();
        for l in with.iter().filter(|r| r.coeffs[z] < 0) {
            for u in with.iter().filter(|r| r.coeffs[z] > 0) {
                budget.tick()?;
                let (a, b) = (u.coeffs[z], -l.coeffs[z]);
                let mut row = combine(a, l, b, u)?;
                if dark {
                    row.constant += (a - 1) * (b - 1);
                }
                out.push(row);
            }
        }
        Ok(out)
    };

    let real = shadow(false, budget)?;
    let found = project(real, n, budget)?;
    if let Kind::Exact = kind {
        return Ok(found.map(|p| place(z, &with, p)));
    }
    if found.is_none() {
        return Ok(None);
    }
    let dark = shadow(true, budget)?;
    if let Some(p) = project(dark, n, budget)? {
        return Ok(Some(place(z, &with, p)));
    }

    let amax = with.iter().map(|r| r.coeffs[z]).max().expect("upper bound exists");
    let mut all = without.clone();
    all.extend(with.iter().cloned());
    for l in with.iter().filter(|r| r.coeffs[z] < 0) {
        let b = -l.coeffs[z];
        let imax = Integer::div_floor(&(amax * b - amax - b), &amax);
        for i in 0..=imax {
            let mut eq = l.clone();
            eq.constant += i;
            if let Some(p) = solve_system(vec![eq], all.clone(), n, budget)? {
                return Ok(Some(p));
            }
        }
    }
    Ok(None)
}

/// Sets `z` in `p` to satisfy every row of `with`, given the other coordinates.
/// Takes the smallest admissible value when there is a lower bound.
fn place(z: usize, with: &[Affine], mut p: Vec<i128>) -> Vec<i128> {
    p[z] = 0;
    let mut lo: Option<i128> = None;
    let mut hi: Option<i128> = None;
    for r in with {
        let a = r.coeffs[z];
        let rest = r.eval(&p);
        if a > 0 {
            // a z <= -rest
            let h = Integer::div_floor(&(-rest), &a);
            hi = Some(hi.map_or(h, |x| x.min(h)));
        } else {
            // (-a) z >= rest
            let l = Integer::div_ceil(&rest, &(-a));
            lo = Some(lo.map_or(l, |x| x.max(l)));
        }
    }
    p[z] = lo.or(hi).expect("z is bounded on some side");
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(coeffs: &[i128], rhs: i128) -> Affine {
        Affine { coeffs: coeffs.to_vec(), constant: -rhs }
    }

    fn run(n: usize, rows: Vec<Affine>) -> Option<Vec<i128>> {
        let mut b = Budget::new(1_000_000);
        let check = rows.clone();
        let p = solve_system(Vec::new(), rows, n, &mut b).unwrap();
        if let Some(p) = &p {
            assert!(check.iter().all(|r| r.eval(p) <= 0), "{p:?} violates a row");
        }
        p
    }

    #[test]
    fn unbounded_strip_without_integers() {
        // 1 <= 3x - 3y <= 2 along the unbounded direction x = y.
        assert_eq!(run(2, vec![row(&[-3, 3], -1), row(&[3, -3], 2), row(&[-1, 0], 0)]), None);
    }

    #[test]
    fn dark_shadow_gap() {
        // 4 <= 3x <= 5 and y free: no integer x.
        assert_eq!(run(2, vec![row(&[-3, 0], -4), row(&[3, 0], 5)]), None);
        assert!(run(2, vec![row(&[-3, 0], -4), row(&[3, 0], 6)]).is_some());
    }

    #[test]
    fn real_shadow_without_integer_points() {
        // 27 <= 11x + 13y <= 45 and -10 <= 7x - 9y <= 4
        let rows = vec![row(&[-11, -13], -27), row(&[11, 13], 45), row(&[-7, 9], 10), row(&[7, -9], 4)];
        assert_eq!(run(2, rows), None);
        let rows = vec![row(&[-11, -13], -27), row(&[11, 13], 60), row(&[-7, 9], 10), row(&[7, -9], 4)];
        assert!(run(2, rows).is_some());
    }

    #[test]
    fn one_sided_variable_is_dropped() {
        let p = run(3, vec![row(&[1, 1, 0], 5), row(&[0, -1, 0], -7), row(&[0, 0, -2], -3)]).unwrap();
        assert!(p[1] >= 7 && p[0] + p[1] <= 5 && p[2] >= 2);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(2000))]
        #[test]
        fn agrees_with_enumeration(
            raw in proptest::collection::vec((proptest::collection::vec(-7i128..=7, 3), -20i128..=20), 1..6)
        ) {
            const R: i128 = 8;
            let mut rows: Vec<Affine> = raw.iter().map(|(c, b)| row(c, *b)).collect();
            for j in 0..3 {
                let mut up = vec![0; 3];
                up[j] = 1;
                rows.push(row(&up, R));
                up[j] = -1;
                rows.push(row(&up, R));
            }
            let mut any = false;
            for x in -R..=R {
                for y in -R..=R {
                    for z in -R..=R {
                        any |= rows.iter().all(|r| r.eval(&[x, y, z]) <= 0);
                    }
                }
            }
            proptest::prop_assert_eq!(run(3, rows).is_some(), any);
        }
    }
}
