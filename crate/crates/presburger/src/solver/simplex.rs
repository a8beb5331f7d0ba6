//! Bounded general simplex over exact rationals.
//!
//! Structural variables `x_0..x_{n-1}` are joined by one slack variable per
//! row, `s_i = Σ_j a_ij x_j`; every variable may carry a lower and an upper
//! bound. Feasibility uses Bland's rule, so `check` always terminates.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

pub(crate) type Q = BigRational;

pub(crate) fn q(v: i128) -> Q {
    BigRational::from_integer(BigInt::from(v))
}

#[derive(Clone, Debug)]
pub(crate) struct Simplex {
    structural: usize,
    /// `rows[r]` expresses the basic variable `basis[r]` over all columns;
    /// entries for basic columns are zero.
    rows: Vec<Vec<Q>>,
    basis: Vec<usize>,
    row_of: Vec<Option<usize>>,
    lower: Vec<Option<Q>>,
    upper: Vec<Option<Q>>,
    value: Vec<Q>,
}

impl Simplex {
    /// `rows[i]` holds the coefficients of the i-th slack over structural vars.
    pub(crate) fn new(structural: usize, rows: &[Vec<i128>]) -> Self {
        let total = structural + rows.len();
        let mut tab = Vec::with_capacity(rows.len());
        for r in rows {
            let mut row = vec![Q::zero(); total];
            for (j, a) in r.iter().enumerate() {
                if *a != 0 {
                    row[j] = q(*a);
                }
            }
            tab.push(row);
        }
        let basis: Vec<usize> = (structural..total).collect();
        let mut row_of = vec![None; total];
        for (r, b) in basis.iter().enumerate() {
            row_of[*b] = Some(r);
        }
        Simplex {
            structural,
            rows: tab,
            basis,
            row_of,
            lower: vec![None; total],
            upper: vec![None; total],
            value: vec![Q::zero(); total],
        }
    }

    pub(crate) fn slack(&self, row: usize) -> usize {
        self.structural + row
    }

    pub(crate) fn value(&self, var: usize) -> &Q {
        &self.value[var]
    }

    /// Tightens the lower bound of `var`; returns false on an empty interval.
    pub(crate) fn set_lower(&mut self, var: usize, v: Q) -> bool {
        if let Some(u) = &self.upper[var] {
            if v > *u {
                return false;
            }
        }
        if self.lower[var].as_ref().is_none_or(|l| v > *l) {
            self.lower[var] = Some(v.clone());
            if self.row_of[var].is_none() && self.value[var] < v {
                self.update_nonbasic(var, v);
            }
        }
        true
    }

    /// Tightens the upper bound of `var`; returns false on an empty interval.
    pub(crate) fn set_upper(&mut self, var: usize, v: Q) -> bool {
        if let Some(l) = &self.lower[var] {
            if v < *l {
                return false;
            }
        }
        if self.upper[var].as_ref().is_none_or(|u| v < *u) {
            self.upper[var] = Some(v.clone());
            if self.row_of[var].is_none() && self.value[var] > v {
                self.update_nonbasic(var, v);
            }
        }
        true
    }

    fn update_nonbasic(&mut self, var: usize, v: Q) {
        let delta = &v - &self.value[var];
        for (r, row) in self.rows.iter().enumerate() {
            let a = &row[var];
            if !a.is_zero() {
                let b = self.basis[r];
                self.value[b] = &self.value[b] + a * &delta;
            }
        }
        self.value[var] = v;
    }

    fn violation(&self, var: usize) -> Option<bool> {
        let v = &self.value[var];
        if let Some(l) = &self.lower[var] {
            if v < l {
                return Some(true);
            }
        }
        if let Some(u) = &self.upper[var] {
            if v > u {
                return Some(false);
            }
        }
        None
    }

    /// Restores feasibility. Returns false if the bounds are infeasible over
    /// the rationals. `pivots` is incremented per pivot.
    pub(crate) fn check(&mut self, pivots: &mut u64) -> bool {
        loop {
            // Bland: smallest violating basic variable.
            let mut pick: Option<(usize, usize, bool)> = None;
            for (r, &b) in self.basis.iter().enumerate() {
                if let Some(below) = self.violation(b) {
                    if pick.is_none_or(|(_, pb, _)| b < pb) {
                        pick = Some((r, b, below));
                    }
                }
            }
            let Some((r, b, below)) = pick else { return true };
            let row = &self.rows[r];
            let mut entering = None;
            for j in 0..row.len() {
                let a = &row[j];
                if a.is_zero() || self.row_of[j].is_some() {
                    continue;
                }
                let can_inc = self.upper[j].as_ref().is_none_or(|u| self.value[j] < *u);
                let can_dec = self.lower[j].as_ref().is_none_or(|l| self.value[j] > *l);
                let ok = if below {
                    (a.is_positive() && can_inc) || (a.is_negative() && can_dec)
                } else {
                    (a.is_negative() && can_inc) || (a.is_positive() && can_dec)
                };
                if ok {
                    entering = Some(j);
                    break;
                }
            }
            let Some(j) = entering else { return false };
            let target = if below { self.lower[b].clone().unwrap() } else { self.upper[b].clone().unwrap() };
            *pivots += 1;
            self.pivot_and_update(r, j, target);
        }
    }

    fn pivot_and_update(&mut self, r: usize, j: usize, target: Q) {
        let b = self.basis[r];
        let a = self.rows[r][j].clone();
        let theta = (&target - &self.value[b]) / &a;
        self.value[b] = target;
        self.value[j] = &self.value[j] + &theta;
        for (k, row) in self.rows.iter().enumerate() {
            if k != r {
                let c = &row[j];
                if !c.is_zero() {
                    let bk = self.basis[k];
                    self.value[bk] = &self.value[bk] + c * &theta;
                }
            }
        }
        self.pivot(r, j);
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let b = self.basis[r];
        let a = self.rows[r][j].clone();
        // x_b = a x_j + rest  =>  x_j = (x_b - rest) / a
        let mut new_row: Vec<Q> = self.rows[r].iter().map(|c| -c / &a).collect();
        new_row[j] = Q::zero();
        new_row[b] = Q::one() / &a;
        for k in 0..self.rows.len() {
            if k == r {
                continue;
            }
            let c = self.rows[k][j].clone();
            if c.is_zero() {
                continue;
            }
            let row = &mut self.rows[k];
            row[j] = Q::zero();
            for (idx, nv) in new_row.iter().enumerate() {
                if !nv.is_zero() {
                    row[idx] = &row[idx] + &c * nv;
                }
            }
        }
        self.rows[r] = new_row;
        self.basis[r] = j;
        self.row_of[j] = Some(r);
        self.row_of[b] = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feasible_and_infeasible() {
        // s0 = x + y, s1 = x - y
        let mut s = Simplex::new(2, &[vec![1, 1], vec![1, -1]]);
        let mut p = 0;
        assert!(s.set_lower(s.slack(0), q(3)));
        assert!(s.set_upper(s.slack(1), q(-1)));
        assert!(s.check(&mut p));
        let x = s.value(0).clone();
        let y = s.value(1).clone();
        assert!(&x + &y >= q(3));
        assert!(&x - &y <= q(-1));
        assert!(!s.clone().set_upper(s.slack(0), q(2)));
        // x <= 1, y <= 1 contradicts x + y >= 3
        assert!(s.set_upper(0, q(1)));
        assert!(s.set_upper(1, q(1)));
        assert!(!s.check(&mut p));
    }

    #[test]
    fn fractional_vertex() {
        // 2x = 1 over the rationals
        let mut s = Simplex::new(1, &[vec![2]]);
        let mut p = 0;
        s.set_lower(s.slack(0), q(1));
        s.set_upper(s.slack(0), q(1));
        assert!(s.check(&mut p));
        assert_eq!(*s.value(0), BigRational::new(BigInt::from(1), BigInt::from(2)));
    }
}
