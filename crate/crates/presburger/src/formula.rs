//! Formula AST, evaluation and negation-normal form.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};

/// Assignment of natural (or, for auxiliary variables, integer) values.
pub type Assignment = BTreeMap<String, i64>;

/// Linear expression `Σ c_i · x_i + constant` with integer coefficients.
///
/// Zero coefficients are never stored.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinExpr {
    terms: BTreeMap<String, i64>,
    constant: i64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: i64) -> Self {
        LinExpr { terms: BTreeMap::new(), constant: c }
    }

    pub fn var(name: impl Into<String>) -> Self {
        Self::term(1, name)
    }

    pub fn term(coeff: i64, name: impl Into<String>) -> Self {
        let mut e = Self::zero();
        e.add_term(coeff, name);
        e
    }

    pub fn from_terms<I, S>(terms: I, constant: i64) -> Self
    where
        I: IntoIterator<Item = (S, i64)>,
        S: Into<String>,
    {
        let mut e = Self::constant(constant);
        for (v, c) in terms {
            e.add_term(c, v);
        }
        e
    }

    pub fn add_term(&mut self, coeff: i64, name: impl Into<String>) {
        if coeff == 0 {
            return;
        }
        let name = name.into();
        let slot = self.terms.entry(name.clone()).or_insert(0);
        *slot += coeff;
        if *slot == 0 {
            self.terms.remove(&name);
        }
    }

    pub fn add_constant(&mut self, c: i64) {
        self.constant += c;
    }

    pub fn terms(&self) -> &BTreeMap<String, i64> {
        &self.terms
    }

    pub fn constant_term(&self) -> i64 {
        self.constant
    }

    pub fn coeff(&self, name: &str) -> i64 {
        self.terms.get(name).copied().unwrap_or(0)
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn without_constant(&self) -> LinExpr {
        LinExpr { terms: self.terms.clone(), constant: 0 }
    }

    pub fn scale(&self, k: i64) -> LinExpr {
        if k == 0 {
            return LinExpr::zero();
        }
        LinExpr { terms: self.terms.iter().map(|(v, c)| (v.clone(), c * k)).collect(), constant: self.constant * k }
    }

    pub fn plus(&self, other: &LinExpr) -> LinExpr {
        let mut out = self.clone();
        for (v, c) in &other.terms {
            out.add_term(*c, v.clone());
        }
        out.constant += other.constant;
        out
    }

    pub fn minus(&self, other: &LinExpr) -> LinExpr {
        self.plus(&other.scale(-1))
    }

    /// Replaces variables by expressions; unmapped variables are kept.
    pub fn substitute(&self, map: &HashMap<String, LinExpr>) -> LinExpr {
        let mut out = LinExpr::constant(self.constant);
        for (v, c) in &self.terms {
            match map.get(v) {
                Some(e) => out = out.plus(&e.scale(*c)),
                None => out.add_term(*c, v.clone()),
            }
        }
        out
    }

    pub fn rename(&self, f: &dyn Fn(&str) -> String) -> LinExpr {
        LinExpr::from_terms(self.terms.iter().map(|(v, c)| (f(v), *c)), self.constant)
    }

    pub fn eval(&self, a: &Assignment) -> Result<i128> {
        let mut s = self.constant as i128;
        for (v, c) in &self.terms {
            let x = a.get(v).ok_or_else(|| Error::MissingVariable(v.clone()))?;
            s += (*c as i128) * (*x as i128);
        }
        Ok(s)
    }
}

impl fmt::Display for LinExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (v, c) in &self.terms {
            let (sign, mag) = if *c < 0 { ("-", -(*c as i128)) } else { ("+", *c as i128) };
            if first {
                if sign == "-" {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {} ", sign)?;
            }
            if mag == 1 {
                write!(f, "{}", v)?;
            } else {
                write!(f, "{}*{}", mag, v)?;
            }
            first = false;
        }
        if first {
            write!(f, "{}", self.constant)?;
        } else if self.constant != 0 {
            let sign = if self.constant < 0 { "-" } else { "+" };
            write!(f, " {} {}", sign, (self.constant as i128).abs())?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }

    pub fn holds(self, lhs: i128, rhs: i128) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Gt => lhs > rhs,
        }
    }
}

/// Quantifier-free Presburger formula.
///
/// Atoms keep their left-hand side free of constants: `Threshold { expr, op, bound }`
/// reads `expr op bound`, `Remainder { expr, modulus, residue }` reads
/// `expr ≡ residue (mod modulus)` with `0 ≤ residue < modulus` and `modulus ≥ 2`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Formula {
    True,
    False,
    Threshold { expr: LinExpr, op: CmpOp, bound: i64 },
    Remainder { expr: LinExpr, modulus: i64, residue: i64 },
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Implies(Box<Formula>, Box<Formula>),
}

impl Formula {
    /// `lhs op rhs`, with constants moved to the right.
    pub fn cmp(lhs: LinExpr, op: CmpOp, rhs: LinExpr) -> Formula {
        let diff = lhs.minus(&rhs);
        let bound = -diff.constant;
        Formula::Threshold { expr: diff.without_constant(), op, bound }
    }

    pub fn ge(lhs: LinExpr, rhs: LinExpr) -> Formula {
        Formula::cmp(lhs, CmpOp::Ge, rhs)
    }

    pub fn le(lhs: LinExpr, rhs: LinExpr) -> Formula {
        Formula::cmp(lhs, CmpOp::Le, rhs)
    }

    pub fn eq(lhs: LinExpr, rhs: LinExpr) -> Formula {
        Formula::cmp(lhs, CmpOp::Eq, rhs)
    }

    /// `name op k` for a single variable.
    pub fn var_cmp(name: &str, op: CmpOp, k: i64) -> Formula {
        Formula::Threshold { expr: LinExpr::var(name), op, bound: k }
    }

    pub fn remainder(expr: LinExpr, modulus: i64, residue: i64) -> Result<Formula> {
        if modulus < 2 {
            return Err(Error::BadModulus(modulus));
        }
        let shift = expr.constant_term();
        Ok(Formula::Remainder {
            expr: expr.without_constant(),
            modulus,
            residue: (residue - shift).rem_euclid(modulus),
        })
    }

    pub fn not(f: Formula) -> Formula {
        match f {
            Formula::True => Formula::False,
            Formula::False => Formula::True,
            Formula::Not(inner) => *inner,
            other => Formula::Not(Box::new(other)),
        }
    }

    /// Conjunction with constant folding and flattening.
    pub fn and(parts: impl IntoIterator<Item = Formula>) -> Formula {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Formula::True => {}
                Formula::False => return Formula::False,
                Formula::And(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Formula::True,
            1 => out.pop().unwrap(),
            _ => Formula::And(out),
        }
    }

    /// Disjunction with constant folding and flattening.
    pub fn or(parts: impl IntoIterator<Item = Formula>) -> Formula {
        let mut out = Vec::new();
        for p in parts {
            match p {
                Formula::False => {}
                Formula::True => return Formula::True,
                Formula::Or(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Formula::False,
            1 => out.pop().unwrap(),
            _ => Formula::Or(out),
        }
    }

    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Threshold { expr, .. } | Formula::Remainder { expr, .. } => {
                out.extend(expr.terms().keys().cloned());
            }
            Formula::Not(f) => f.collect_vars(out),
            Formula::And(fs) | Formula::Or(fs) => fs.iter().for_each(|f| f.collect_vars(out)),
            Formula::Implies(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn eval(&self, a: &Assignment) -> Result<bool> {
        Ok(match self {
            Formula::True => true,
            Formula::False => false,
            Formula::Threshold { expr, op, bound } => op.holds(expr.eval(a)?, *bound as i128),
            Formula::Remainder { expr, modulus, residue } => {
                expr.eval(a)?.rem_euclid(*modulus as i128) == *residue as i128
            }
            Formula::Not(f) => !f.eval(a)?,
            Formula::And(fs) => {
                for f in fs {
                    if !f.eval(a)? {
                        return Ok(false);
                    }
                }
                true
            }
            Formula::Or(fs) => {
                for f in fs {
                    if f.eval(a)? {
                        return Ok(true);
                    }
                }
                false
            }
            Formula::Implies(x, y) => !x.eval(a)? || y.eval(a)?,
        })
    }

    /// Replaces variables by linear expressions.
    pub fn substitute(&self, map: &HashMap<String, LinExpr>) -> Formula {
        match self {
            Formula::True | Formula::False => self.clone(),
            Formula::Threshold { expr, op, bound } => {
                let e = expr.substitute(map);
                Formula::cmp(e, *op, LinExpr::constant(*bound))
            }
            Formula::Remainder { expr, modulus, residue } => {
                Formula::remainder(expr.substitute(map), *modulus, *residue).expect("modulus already validated")
            }
            Formula::Not(f) => Formula::Not(Box::new(f.substitute(map))),
            Formula::And(fs) => Formula::And(fs.iter().map(|f| f.substitute(map)).collect()),
            Formula::Or(fs) => Formula::Or(fs.iter().map(|f| f.substitute(map)).collect()),
            Formula::Implies(a, b) => Formula::Implies(Box::new(a.substitute(map)), Box::new(b.substitute(map))),
        }
    }

    /// Fixes some variables to constants.
    pub fn fix(&self, values: &Assignment) -> Formula {
        let map = values.iter().map(|(v, c)| (v.clone(), LinExpr::constant(*c))).collect();
        self.substitute(&map)
    }

    pub fn rename(&self, f: &dyn Fn(&str) -> String) -> Formula {
        let map = self
            .free_vars()
            .into_iter()
            .map(|v| {
                let e = LinExpr::var(f(&v));
                (v, e)
            })
            .collect();
        self.substitute(&map)
    }

    /// Negation-normal form in which no atom is negated.
    ///
    /// `Implies` is expanded, negated threshold atoms flip to the integer
    /// complement and negated remainder atoms become a disjunction over the
    /// other residues.
    pub fn normalize(&self) -> Formula {
        self.nnf(false)
    }

    fn nnf(&self, negate: bool) -> Formula {
        match self {
            Formula::True => {
                if negate {
                    Formula::False
                } else {
                    Formula::True
                }
            }
            Formula::False => {
                if negate {
                    Formula::True
                } else {
                    Formula::False
                }
            }
            Formula::Threshold { expr, op, bound } => {
                if expr.is_constant() {
                    let v = op.holds(0, *bound as i128) != negate;
                    return if v { Formula::True } else { Formula::False };
                }
                let op = if negate {
                    match op {
                        CmpOp::Lt => CmpOp::Ge,
                        CmpOp::Le => CmpOp::Gt,
                        CmpOp::Ge => CmpOp::Lt,
                        CmpOp::Gt => CmpOp::Le,
                        CmpOp::Eq => {
                            return Formula::or([
                                Formula::Threshold { expr: expr.clone(), op: CmpOp::Le, bound: bound - 1 },
                                Formula::Threshold { expr: expr.clone(), op: CmpOp::Ge, bound: bound + 1 },
                            ])
                        }
                    }
                } else {
                    *op
                };
                // Strict comparisons become non-strict over the integers.
                match op {
                    CmpOp::Lt => Formula::Threshold { expr: expr.clone(), op: CmpOp::Le, bound: bound - 1 },
                    CmpOp::Gt => Formula::Threshold { expr: expr.clone(), op: CmpOp::Ge, bound: bound + 1 },
                    op => Formula::Threshold { expr: expr.clone(), op, bound: *bound },
                }
            }
            Formula::Remainder { expr, modulus, residue } => {
                if expr.is_constant() {
                    let v = (0i64.rem_euclid(*modulus) == *residue) != negate;
                    return if v { Formula::True } else { Formula::False };
                }
                if negate {
                    Formula::or((0..*modulus).filter(|r| r != residue).map(|r| Formula::Remainder {
                        expr: expr.clone(),
                        modulus: *modulus,
                        residue: r,
                    }))
                } else {
                    self.clone()
                }
            }
            Formula::Not(f) => f.nnf(!negate),
            Formula::And(fs) => {
                let parts = fs.iter().map(|f| f.nnf(negate));
                if negate {
                    Formula::or(parts)
                } else {
                    Formula::and(parts)
                }
            }
            Formula::Or(fs) => {
                let parts = fs.iter().map(|f| f.nnf(negate));
                if negate {
                    Formula::and(parts)
                } else {
                    Formula::or(parts)
                }
            }
            Formula::Implies(a, b) => {
                if negate {
                    Formula::and([a.nnf(false), b.nnf(true)])
                } else {
                    Formula::or([a.nnf(true), b.nnf(false)])
                }
            }
        }
    }

    /// Number of AST nodes.
    pub fn size(&self) -> usize {
        match self {
            Formula::True | Formula::False | Formula::Threshold { .. } | Formula::Remainder { .. } => 1,
            Formula::Not(f) => 1 + f.size(),
            Formula::And(fs) | Formula::Or(fs) => 1 + fs.iter().map(Formula::size).sum::<usize>(),
            Formula::Implies(a, b) => 1 + a.size() + b.size(),
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::True => write!(f, "true"),
            Formula::False => write!(f, "false"),
            Formula::Threshold { expr, op, bound } => write!(f, "{} {} {}", expr, op.symbol(), bound),
            Formula::Remainder { expr, modulus, residue } => {
                write!(f, "({}) % {} = {}", expr, modulus, residue)
            }
            Formula::Not(inner) => write!(f, "!({})", inner),
            Formula::And(fs) => write_joined(f, fs, " & ", "true"),
            Formula::Or(fs) => write_joined(f, fs, " | ", "false"),
            Formula::Implies(a, b) => write!(f, "(!({}) | ({}))", a, b),
        }
    }
}

fn write_joined(f: &mut fmt::Formatter<'_>, fs: &[Formula], sep: &str, empty: &str) -> fmt::Result {
    if fs.is_empty() {
        return write!(f, "{}", empty);
    }
    for (i, x) in fs.iter().enumerate() {
        if i > 0 {
            write!(f, "{}", sep)?;
        }
        match x {
            Formula::And(_) | Formula::Or(_) => write!(f, "({})", x)?,
            _ => write!(f, "{}", x)?,
        }
    }
    Ok(())
}
