//! SMT-LIB2 export over the `QF_LIA` logic.

use std::collections::BTreeSet;
use std::fmt::Write;

use crate::formula::{CmpOp, Formula, LinExpr};

fn symbol(name: &str) -> String {
    let simple = !name.is_empty()
        && !name.starts_with(|c: char| c.is_ascii_digit())
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "~!@$%^&*_-+=<>.?/".contains(c));
    if simple {
        name.to_string()
    } else {
        format!("|{}|", name)
    }
}

fn int(v: i64) -> String {
    if v < 0 {
        format!("(- {})", -(v as i128))
    } else {
        v.to_string()
    }
}

fn sum(e: &LinExpr) -> String {
    let mut parts: Vec<String> = e
        .terms()
        .iter()
        .map(|(v, c)| if *c == 1 { symbol(v) } else { format!("(* {} {})", int(*c), symbol(v)) })
        .collect();
    if e.constant_term() != 0 || parts.is_empty() {
        parts.push(int(e.constant_term()));
    }
    if parts.len() == 1 {
        parts.pop().unwrap()
    } else {
        format!("(+ {})", parts.join(" "))
    }
}

struct Exporter {
    aux: Vec<String>,
    taken: BTreeSet<String>,
}

impl Exporter {
    fn fresh(&mut self) -> String {
        let mut i = self.aux.len();
        loop {
            let name = format!("_k{}", i);
            if !self.taken.contains(&name) {
                self.taken.insert(name.clone());
                self.aux.push(name.clone());
                return name;
            }
            i += 1;
        }
    }

    fn term(&mut self, f: &Formula) -> String {
        match f {
            Formula::True => "true".into(),
            Formula::False => "false".into(),
            Formula::Threshold { expr, op, bound } => {
                let op = match op {
                    CmpOp::Lt => "<",
                    CmpOp::Le => "<=",
                    CmpOp::Eq => "=",
                    CmpOp::Ge => ">=",
                    CmpOp::Gt => ">",
                };
                format!("({} {} {})", op, sum(expr), int(*bound))
            }
            Formula::Remainder { expr, modulus, residue } => {
                let k = self.fresh();
                format!(
                    "(= {} (+ (* {} {}) {}))",
                    sum(&expr.without_constant()),
                    modulus,
                    symbol(&k),
                    int(*residue - expr.constant_term())
                )
            }
            Formula::Not(g) => format!("(not {})", self.term(g)),
            Formula::And(gs) => self.nary("and", gs, "true"),
            Formula::Or(gs) => self.nary("or", gs, "false"),
            Formula::Implies(a, b) => format!("(=> {} {})", self.term(a), self.term(b)),
        }
    }

    fn nary(&mut self, op: &str, gs: &[Formula], empty: &str) -> String {
        match gs.len() {
            0 => empty.into(),
            1 => self.term(&gs[0]),
            _ => {
                let parts: Vec<String> = gs.iter().map(|g| self.term(g)).collect();
                format!("({} {})", op, parts.join(" "))
            }
        }
    }
}

/// Renders `f` as a standalone script. Free variables are natural numbers
/// unless listed in `int_vars`; each remainder atom gets its own integer
/// multiplier.
pub fn export_smtlib_with(f: &Formula, int_vars: &BTreeSet<String>) -> String {
    let nnf = f.normalize();
    let vars = f.free_vars();
    let mut ex = Exporter { aux: Vec::new(), taken: vars.clone() };
    let body = ex.term(&nnf);
    let mut out = String::new();
    out.push_str("(set-logic QF_LIA)\n");
    for v in &vars {
        let _ = writeln!(out, "(declare-fun {} () Int)", symbol(v));
    }
    for k in &ex.aux {
        let _ = writeln!(out, "(declare-fun {} () Int)", symbol(k));
    }
    for v in vars.iter().filter(|v| !int_vars.contains(*v)) {
        let _ = writeln!(out, "(assert (>= {} 0))", symbol(v));
    }
    let _ = writeln!(out, "(assert {})", body);
    out.push_str("(check-sat)\n");
    out
}

/// [`export_smtlib_with`] with every variable natural.
pub fn export_smtlib(f: &Formula) -> String {
    export_smtlib_with(f, &BTreeSet::new())
}
