//! Quantifier-free Presburger arithmetic: formulas, parsing, an exact
//! satisfiability procedure over the naturals, and SMT-LIB2 export.

mod error;
mod formula;
mod parser;
mod smtlib;
pub mod solver;

pub use error::{Error, Result};
pub use formula::{Assignment, CmpOp, Formula, LinExpr};
pub use parser::{is_identifier, parse_formula, parse_linexpr};
pub use smtlib::{export_smtlib, export_smtlib_with};
pub use solver::{
    check_implication, default_budget, set_default_budget, solve, Implication, SolveResult, Solver, DEFAULT_NODE_BUDGET,
};
