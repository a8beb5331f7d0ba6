use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("quantifiers unsupported (position {pos})")]
    Quantifier { pos: usize },

    #[error("modulus must be at least 2, got {0}")]
    BadModulus(i64),

    #[error("variable '{0}' is not assigned")]
    MissingVariable(String),

    #[error("solver budget exhausted after {0} search nodes")]
    BudgetExhausted(u64),
}

pub type Result<T> = std::result::Result<T, Error>;
