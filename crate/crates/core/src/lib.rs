//! Population protocols: semantics, stage-graph certificates and their
//! checker, automatic stage-graph synthesis, an explicit-state oracle,
//! stochastic simulation, and generators for concrete protocols.

pub mod model;
pub mod oracle;
pub mod protolib;
pub mod sim;
pub mod stagegraph;
pub mod verifier;

pub use model::{Configuration, InputVector, ModelError, Protocol, Transition};
