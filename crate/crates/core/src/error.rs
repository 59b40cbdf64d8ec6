use thiserror::Error;

use crate::game::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("game spec failed validation:\n{0}")]
    InvalidGame(ValidationReport),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("action {action} is not admissible in state {state} of class {class}")]
    InadmissibleAction {
        class: usize,
        state: usize,
        action: usize,
    },

    #[error(
        "class {class}: policy {policy} induces {recurrent} recurrent communicating classes \
         (Assumption 2 requires exactly one)"
    )]
    MultipleRecurrentClasses {
        class: usize,
        policy: usize,
        recurrent: usize,
    },

    #[error("class {class} has {count} deterministic policies, above the enumeration cap {cap}")]
    PolicyCapExceeded { class: usize, count: u128, cap: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite {what}")]
    NonFinite { what: String },

    #[error("protocol outside its domain: {0}")]
    ProtocolDomain(String),

    #[error(
        "class {class}: switch-rate row sum {row_sum} for policy {policy} exceeds the revision \
         rate {revision_rate} (Assumption 3)"
    )]
    Assumption3 {
        class: usize,
        policy: usize,
        row_sum: f64,
        revision_rate: f64,
    },

    #[error("integration aborted at t = {time}: {reason}")]
    IntegrationAborted { time: f64, reason: String },

    #[error("{0}")]
    Simulation(String),

    #[error("spec file error at {path} (line {line}, column {column}): {message}")]
    Schema {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{0}")]
    Unsupported(String),

    #[error("i/o: {0}")]
    Io(String),
}
