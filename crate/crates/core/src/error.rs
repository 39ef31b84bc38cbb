use thiserror::Error;

/// Errors raised by the library. Solver non-convergence and failed
/// certification are reported states, never errors.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RmacError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid space: {0}")]
    InvalidSpace(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("index {index} out of range for space of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("empty sample list")]
    EmptySamples,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid mechanism: {0}")]
    InvalidMechanism(String),
    #[error("arity mismatch: expected {expected} opponent actions, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("exact evaluation unsupported for {0}; use Monte Carlo")]
    ExactUnsupported(String),
    #[error("valuation {valuation} is not defined for mechanism {mechanism}")]
    ValuationMismatch { valuation: String, mechanism: String },
    #[error("invalid data-player index {index} (dataset has {len} entries)")]
    InvalidPlayer { index: usize, len: usize },
    #[error("leave-one-out opponent distribution is empty (single-entry dataset)")]
    SingleEntryDataset,
    #[error("enumeration budget exceeded: {required} profiles required, budget {budget}")]
    BudgetExceeded { required: u128, budget: u128 },
    #[error("equilibrium computation failed certification: achieved eps {achieved:.3e} > {target:.3e}")]
    EquilibriumNotCertified { achieved: f64, target: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{}", crate::experiment::render_issues(.0))]
    InvalidSpec(Vec<crate::experiment::SpecIssue>),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for RmacError {
    fn from(e: std::io::Error) -> Self {
        RmacError::Io(e.to_string())
    }
}

impl From<csv::Error> for RmacError {
    fn from(e: csv::Error) -> Self {
        RmacError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, RmacError>;
