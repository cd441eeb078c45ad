use thiserror::Error;

/// Errors reported by the simulator and its experiment drivers.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid cache geometry: {0}")]
    Geometry(String),

    #[error("tree-PLRU needs a power-of-two associativity, got {0}")]
    TreeAssociativity(usize),

    #[error("victim requested for a set whose way {0} is still invalid")]
    InvalidWayPresent(usize),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("latency classes cannot be separated: {0}")]
    Unclassifiable(String),

    #[error("receiver period Tr={tr} is below one receiver iteration ({needed} cycles)")]
    InfeasiblePeriod { tr: u64, needed: u64 },

    #[error("trace line {line}: {msg}")]
    TraceParse { line: usize, msg: String },

    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, SimError>;
