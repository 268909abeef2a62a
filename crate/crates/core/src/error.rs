use thiserror::Error;

/// Errors produced by simulation, configuration and analysis code.
#[derive(Debug, Error)]
pub enum Error {
    /// A constructor argument is out of range (zero-length trace, zero
    /// packet count, negative rate, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A configuration violates a cross-field constraint; the message names
    /// the constraint.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Combination enumeration exceeded its partial-solution budget.
    #[error("enumeration budget exceeded: {visited} search nodes (cap {cap})")]
    BudgetExceeded { visited: u64, cap: u64 },

    /// Input data (replay rows, catalog rows) failed to parse.
    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors that indicate a bad configuration rather than a
    /// runtime failure. CLI front ends map these to exit code 2.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_) | Error::InvalidConfig(_) | Error::Malformed(_)
        )
    }
}
