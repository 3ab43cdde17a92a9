use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A DGP table violates one of its invariants. The message names it.
    #[error("invalid DGP: {0}")]
    InvalidDgp(String),

    #[error(
        "overlap violation: treatment {treatment} has propensity {propensity} in stratum {stratum}; \
         propensities must lie strictly inside (0, 1)"
    )]
    OverlapViolation {
        treatment: usize,
        stratum: i64,
        propensity: f64,
    },

    #[error("singular fit: {0}")]
    SingularFit(String),

    #[error("treatment {treatment}: residualized treatment has no variation")]
    NoVariation { treatment: usize },

    #[error("not estimable: {0}")]
    NotEstimable(String),

    #[error("unknown preset `{name}`; valid presets: {valid}")]
    UnknownPreset { name: String, valid: String },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
