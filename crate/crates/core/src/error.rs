use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("metric factor is singular (condition number {condition:e})")]
    SingularMetric { condition: f64 },

    #[error("contraction rate beta = {beta} is outside [0, 1)")]
    BetaOutOfRange { beta: f64 },

    #[error("parameter {name} = {value} is out of range: {reason}")]
    ParameterOutOfRange {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("sampling region is empty")]
    EmptyRegion,

    #[error("non-finite state at step {step} (t = {time})")]
    NonFiniteState { step: usize, time: f64 },

    #[error("synchronisation condition violated: beta * exp(2 tau) = {value} >= 1")]
    ConditionViolated { value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// Stable machine-readable kind, used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::NotSymmetric { .. } => "not_symmetric",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::SingularMetric { .. } => "singular_metric",
            Error::BetaOutOfRange { .. } => "beta_out_of_range",
            Error::ParameterOutOfRange { .. } => "parameter_out_of_range",
            Error::EmptyRegion => "empty_region",
            Error::NonFiniteState { .. } => "non_finite_state",
            Error::ConditionViolated { .. } => "condition_violated",
            Error::Config(_) => "config",
        }
    }

    /// Whether the error stems from bad input rather than a numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::BetaOutOfRange { .. }
                | Error::ParameterOutOfRange { .. }
                | Error::EmptyRegion
                | Error::Config(_)
                | Error::DimensionMismatch { .. }
                | Error::ConditionViolated { .. }
        )
    }
}
