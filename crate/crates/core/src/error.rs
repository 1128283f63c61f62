use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("integral has no numerical mass (integrand is -inf everywhere it was probed)")]
    EmptyMass,

    /// Adaptive quadrature did not reach the requested tolerance. `log_estimate`
    /// is the best available value of the log-integral (`+inf` for a detected
    /// divergence).
    #[error("quadrature tolerance not met: log-estimate {log_estimate}, relative error {rel_error:e}")]
    ToleranceFailure { log_estimate: f64, rel_error: f64 },

    #[error("integrand returned NaN or +inf at {at}")]
    NonFiniteIntegrand { at: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("diagonal entry {index} is not strictly positive ({value})")]
    NonPositiveDiagonal { index: usize, value: f64 },

    #[error("k-schedule overflow: exp({exponent}) is not representable")]
    ScheduleOverflow { exponent: f64 },

    #[error("degenerate importance sample: effective sample size {ess:.1} < {min}")]
    DegenerateImportanceSample { ess: f64, min: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("replicate {index} (seed {seed}) failed: {source}")]
    Replicate {
        index: u64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::EmptyMass
            | Error::ToleranceFailure { .. }
            | Error::NonFiniteIntegrand { .. }
            | Error::NotPositiveDefinite
            | Error::ScheduleOverflow { .. }
            | Error::DegenerateImportanceSample { .. } => true,
            Error::Replicate { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
