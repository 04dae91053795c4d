use alloc::string::String;

/// Errors produced by the numerical kernels.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("unsupported measure: {0}")]
    UnsupportedMeasure(String),

    /// Adaptive quadrature ran out of budget. Carries the last estimate.
    #[error("quadrature did not converge (estimate {estimate:e}, error bound {error:e})")]
    Quadrature { estimate: f64, error: f64 },

    #[error("classification uncertain: tail estimate in [{lower:e}, {upper:e}]")]
    ClassificationUncertain { lower: f64, upper: f64 },

    #[error("estimator not applicable: {0}")]
    MethodMismatch(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("exact urn computation needs k <= {k_cap} and d <= {d_cap} (got k = {k}, d = {d}); use the Monte Carlo path")]
    CapsExceeded { k: usize, d: usize, k_cap: usize, d_cap: usize },

    #[error("state space budget exceeded: {0}")]
    Budget(String),

    #[error("duality check inconclusive: truncation defect {0:e}")]
    Inconclusive(f64),

    #[error("characteristic function inversion failed at x = {at}: {reason}")]
    Inversion { at: f64, reason: String },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
