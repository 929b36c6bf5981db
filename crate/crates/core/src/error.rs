use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inputs violate a documented precondition (grid too small, dt too large, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// The operation is defined only for some dynamics variants.
    #[error("not applicable: {0}")]
    NotApplicable(String),

    /// Argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Regime-specific routine called on data from another regime.
    #[error("regime mismatch: expected {expected}, found lambda0 = {lambda0:.3e} (eps_crit = {eps:.3e})")]
    Regime {
        expected: &'static str,
        lambda0: f64,
        eps: f64,
    },

    /// An iterative method failed to converge.
    #[error("convergence failure in {what}: {detail}")]
    Convergence { what: &'static str, detail: String },

    /// Numerical guard tripped (positivity loss, moment blow-up, unresolved tail).
    #[error("numerical guard: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
