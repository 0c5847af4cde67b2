use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside the domain an operation is defined on.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An iterative scheme failed to reach its tolerance. Where a partial
    /// result is meaningful it is carried along.
    #[error("no convergence: {reason} (best estimate {value:.6e}, error {error:.3e})")]
    NoConvergence {
        reason: String,
        value: f64,
        error: f64,
    },

    /// Faster electrons passed slower ones between buncher and target, so the
    /// single-valued ballistic current model no longer applies.
    #[error("electron overtaking: {0}")]
    Overtaking(String),

    /// A density matrix left the physical domain by more than the repair
    /// threshold.
    #[error("state not physical: {0}")]
    UnphysicalState(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
