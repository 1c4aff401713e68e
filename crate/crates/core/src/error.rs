//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Errors produced while building models, solving for the stationary
/// distribution, or running the simulation oracle.
#[derive(Debug, Error)]
pub enum Error {
    /// Inputs have inconsistent shapes (vector/matrix dimensions).
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A model parameter violates its construction invariants.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A spectral precondition of the solver does not hold for this model.
    /// `clause` names the violated condition so callers can report it.
    #[error("assumption violated ({clause}): {detail}")]
    Assumption { clause: String, detail: String },

    /// A numerical routine failed (non-convergence, singularity, loss of
    /// a structural property such as realness).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Results disagree beyond a configured threshold.
    #[error("threshold exceeded: {0}")]
    Threshold(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
