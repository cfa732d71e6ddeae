use thiserror::Error;

use crate::transport::TransportError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected {expected} matrix, found {}x{}", found.0, found.1)]
    Dimension { expected: &'static str, found: (usize, usize) },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("state is not normalized (squared norm {0})")]
    NotNormalized(f64),

    #[error("matrix contains NaN or infinite entries")]
    NonFinite,

    #[error("operator is not Hermitian")]
    NotHermitian,

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("steering branch has probability {probability:e}, below the degenerate threshold")]
    DegenerateBranch { probability: f64 },

    #[error("group {0} has no rounds")]
    EmptyGroup(&'static str),

    #[error("record is missing Alice's secret basis/outcome (round {0})")]
    MissingSecrets(u32),

    #[error("probability {p} is on the boundary; Fisher information is 0/0 there (slope {slope})")]
    BoundaryProbability { p: f64, slope: f64 },

    #[error("phase points must be strictly increasing: {0:?}")]
    CoincidentPhases([f64; 3]),

    #[error("no counts in any basis")]
    NoData,

    #[error("tomography counts are incomplete or malformed: {0}")]
    Tomography(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("calibration aborted: fidelity to singlet {fidelity:.6} below threshold {threshold}")]
    CalibrationAbort { fidelity: f64, threshold: f64 },

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Transport(#[from] TransportError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
