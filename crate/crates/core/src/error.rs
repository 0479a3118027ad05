use thiserror::Error;

/// Errors raised across the library.
///
/// The variants are grouped so that the CLI can map them onto its exit codes:
/// configuration problems exit with 2, ill-posed recovery geometry with 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("index set error: {0}")]
    IndexSet(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("recovery is underdetermined: |R| = {r} must exceed |W| = {w}")]
    Underdetermined { r: usize, w: usize },

    #[error("ill-posed recovery: sigma_min = {sigma_min:e} is below the floor {floor:e}")]
    IllPosed { sigma_min: f64, floor: f64 },

    #[error("hole size |W| = {size} exceeds the SVD cap {cap}")]
    CapExceeded { size: usize, cap: usize },

    #[error("power iteration did not converge after {iters} iterations (last relative change {change:e})")]
    NoConvergence { iters: usize, change: f64 },

    #[error("operation requires box-shaped index sets: {0}")]
    NotBox(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that stem from the recovery geometry being ill-posed.
    pub fn is_ill_posed(&self) -> bool {
        matches!(
            self,
            Error::IllPosed { .. } | Error::Underdetermined { .. } | Error::CapExceeded { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
