use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("point is not orthonormal: ||B^T B - I||_F = {residual:e}")]
    NotOrthonormal { residual: f64 },

    #[error("degenerate retraction: smallest singular value {sigma_min:e}")]
    DegenerateRetraction { sigma_min: f64 },

    #[error("ill-conditioned covariance: {0}")]
    IllConditioned(String),

    #[error("non-finite value: {what} (theta = {theta:?})")]
    NonFinite { what: String, theta: Vec<f64> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("divergence after {iter} iterations: {consecutive} consecutive non-finite lower bounds")]
    Divergence {
        iter: usize,
        consecutive: usize,
        /// Last parameter value for which the lower bound was finite.
        last_good: Option<Box<crate::factor::VariationalParams<f64>>>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
