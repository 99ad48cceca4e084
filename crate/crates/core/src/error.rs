use thiserror::Error;

/// Errors raised by the model, the bounds and the optimizer.
#[derive(Debug, Error)]
pub enum IsacError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("geometry infeasible: {0}")]
    GeometryInfeasible(String),

    /// DoA at endfire (cos φ = 0) makes the angle scaling constant infinite.
    #[error("geometry singular for device {device}: {reason}")]
    GeometrySingular { device: usize, reason: String },

    #[error("singular Fisher information for device {device}: {reason}")]
    SingularInformation { device: usize, reason: String },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("pulse evaluation error: {0}")]
    Evaluation(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IsacError>;
