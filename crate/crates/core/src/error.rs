use thiserror::Error;

/// Errors raised by field construction, evaluation and analysis.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GvfError {
    #[error("constraint gradients are rank deficient (sigma_min = {sigma_min:e}, threshold = {threshold:e})")]
    RankDeficient { sigma_min: f64, threshold: f64 },

    #[error("retraction did not reach tolerance after {iters} iterations (residual {residual:e})")]
    RetractionDiverged { iters: usize, residual: f64 },

    #[error("point is outside the retraction capture basin (residual {residual:e} > {capture:e})")]
    OutsideCaptureBasin { residual: f64, capture: f64 },

    #[error("non-finite value: {0}")]
    NumericFailure(String),

    #[error("Newton refinement diverged: {0}")]
    NewtonDiverged(String),

    #[error("singular Jacobian in Newton refinement")]
    SingularJacobian,

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("scenario file: {0}")]
    ScenarioFile(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for GvfError {
    fn from(err: std::io::Error) -> Self {
        GvfError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, GvfError>;
