use crate::timestep::Trajectory;

/// Errors raised across the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {field}: expected {expected}, got {got}")]
    Dimension {
        field: String,
        expected: String,
        got: String,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported ansatz variant: {0}")]
    UnsupportedVariant(String),
    #[error("shift out of range: amount {amount} outside [{min}, {max}]")]
    ShiftOutOfRange { amount: f64, min: f64, max: f64 },
    #[error("basis is rank deficient (smallest/largest singular value ratio {ratio:e})")]
    RankDeficient { ratio: f64 },
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("newton iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NewtonMaxIter { iterations: usize, residual: f64 },
    #[error("line search failed after {iterations} iterations (residual {residual:e})")]
    LineSearch { iterations: usize, residual: f64 },
    #[error("singular jacobian in newton iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("time step {step} at t = {time} failed: {source}")]
    StepFailure {
        step: usize,
        time: f64,
        source: Box<Error>,
        partial: Box<Trajectory>,
    },
    #[error("blow-up detected at t = {time}: state norm {norm:e}")]
    BlowUp {
        time: f64,
        norm: f64,
        partial: Box<Trajectory>,
    },
    #[error("no detectable wave in snapshot {index}")]
    UndetectableWave { index: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing inputs: {}", .0.join(", "))]
    MissingInputs(Vec<String>),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(field: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            field: field.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Short machine-readable kind tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::UnsupportedVariant(_) => "unsupported-variant",
            Error::ShiftOutOfRange { .. } => "shift-out-of-range",
            Error::RankDeficient { .. } => "rank-deficient",
            Error::Singular(_) => "singular",
            Error::NewtonMaxIter { .. } => "newton-max-iter",
            Error::LineSearch { .. } => "line-search",
            Error::SingularJacobian { .. } => "singular-jacobian",
            Error::StepFailure { .. } => "step-failure",
            Error::BlowUp { .. } => "blow-up",
            Error::UndetectableWave { .. } => "undetectable-wave",
            Error::Config(_) => "config",
            Error::MissingInputs(_) => "missing-inputs",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
        }
    }
}
