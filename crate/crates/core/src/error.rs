use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("matrix is singular to working precision (pivot magnitude {pivot:e})")]
    SingularMatrix { pivot: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("time {t} outside trajectory range [{t0}, {t1}]")]
    OutOfRange { t: f64, t0: f64, t1: f64 },

    #[error("state diverged (non-finite component) at t = {time}")]
    StateDivergence { time: f64 },

    #[error("sensitivity diverged (non-finite entry) at step {step}")]
    SensitivityDivergence { step: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("unknown method `{0}` (expected one of pbsr, exp, pbs, fs, fd)")]
    UnknownMethod(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Numerical divergence of either the state or the sensitivity recursion.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::StateDivergence { .. } | Error::SensitivityDivergence { .. }
        )
    }

    /// Errors caused by bad user input rather than by the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::UnknownModel(_)
                | Error::UnknownMethod(_)
                | Error::Config(_)
                | Error::InvalidGrid(_)
                | Error::OutOfRange { .. }
        )
    }
}
