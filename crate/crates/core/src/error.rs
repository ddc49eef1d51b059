use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid norm exponent {0}: p must be >= 1")]
    InvalidExponent(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("zero direction: gradient or momentum vanished")]
    ZeroGradient,

    #[error("projection onto the {0} ball is not supported (only p in {{1, 2, inf}})")]
    UnsupportedProjection(String),

    #[error(
        "Adam division guard: second-moment entry ({row}, {col}) is zero with epsilon = 0; \
         the initialization must satisfy grad[c,j]^2 >= omega > 0 for every entry"
    )]
    DivisionGuard { row: usize, col: usize },

    #[error("data is not separable: best margin {gamma} <= 0")]
    NonSeparable { gamma: f64 },

    #[error("could not generate separable data in {attempts} attempts")]
    GenerationFailed { attempts: usize },

    #[error("instance too large for brute force: k*d = {0} > 6")]
    InstanceTooLarge(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown fixture '{0}'")]
    UnknownFixture(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numbers rather than by the request.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalFailure(_)
                | Error::DegenerateInput(_)
                | Error::ZeroGradient
                | Error::DivisionGuard { .. }
                | Error::NonSeparable { .. }
                | Error::GenerationFailed { .. }
        )
    }
}
