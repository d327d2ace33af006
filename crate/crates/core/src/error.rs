use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not skew-symmetric (|Phi + Phi^T|_F = {residual:e})")]
    NonSkewInput { residual: f64 },

    #[error("matrix is not a rotation: {0}")]
    InvalidRotation(String),

    #[error("quaternion is not unit norm (|q|^2 = {norm_sq})")]
    InvalidQuaternion { norm_sq: f64 },

    #[error("invalid grid resolution: {0}")]
    InvalidResolution(String),

    #[error("degenerate concentration: pairwise singular value sums {sums:?} must exceed 1e-12")]
    DegenerateConcentration { sums: [f64; 3] },

    #[error("multivariate Laplace density is singular at the origin")]
    SingularAtOrigin,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("optimizer made no progress: step size fell below {min_step:e} after {iterations} iterations")]
    NoProgress { iterations: usize, min_step: f64 },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Numerical failures (as opposed to bad input) map to a distinct exit code in the CLI.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoProgress { .. }
                | Error::DegenerateConcentration { .. }
                | Error::SingularAtOrigin
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
