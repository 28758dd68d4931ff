use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, KinError>;

#[derive(Debug, Error)]
pub enum KinError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("crop window (x={x}, y={y}, side={side}) does not fit a {width}x{height} image")]
    WindowOutOfBounds {
        x: usize,
        y: usize,
        side: usize,
        width: usize,
        height: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("input too small: {0}")]
    TooSmall(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("ICA did not converge within {iterations} iterations (last change {last_change:.3e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    #[error("not symmetric: max asymmetry {0:.3e}")]
    NotSymmetric(f64),

    #[error("single-class input: {0}")]
    SingleClass(String),

    #[error("no derangement exists: {0}")]
    NoDerangement(String),

    #[error("manifest {path}, line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing artifact: {0}")]
    Missing(String),
}

impl KinError {
    /// Short machine-readable category, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            KinError::Io { .. } => "io",
            KinError::Decode { .. } => "decode",
            KinError::WindowOutOfBounds { .. } => "window",
            KinError::Degenerate(_) => "degenerate",
            KinError::TooSmall(_) => "too-small",
            KinError::DimensionMismatch(_) => "dimension",
            KinError::RankDeficient(_) => "rank",
            KinError::NoConvergence { .. } => "convergence",
            KinError::NotSymmetric(_) => "symmetry",
            KinError::SingleClass(_) => "single-class",
            KinError::NoDerangement(_) => "derangement",
            KinError::Manifest { .. } => "manifest",
            KinError::Format(_) => "format",
            KinError::InvalidArgument(_) => "argument",
            KinError::Missing(_) => "missing",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KinError::Io {
            path: path.into(),
            source,
        }
    }
}
