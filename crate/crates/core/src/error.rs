use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty graph")]
    EmptyGraph,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("graph too large for eigendecomposition; use s_high_fast (N = {n}, cap = {cap})")]
    TooLarge { n: usize, cap: usize },

    #[error("zero-energy signal")]
    ZeroSignal,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("Beta wavelet requires normalized Laplacian")]
    RequiresNormalized,

    #[error("gamma undefined: training mask must contain both classes")]
    GammaUndefined,

    #[error("insufficient trials: {0} (need at least 100)")]
    InsufficientTrials(usize),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{}:{line}: {msg}", file.display())]
    Parse {
        file: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("checkpoint shape hash mismatch: stored {stored}, computed {computed}")]
    ShapeMismatch { stored: String, computed: String },

    #[error("unknown experiment '{name}'; available: {}", available.join(", "))]
    UnknownExperiment {
        name: String,
        available: Vec<&'static str>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("graph generation failed: {0}")]
    Generation(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::Generation(_) | Error::Numerical(_)
        )
    }
}
