use thiserror::Error;

/// Errors raised by the modelling toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("region id {id} out of range for a graph with {n} regions")]
    RegionOutOfRange { id: usize, n: usize },
    #[error("self-loop on region {0}")]
    SelfLoop(usize),
    #[error("region {0} has no neighbours")]
    IsolatedRegion(usize),
    #[error("adjacency graph is disconnected ({components} components; region {example} unreachable from region 0)")]
    Disconnected { components: usize, example: usize },
    #[error("spatial smoothing parameter must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("design matrix is rank deficient (rank {rank} < {columns} columns)")]
    RankDeficient { rank: usize, columns: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is singular: {0}")]
    Singular(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate scale: {0}")]
    DegenerateScale(String),
    #[error("eigendecomposition failed: {0}")]
    Decomposition(String),
    #[error("rejection sampler gave up after {attempts} attempts")]
    RejectionExhausted { attempts: u64 },
    #[error("non-finite log density at iteration {iteration}: {state}")]
    NonFinite { iteration: usize, state: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by numerics rather than malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::Singular(_)
                | Error::Decomposition(_)
                | Error::RejectionExhausted { .. }
                | Error::NonFinite { .. }
                | Error::DegenerateScale(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Csv(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
