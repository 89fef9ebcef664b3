use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected dimension {expected}, got {got}")]
    InputShape { expected: usize, got: usize },

    #[error("noise variance must be positive, got {0}")]
    InvalidNoise(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate direction: estimated L2 norm {norm:e} is below {threshold:e}")]
    DegenerateDirection { norm: f64, threshold: f64 },

    #[error("optimization failed: all {restarts} starts produced a non-finite loss ({detail})")]
    OptimizationFailure { restarts: usize, detail: String },

    #[error("fit with k = {k} hidden units failed: {source}")]
    FitFailed {
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("ambiguous clustering: true units {first} and {second} are {distance} apart (< 2 * cluster_tol)")]
    AmbiguousClustering {
        first: usize,
        second: usize,
        distance: f64,
    },

    #[error("true unit {0} has no matching unit within the cluster tolerance")]
    UnmatchedTrueUnit(usize),

    #[error("invalid decomposition: {0}")]
    InvalidDecomposition(String),

    #[error("degenerate function {index} in the derivative family: estimated norm {norm:e}")]
    DegenerateFunction { index: usize, norm: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::InputShape { expected, got })
    }
}
