use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Source and detector closer than the singular-distance threshold.
    #[error("singular configuration: source {distance:.3e} m from detector {detector}")]
    SingularConfiguration { detector: usize, distance: f64 },

    /// A detector mean that is zero or negative; the likelihood is not defined there.
    #[error("degenerate mean count {mean} at detector {detector}")]
    DegenerateMean { detector: usize, mean: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    /// A statistic whose variance estimate collapsed to zero.
    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("city generation stopped after placing {placed} of {requested} buildings")]
    Packing { placed: usize, requested: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
