//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Variants are grouped by
//! failure class so callers can match on what went wrong rather than on
//! message strings.

/// Errors produced by graph loading, protocol construction, training, and
/// numerical kernels.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Matrix or vector dimensions do not line up for the requested kernel.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An API precondition was violated (out-of-range index, label outside a
    /// head's class set, non-scalar loss node, and similar caller bugs).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A data file could not be parsed. Carries the path and 1-based line.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Structural validation of a graph or manifest failed.
    #[error("validation failed: {0}")]
    Validation(String),

    /// An imbalance protocol could not be satisfied by the given graph.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Bad experiment configuration (unknown field, unparsable flag value).
    #[error("config error: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Divergence(String),

    /// A pipeline stage failed for one seed; wraps the underlying error
    /// so diagnostics carry the run context.
    #[error("seed {seed}, stage {stage}: {source}")]
    Stage {
        seed: u64,
        stage: String,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for a [`Error::Shape`] with a formatted message.
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Shorthand for a [`Error::Contract`] with a formatted message.
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Tags an error with the seed and pipeline stage it occurred in.
    pub fn in_stage(seed: u64, stage: &str, source: Error) -> Self {
        Error::Stage {
            seed,
            stage: stage.to_string(),
            source: Box::new(source),
        }
    }
}
