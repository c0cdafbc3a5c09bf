use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("action mapping error: {0}")]
    Mapping(String),

    #[error("invalid value: {0}")]
    Domain(String),

    #[error("Gram matrix is rank deficient (pivot {pivot} of {dim}); use a positive ridge")]
    RankDeficient { pivot: usize, dim: usize },

    #[error("matrix is not positive definite at pivot {pivot}")]
    NotPositiveDefinite { pivot: usize },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("fitted Q-iteration produced non-finite values at iteration {iteration}")]
    QDivergence { iteration: usize },

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("no target-policy action matches a logged action; WIS is undefined")]
    NoOverlap,

    #[error("config error: {0}")]
    Config(String),

    #[error("experiment aborted: {failed} of {total} replications failed; first error: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
