use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("measurement graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("mixed dimensions: found both d = {first} and d = {second}")]
    MixedDimensions { first: usize, second: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("rank-deficient block {block} in retraction")]
    RankDeficient { block: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
