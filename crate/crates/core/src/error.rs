use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MnlError {
    #[error("item index {index} out of range for {n_items} items")]
    InvalidItem { index: usize, n_items: usize },

    #[error("invalid assortment: {0}")]
    InvalidAssortment(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("design matrix is singular (minimum eigenvalue {min_eigenvalue:.3e})")]
    SingularDesign { min_eigenvalue: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("enumeration guard exceeded: {count} candidates > limit {limit}")]
    TooLarge { count: u128, limit: u128 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),

    #[error("policy protocol violation: {0}")]
    Protocol(String),

    #[error("round {round}: {source}")]
    AtRound {
        round: usize,
        #[source]
        source: Box<MnlError>,
    },

    #[error("replication {replication} (seed {seed:#018x}) failed: {source}")]
    Replication {
        replication: usize,
        seed: u64,
        #[source]
        source: Box<MnlError>,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl MnlError {
    /// Strips round/replication annotations.
    pub fn root(&self) -> &MnlError {
        match self {
            MnlError::AtRound { source, .. } | MnlError::Replication { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<std::io::Error> for MnlError {
    fn from(err: std::io::Error) -> Self {
        MnlError::Io(err.to_string())
    }
}

impl From<csv::Error> for MnlError {
    fn from(err: csv::Error) -> Self {
        MnlError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, MnlError>;
