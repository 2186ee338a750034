use thiserror::Error;

#[derive(Debug, Error)]
pub enum KnrError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("enumeration budget exceeded: {sequences} sequences > {budget}")]
    BudgetExceeded { sequences: f64, budget: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("maze layout line {line}: {reason}")]
    MazeLayout { line: usize, reason: String },

    #[error("episode {episode}: {source}")]
    Episode {
        episode: usize,
        #[source]
        source: Box<KnrError>,
    },

    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<KnrError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, KnrError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> KnrError {
    KnrError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(KnrError::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
