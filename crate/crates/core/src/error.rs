use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: String },

    #[error("singular system ({context}); {advice}")]
    Singular { context: String, advice: String },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("column `{column}` has zero variance")]
    ZeroVariance { column: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: String, iteration: usize },

    #[error("selection kept no samples out of {attempted} (bias rate {r}); increase the base sample size")]
    EmptySelection { attempted: usize, r: f64 },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric value `{value}` in column `{column}` at data row {row}")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },

    #[error("target value {value} at data row {row} is not 0 or 1")]
    InvalidTarget { row: usize, value: f64 },

    #[error("dataset is empty after {0}")]
    EmptyDataset(String),

    #[error("only one class present in the target")]
    SingleClass,

    #[error("environment column `{0}` has a single distinct value")]
    SingleEnvironment(String),

    #[error("invalid configuration:{}", .0.iter().map(|e| format!("\n  - {e}")).collect::<String>())]
    Config(Vec<String>),

    #[error("ensemble member {index} failed: {source}")]
    Member {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn mismatch(what: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            found,
        }
    }
}
