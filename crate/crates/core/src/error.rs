use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty fitting subset")]
    EmptySubset,
    #[error("invalid weight {value} at unit {index}")]
    InvalidWeight { index: usize, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("binary response has a single class ({0} only)")]
    SingleClass(u8),
    #[error("no respondents")]
    NoRespondents,
    #[error("no nonrespondents")]
    NoNonrespondents,
    #[error("infinite weight: respondent {index} has estimated propensity 0")]
    InfiniteWeight { index: usize },
    #[error("all nonresponse weights (1 - pi) vanish among respondents")]
    ZeroNonresponseWeights,
    #[error("degenerate stratification: constant score with {strata} strata")]
    DegenerateStratification { strata: usize },
    #[error("invalid stratum count {0}")]
    InvalidStrata(usize),
    #[error("stratum without respondents cannot be collapsed")]
    EmptyStratum,
    #[error("additive cell model cannot impute cell ({row}, {col})")]
    UnfittableCells { row: usize, col: usize },
    #[error("fit did not converge: {0}")]
    NotConverged(String),
    #[error("need at least 2 successful replicates, got {successes}")]
    TooFewReplicates { successes: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("csv row {row}, column `{column}`: {message}")]
    Csv {
        row: usize,
        column: String,
        message: String,
    },
    #[error(transparent)]
    CsvFormat(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
