use thiserror::Error;

/// What was wrong with a single input row.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordProblem {
    #[error("covariate {column} has non-binary value {value:?}")]
    NonBinaryCovariate { column: usize, value: String },
    #[error("difference {value:?} is not a finite number")]
    NonFiniteDifference { value: String },
    #[error("expected {expected} covariates, found {found}")]
    ColumnCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("row {row} (pair {pair_id:?}): {problem}")]
    InvalidRecord {
        row: usize,
        pair_id: String,
        problem: RecordProblem,
    },
    #[error("no matched pairs in input")]
    EmptyStudy,
    #[error("schema error: {0}")]
    Schema(String),
    #[error("median absolute difference is zero over all pairs; M-scores are undefined")]
    DegenerateScale,
    #[error("median absolute difference is zero in group {group}; group M-scores are undefined")]
    DegenerateGroupScale { group: usize },
    #[error("group {group} has no pairs")]
    EmptyGroup { group: usize },
    #[error("comparison {label:?} has zero null variance")]
    DegenerateVariance { label: String },
    #[error("sensitivity parameter must satisfy gamma >= 1, got {0}")]
    InvalidGamma(f64),
    #[error("significance level must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("invalid psi parameters: need 0 <= inner < trim, got inner={inner}, trim={trim}")]
    InvalidPsi { inner: f64, trim: f64 },
    #[error("invalid correlation matrix: {0}")]
    InvalidCorrelation(String),
    #[error("critical value search failed to bracket the root: {0}")]
    BracketFailure(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// True for failures caused by the statistic being undefined on the data
    /// rather than by malformed input.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::DegenerateScale
                | Error::DegenerateGroupScale { .. }
                | Error::EmptyGroup { .. }
                | Error::DegenerateVariance { .. }
        )
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::InvalidCorrelation(_) | Error::BracketFailure(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
