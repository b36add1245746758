use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("non-numeric or missing cell at row {row}, column `{column}` ({rejected} row(s) rejected)")]
    NonNumericCell {
        row: usize,
        column: String,
        rejected: usize,
    },
    #[error("column `{0}` has zero variance")]
    ZeroVarianceColumn(String),
    #[error("column `{0}` contains a non-finite value")]
    NonFiniteValue(String),
    #[error("role {0} assigned more than once")]
    DuplicateRole(String),
    #[error("no column carries the {0} role")]
    MissingRole(String),
    #[error("columns have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("too few observations: need at least {needed}, got {given}")]
    TooFewObservations { needed: usize, given: usize },
    #[error("too many observations: at most {limit}, got {given}")]
    TooManyObservations { limit: usize, given: usize },
    #[error("input has zero variance")]
    ZeroVariance,
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("not supported: {0}")]
    NotSupported(String),
    #[error("all bootstrap replicates are identical")]
    ZeroBootstrapSpread,
    #[error("kernel density bandwidth is degenerate")]
    BandwidthDegenerate,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("CSV error: {0}")]
    Csv(String),
}

impl Error {
    /// Errors that stem from the data rather than from the caller's settings.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidConfig(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
