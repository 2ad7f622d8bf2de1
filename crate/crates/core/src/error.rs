use thiserror::Error;

/// Errors raised by the library.
///
/// Variants fall into three families (configuration, data, numerical) that
/// the CLI maps onto distinct exit codes via [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("panel is unbalanced: country {country} has no value for year {year}")]
    Unbalanced { country: String, year: i32 },

    #[error("non-positive value {value} for country {country} in year {year}")]
    NonPositive { country: String, year: i32, value: f64 },

    #[error("horizon exceeds panel range: last admissible start year is {last_start}")]
    Horizon { last_start: i32 },

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("rejection sampling failed to accept within {proposals} proposals for row {row}")]
    RejectionSampling { row: usize, proposals: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
    Io,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Grid(_) | Error::GridMismatch(_) => ErrorCategory::Config,
            Error::Data(_) | Error::Unbalanced { .. } | Error::NonPositive { .. } | Error::Horizon { .. } | Error::Csv(_) => {
                ErrorCategory::Data
            }
            Error::Degenerate(_) | Error::Numerical(_) | Error::RejectionSampling { .. } => ErrorCategory::Numerical,
            Error::Io(_) | Error::Json(_) => ErrorCategory::Io,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
