use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("point {0:?} lies outside the domain")]
    OutOfDomain(Vec<f64>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank-deficient least-squares system (condition number {cond:.3e})")]
    RankDeficient { cond: f64 },

    #[error("correlation matrix not positive definite (last nugget tried {nugget:.1e})")]
    NotPositiveDefinite { nugget: f64 },

    #[error("constant surrogate: expansion has zero variance")]
    ConstantSurrogate,

    #[error("forward model failed at {point:?}: {reason}")]
    Forward { point: Vec<f64>, reason: String },

    #[error("cell {cell}: {source}")]
    Cell {
        cell: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("solver: {0}")]
    Solver(String),

    #[error("degenerate samples: {0}")]
    Degenerate(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse: {0}")]
    Parse(String),
}

impl Error {
    /// Short name of the module an error originates from, used in CLI error records.
    pub fn module(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } | Error::InvalidDomain(_) | Error::OutOfDomain(_) => {
                "design"
            }
            Error::RankDeficient { .. } | Error::ConstantSurrogate => "pce",
            Error::NotPositiveDefinite { .. } => "kriging",
            Error::Forward { .. } | Error::Solver(_) => "models",
            Error::Cell { .. } => "multielement",
            Error::Degenerate(_) => "dram",
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Parse(_) => "io",
            Error::InvalidArgument(_) => "core",
        }
    }
}
