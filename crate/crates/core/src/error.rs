use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// `row` counts data rows from 1 (the header is not counted); `column` counts file columns from 1.
    #[error("parse error at row {row}, column {column}: {message}")]
    ParseError {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("input contains no samples")]
    EmptyInput,

    #[error("duplicate channel label {0:?}")]
    DuplicateLabel(String),

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("channel {0:?} is constant (zero standard deviation)")]
    ConstantChannel(String),

    #[error("lag {lag} is too large for a series of {len} samples")]
    LagTooLarge { lag: usize, len: usize },

    #[error("unknown channel {0:?}")]
    UnknownChannel(String),

    #[error("source and target are the same channel {0:?}")]
    SelfPair(String),

    #[error("insufficient data: need more than {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("regressor Gram matrix is ill-conditioned (condition number {condition:.3e})")]
    SingularRegressors { condition: f64 },

    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate correlation: |rho1| = {0} must be below 1")]
    DegenerateCorrelation(f64),

    #[error("covariance matrix is rank deficient (eigenvalue ratio {ratio:.3e})")]
    RankDeficient { ratio: f64 },

    #[error(
        "FastICA did not converge after {iterations} iterations (final delta {final_delta:.3e})"
    )]
    NoConvergence { iterations: usize, final_delta: f64 },

    #[error("every row permutation of the unmixing matrix leaves a vanishing diagonal entry")]
    PermutationDegenerate,

    #[error("unsupported schema_version {0:?} (expected \"1\")")]
    SchemaVersionMismatch(String),

    #[error("model parse error: {0}")]
    ModelParse(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("I - S0 is numerically singular")]
    SingularStructure,

    #[error("unknown edge: {0}")]
    UnknownEdge(String),

    #[error("structural self-edge on {0:?} is not allowed")]
    SelfEdgeStructural(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularRegressors { .. }
                | Error::NumericalDivergence(_)
                | Error::DegenerateCorrelation(_)
                | Error::RankDeficient { .. }
                | Error::NoConvergence { .. }
                | Error::PermutationDegenerate
                | Error::SingularStructure
        )
    }
}
