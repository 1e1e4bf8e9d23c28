use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("matrix must have at least one row and one column (got {rows}x{cols})")]
    EmptyMatrix { rows: usize, cols: usize },

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("row-norm sampling needs a nonzero matrix")]
    AllZeroRows,

    #[error("invalid sampling distribution: {0}")]
    InvalidDistribution(String),

    #[error("debias weight undefined at row {row}: 1 - l/(m*pi) = {margin:e} is not above the floor")]
    DebiasUndefined { row: usize, margin: f64 },

    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("sparse sign sketch needs 1 <= s <= n (s = {s}, n = {n})")]
    InvalidSparsity { s: usize, n: usize },

    #[error("fixed-point iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("X^T D X became numerically singular at iteration {iteration}")]
    SingularIntermediate { iteration: usize },

    #[error("{0}")]
    Undefined(String),

    #[error("term {row} has positive leverage but zero sampling probability")]
    UndefinedTerm { row: usize },

    #[error("all {trials} trials were rejected by the conditioning event")]
    AllTrialsRejected { trials: usize },

    #[error("enumeration needs {needed} tuples, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u64 },

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("only {available} nonzero {what} available, {requested} requested")]
    InsufficientNonzero {
        what: &'static str,
        available: usize,
        requested: usize,
    },

    #[error("parse error at row {row}, column {col}: {message}")]
    Parse {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRows {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("column {column} has zero variance")]
    ZeroVariance { column: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(
    context: &'static str,
    expected: impl Into<String>,
    found: impl Into<String>,
) -> Error {
    Error::ShapeMismatch {
        context,
        expected: expected.into(),
        found: found.into(),
    }
}
