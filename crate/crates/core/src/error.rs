use thiserror::Error;

/// Errors raised by the pairwise learning toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix must have at least one row and one column")]
    EmptyMatrix,

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric: max asymmetry {asymmetry:e} exceeds {tolerance:e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("matrix is not positive semidefinite: min eigenvalue {min:e} below -{tolerance:e} x {max:e}")]
    NotPositiveSemidefinite { min: f64, max: f64, tolerance: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("densification cap exceeded: {size} > {cap} (set PAIRKRR_DENSIFICATION_CAP to raise it)")]
    CapExceeded { size: usize, cap: usize },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("line {line}: expected {expected} fields, found {found} (ragged rows)")]
    RaggedRow {
        line: u64,
        expected: usize,
        found: usize,
    },

    #[error("line {line}, column {col}: cannot parse {value:?} as a finite number")]
    ParseCell { line: u64, col: usize, value: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("model file format version {found} is not supported (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
