use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse grouping of errors, used by the command-line front end to pick an
/// exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Numeric,
    NonConvergence,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("marginals are unbalanced: supply {supply}, demand {demand}")]
    UnbalancedMarginals { supply: f64, demand: f64 },

    #[error("sinkhorn did not converge: residual {residual:e} after {iterations} iterations")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("kernel exp(-C/eps) has an all-zero {axis} {index}; enable the log-domain solver")]
    NumericUnderflow { axis: &'static str, index: usize },

    #[error("non-finite gradient encountered")]
    NonFiniteGradient,

    #[error("training panel is empty")]
    EmptyPanel,

    #[error("at least {required} samples are required, got {found}")]
    InsufficientSamples { required: usize, found: usize },

    #[error("plan has no observed mass; degenerate rows {rows:?}, columns {cols:?}")]
    DegenerateRow { rows: Vec<usize>, cols: Vec<usize> },

    #[error("total output is zero")]
    ZeroTotalOutput,

    #[error("missing covariates for {} key(s): {}", keys.len(), keys.join(", "))]
    MissingCovariate { keys: Vec<String> },

    #[error("separation: fitted means diverge for {}", cells.join(", "))]
    Separation { cells: Vec<String> },

    #[error("design is rank deficient; collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("IRLS did not converge after {iterations} iterations (score {score:e})")]
    IrlsNonConvergence { iterations: usize, score: f64 },

    #[error("nothing to compare")]
    EmptyComparison,

    #[error("zero variance in {0}")]
    DegenerateVariance(&'static str),

    #[error("model outputs are not aligned: {0}")]
    AlignmentMismatch(String),

    #[error("schema mismatch in {path}: missing column(s) {}", missing.join(", "))]
    SchemaMismatch { path: PathBuf, missing: Vec<String> },

    #[error("inconsistent units: {0}")]
    InconsistentUnits(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

impl Error {
    pub fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::ShapeMismatch { .. }
            | Error::InvalidInput(_)
            | Error::UnbalancedMarginals { .. }
            | Error::EmptyPanel
            | Error::InsufficientSamples { .. }
            | Error::MissingCovariate { .. }
            | Error::AlignmentMismatch(_)
            | Error::InconsistentUnits(_) => ErrorClass::Config,
            Error::Io { .. }
            | Error::Csv { .. }
            | Error::Json { .. }
            | Error::Malformed { .. }
            | Error::SchemaMismatch { .. } => ErrorClass::Io,
            Error::NonConvergence { .. } | Error::IrlsNonConvergence { .. } => {
                ErrorClass::NonConvergence
            }
            Error::NumericUnderflow { .. }
            | Error::NonFiniteGradient
            | Error::DegenerateRow { .. }
            | Error::ZeroTotalOutput
            | Error::Separation { .. }
            | Error::RankDeficient { .. }
            | Error::EmptyComparison
            | Error::DegenerateVariance(_) => ErrorClass::Numeric,
        }
    }
}
