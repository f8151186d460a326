use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while building, evaluating or fitting a model.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: argument {value} outside the domain of the transform")]
    Domain { what: &'static str, value: f64 },

    #[error("transform singularity: |a^c - H^c| = {gap:e} at H = {value}")]
    Singularity { value: f64, gap: f64 },

    #[error("transform `{0}` has no inverse on this range")]
    NotInvertible(String),

    #[error("covariance is not positive definite (pivot {pivot:e} at row {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("observation times must be strictly increasing (t[{index}] = {time})")]
    NonIncreasingTime { index: usize, time: f64 },

    #[error("duplicate observation time {time}")]
    DuplicateTime { time: f64 },

    #[error("vector length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("eta and eta0 must be global (parameter `{0}` declared local)")]
    LocalEta(String),

    #[error("parameter binding: {0}")]
    Binding(String),

    #[error("unit {unit}: {source}")]
    Unit {
        unit: String,
        #[source]
        source: Box<Error>,
    },

    #[error("prior density is zero at the current parameters ({0})")]
    PriorSupport(String),

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    #[error("matrix exponential overflow (norm {0:e})")]
    Overflow(f64),

    #[error("infeasible start: {0}")]
    InfeasibleStart(String),

    #[error("unknown transform family `{0}`")]
    UnknownTransform(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(#[from] DataError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Problems with an input dataset.
#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("empty dataset")]
    Empty,

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: `{value}` is not a number")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column `{column}`: `{value}` uses a comma decimal separator; use `.`")]
    CommaDecimal {
        row: usize,
        column: String,
        value: String,
    },

    #[error("duplicate time {time} in unit `{unit}`")]
    DuplicateTime { unit: String, time: f64 },

    #[error("malformed csv: {0}")]
    Malformed(String),

    #[error("unit `{0}` not present in the dataset")]
    UnknownUnit(String),
}

impl Error {
    pub(crate) fn in_unit(self, unit: &str) -> Error {
        match self {
            Error::Unit { .. } => self,
            other => Error::Unit {
                unit: unit.to_string(),
                source: Box::new(other),
            },
        }
    }

    /// Strips any unit wrapper.
    pub fn root(&self) -> &Error {
        match self {
            Error::Unit { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
