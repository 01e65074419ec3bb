use std::path::PathBuf;

use crate::sampling::SamplingPlan;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("weight matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("negative weight {value} at ({row}, {col})")]
    NegativeWeight { row: usize, col: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("symmetric eigensolver did not converge on a {n}x{n} matrix")]
    EigenNoConvergence { n: usize },

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue})")]
    NotPositiveSemidefinite { eigenvalue: f64 },

    #[error("shift normalization requires a nonzero spectral radius")]
    ZeroSpectralRadius,

    #[error("signal must be fully observed")]
    NotFullyObserved,

    #[error("observed entry at ({row}, {col}) is not finite")]
    ObservedNonFinite { row: usize, col: usize },

    #[error("signal matrix needs at least {min} {what}, got {found}")]
    TooSmall { what: &'static str, min: usize, found: usize },

    #[error("invalid edge [{i}, {j}, {weight}] for a graph of {n} vertices")]
    InvalidEdge { i: usize, j: usize, weight: f64, n: usize },

    #[error("duplicate edge ({i}, {j})")]
    DuplicateEdge { i: usize, j: usize },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("graph learning did not converge after {iterations} iterations (last relative change {last_change:e})")]
    LearnNoConvergence { iterations: usize, last_change: f64 },

    #[error("reconstruction system is singular (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("no vertex is observed")]
    EmptyMask,

    #[error("evaluation set is empty")]
    EmptyEvalSet,

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("every eta candidate produced a singular system")]
    AllCandidatesSingular,

    #[error("partition aborted after {} complete sets: {source}", partial.sets.len())]
    Partition {
        partial: Box<SamplingPlan>,
        source: Box<Error>,
    },

    #[error("no accepted rows in {path}")]
    NoAcceptedRows { path: PathBuf },

    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("experiment stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
