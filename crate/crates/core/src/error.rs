use thiserror::Error;

use crate::types::ClassLabel;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("entry ({row}, {col}) has value {value}, expected 0 or 1")]
    NonBinaryEntry { row: usize, col: usize, value: i64 },

    #[error("matrix has no model columns")]
    EmptyModelSet,

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("no {0} subjects available")]
    EmptyClass(ClassLabel),

    #[error("standard error of model {model} ({class}) is zero")]
    ZeroStandardError { model: usize, class: ClassLabel },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("integration did not reach tolerance {tol:e} (error estimate {error:e})")]
    NonConvergence { error: f64, tol: f64 },

    #[error("index {index} out of range for {len} models")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("correlation {corr} infeasible for means ({mean1}, {mean2}); feasible range [{lower}, {upper}]")]
    InfeasibleCorrelation {
        mean1: f64,
        mean2: f64,
        corr: f64,
        lower: f64,
        upper: f64,
    },

    #[error("group sizes degenerate for n = {n} after {attempts} draws")]
    DegenerateGroupSizes { n: usize, attempts: usize },

    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no records to aggregate")]
    EmptyInput,
}
