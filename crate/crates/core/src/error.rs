use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },

    #[error("invalid robot model: {0}")]
    InvalidModel(String),

    #[error("invalid frame index {index} (chain has {count} links)")]
    InvalidFrame { index: usize, count: usize },

    #[error("rank-deficient matrix: smallest singular value {0:e}")]
    RankDeficient(f64),

    #[error("distance gradient undefined: witness points coincide")]
    DegenerateNormal,

    #[error("contact direction undefined: projected external torque vanishes")]
    DegenerateContactDirection,

    #[error("infeasible initial state: {0}")]
    InfeasibleInitialState(String),

    #[error("invalid primitive: {0}")]
    InvalidPrimitive(String),

    #[error("{location}: {message}")]
    Config { location: String, message: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("planner aborted: {0}")]
    SolverAbort(String),

    #[error("cannot compare runs: {0}")]
    MismatchedRuns(String),
}

impl Error {
    pub fn config(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { location: location.into(), message: message.into() }
    }

    pub fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension { what, expected, got }
    }
}
