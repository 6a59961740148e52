//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by measure construction, solvers and the harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Point clouds live in different ambient dimensions.
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    /// A class id in `1..=K` has no sample point.
    #[error("class {0} has no points; every class id in 1..=K must occur")]
    EmptyClass(usize),

    /// Mixture has `K` components but the proportion vector has another length.
    #[error("component count mismatch: {model} components vs theta of length {theta}")]
    ComponentMismatch { model: usize, theta: usize },

    /// Weight vector violates the probability-vector invariants.
    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    /// Regularization parameter out of range for the requested operation.
    #[error("regularization parameter must be {expected}, got {got}")]
    InvalidLambda { expected: &'static str, got: f64 },

    /// A non-finite number reached a numerical kernel.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// A zero-weight atom reached Sinkhorn; callers must filter first.
    #[error("zero-weight atom passed to a Sinkhorn solver")]
    ZeroWeightAtom,

    /// Exact solver exceeded its pivot cap without reaching optimality.
    #[error("exact OT solver hit the pivot cap ({0} pivots) before optimality")]
    PivotCapExceeded(usize),

    /// Invalid run configuration (descent, sweep or CLI level).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Malformed input file.
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },

    /// Paired comparison requested over cells with different repetitions.
    #[error("cells cover different repetition sets and cannot be paired")]
    MismatchedRepetitions,

    /// Requested cell absent from the report.
    #[error("no such cell in report: {0}")]
    UnknownCell(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
