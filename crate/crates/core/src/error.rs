use thiserror::Error;

use crate::expr::EvalError;
use crate::kernel::SeriesDiagnostics;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("expected {expected} samples, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("operands live on different grids")]
    GridMismatch,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("order must be at least 1")]
    ZeroOrder,

    #[error("kernel is not causal; Neumann series convergence is not certified")]
    NonCausal,

    #[error("series did not reach tolerance within {} terms (last term norm {:.3e})", .0.terms_used, .0.final_term_norm)]
    NonConvergence(Box<SeriesDiagnostics>),

    #[error("time is not a grid point: {0}")]
    OffGrid(String),

    #[error("basis matrix is singular or ill-conditioned (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error(
        "A(t) family does not commute: max commutator norm {residual:.3e} exceeds {tolerance:.3e} (s = {s}, u = {u})"
    )]
    NotCommuting { residual: f64, tolerance: f64, s: f64, u: f64 },

    #[error("evaluation failed at t = {t}, x = {x:?}: {source}")]
    Field { t: f64, x: Vec<f64>, source: EvalError },

    #[error("operation requires a scalar system, got dimension {0}")]
    NotScalar(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("oracle integration failed: {0}")]
    Oracle(#[from] crate::oracle::OracleError),
}
