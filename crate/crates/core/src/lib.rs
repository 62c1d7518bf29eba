//! Solvers for linear and nonlinear ODE systems built on Volterra integral
//! operators over sampled time grids.
//!
//! - [`timegrid`]: grids and cumulative quadrature.
//! - [`kernel`]: discretized integral operators, composition, Neumann series.
//! - [`expr`]: the small expression language used for fields and matrices.
//! - [`lti`], [`ltv`]: linear time-invariant and time-varying engines.
//! - [`picard`]: Picard iteration for nonlinear fields.
//! - [`oracle`]: an independent RK4 integrator used for cross-checks.

pub mod error;
pub mod expr;
pub mod kernel;
pub mod linalg;
pub mod lti;
pub mod ltv;
pub mod oracle;
pub mod picard;
pub mod timegrid;
pub mod trajectory;

pub use error::{Error, Result};
pub use expr::{Bindings, EvalError, Expr, ParseError};
pub use kernel::{KernelOperator, SeriesDiagnostics};
pub use lti::{lti_forced, lti_homogeneous, matrix_exp, LtiSystem};
pub use ltv::{
    commutator_spot_check, forced_from_table, ltv_forced, peano_baker, semigroup_check, stm_by_basis_solves,
    stm_commuting, stm_matrix_exponential, ImpulseSpec, LtvSystem, StmRoute, TransitionTable,
};
pub use oracle::{rk4_solve, OracleConfig, OracleError};
pub use picard::{
    convergence_certificates, estimate_lipschitz, nonuniqueness_probe, picard_solve, NonlinearSystem, PicardOptions,
    PicardReport, PicardStatus,
};
pub use timegrid::{QuadratureRule, TimeGrid};
pub use trajectory::{Provenance, Solver, Trajectory};
