use nalgebra::DVector;

use crate::linalg::{max_nan, sup_norm};

/// Which engine produced a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Solver {
    MatrixExponential,
    PeanoBaker,
    Commuting,
    BasisSolve,
    Picard,
    Oracle,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Solver::MatrixExponential => "matrix-exponential",
            Solver::PeanoBaker => "peano-baker",
            Solver::Commuting => "commuting",
            Solver::BasisSolve => "basis-solve",
            Solver::Picard => "picard",
            Solver::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub solver: Solver,
    /// Series terms or Picard iterations behind the result, when meaningful.
    pub truncation_order: Option<usize>,
    /// Per-sample error estimates (e.g. Richardson), when available.
    pub error_estimates: Option<Vec<f64>>,
}

/// Sampled state path `x(t_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub provenance: Provenance,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<DVector<f64>>, solver: Solver) -> Self {
        Self { times, states, provenance: Provenance { solver, truncation_order: None, error_estimates: None } }
    }

    pub fn dimension(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn last(&self) -> &DVector<f64> {
        &self.states[self.states.len() - 1]
    }

    /// Largest componentwise gap to another trajectory on the same samples.
    pub fn max_deviation(&self, other: &Trajectory) -> f64 {
        self.states.iter().zip(&other.states).map(|(a, b)| sup_norm(&(a - b))).fold(0.0, max_nan)
    }
}
