//! Linear time-varying systems `x' = A(t) x + w(t)`: state transition
//! matrices by the Peano-Baker series, by the commuting-family exponential,
//! and by basis solves, plus the variation-of-constants forced response.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expr::{Bindings, EvalError, Expr};
use crate::kernel::SeriesDiagnostics;
use crate::linalg::{checked_inverse, inf_norm, max_abs, max_nan, sup_over_matrices};
use crate::lti::matrix_exp;
use crate::oracle::{rk4_solve_from, OracleConfig};
use crate::timegrid::TimeGrid;
use crate::trajectory::{Solver, Trajectory};

pub const DEFAULT_RTOL: f64 = 1e-10;
pub const DEFAULT_MAX_TERMS: usize = 60;
/// Random pairs used by the commutator spot check.
pub const COMMUTATOR_SAMPLES: usize = 10;
/// Relative tolerance of the commutator spot check, scaled by `sup |A|^2`.
pub const COMMUTATOR_RTOL: f64 = 1e-10;
pub const DEFAULT_SEED: u64 = 0x05EE_D0F7_AB1E;

type MatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
enum MatrixSource {
    Constant(DMatrix<f64>),
    /// Row-major entries in `t`.
    Exprs(Vec<Expr>),
    Builtin(MatrixFn),
}

/// `A(t)` on an interval, with an optional hint that the family commutes.
#[derive(Clone)]
pub struct LtvSystem {
    source: MatrixSource,
    dim: usize,
    pub commuting_hint: Option<bool>,
}

impl fmt::Debug for LtvSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.source {
            MatrixSource::Constant(_) => "constant",
            MatrixSource::Exprs(_) => "expressions",
            MatrixSource::Builtin(_) => "builtin",
        };
        f.debug_struct("LtvSystem").field("dim", &self.dim).field("source", &kind).finish()
    }
}

impl LtvSystem {
    pub fn constant(a: DMatrix<f64>) -> Result<Self> {
        let dim = crate::linalg::check_square(&a)?;
        Ok(Self { source: MatrixSource::Constant(a), dim, commuting_hint: Some(true) })
    }

    /// Entries given row-major as expressions in `t`.
    pub fn from_exprs(dim: usize, entries: Vec<Expr>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, found: entries.len() });
        }
        if entries.iter().any(|e| e.max_state_index() > 0) {
            return Err(Error::InvalidArgument("A(t) entries may only reference t".into()));
        }
        Ok(Self { source: MatrixSource::Exprs(entries), dim, commuting_hint: None })
    }

    pub fn from_fn(dim: usize, f: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        Self { source: MatrixSource::Builtin(Arc::new(f)), dim, commuting_hint: None }
    }

    pub fn with_commuting_hint(mut self, hint: bool) -> Self {
        self.commuting_hint = Some(hint);
        self
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: f64) -> Result<DMatrix<f64>, EvalError> {
        match &self.source {
            MatrixSource::Constant(a) => Ok(a.clone()),
            MatrixSource::Exprs(es) => {
                let env = Bindings::time(t);
                let vals = es.iter().map(|e| e.eval(&env)).collect::<Result<Vec<_>, _>>()?;
                Ok(DMatrix::from_row_slice(self.dim, self.dim, &vals))
            }
            MatrixSource::Builtin(f) => Ok(f(t)),
        }
    }

    /// The matrix when `A` does not depend on time.
    pub fn constant_matrix(&self) -> Option<DMatrix<f64>> {
        match &self.source {
            MatrixSource::Constant(a) => Some(a.clone()),
            MatrixSource::Exprs(es) if !es.iter().any(Expr::uses_time) => self.eval(0.0).ok(),
            _ => None,
        }
    }

    /// `A(t)`, with evaluation failures reported as field errors.
    pub fn eval_at(&self, t: f64) -> Result<DMatrix<f64>> {
        let a = self.eval(t).map_err(|source| Error::Field { t, x: vec![], source })?;
        if a.nrows() != self.dim || a.ncols() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: a.nrows() });
        }
        Ok(a)
    }

    pub fn sample(&self, grid: &TimeGrid) -> Result<Vec<DMatrix<f64>>> {
        grid.points().iter().map(|&t| self.eval_at(t)).collect()
    }
}

/// `Phi(t_i, base)` for every grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionTable {
    pub grid: TimeGrid,
    pub base: f64,
    pub base_index: usize,
    pub matrices: Vec<DMatrix<f64>>,
    pub route: Solver,
    /// Series diagnostics for the Peano-Baker route.
    pub series: Option<SeriesDiagnostics>,
}

impl TransitionTable {
    pub fn terms_used(&self) -> usize {
        self.series.as_ref().map_or(1, |d| d.terms_used)
    }

    pub fn term_norms(&self) -> &[f64] {
        self.series.as_ref().map_or(&[], |d| &d.term_norms)
    }

    pub fn tail_bound(&self) -> f64 {
        self.series.as_ref().map_or(0.0, |d| d.tail_bound)
    }

    pub fn at(&self, i: usize) -> &DMatrix<f64> {
        &self.matrices[i]
    }

    pub fn last(&self) -> &DMatrix<f64> {
        &self.matrices[self.matrices.len() - 1]
    }

    /// Largest entrywise gap to another table on the same grid.
    pub fn max_deviation(&self, other: &TransitionTable) -> f64 {
        self.matrices.iter().zip(&other.matrices).map(|(a, b)| max_abs(&(a - b))).fold(0.0, max_nan)
    }
}

fn base_index(grid: &TimeGrid, base: f64) -> Result<usize> {
    grid.index_of(base).ok_or_else(|| Error::OffGrid(format!("base time {base}")))
}

/// Longest stretch of the grid on either side of `base`.
fn reach(grid: &TimeGrid, base: f64) -> f64 {
    (grid.t_end() - base).max(base - grid.t0())
}

/// State transition matrix by the Peano-Baker series.
///
/// Terms follow `Phi_k(t) = int_base^t A(s) Phi_{k-1}(s) ds`, `Phi_0 = I`,
/// integrated by the grid rule. Summation stops when the sup norm of the
/// newest term drops to `rtol` times that of the partial sum.
pub fn peano_baker(
    sys: &LtvSystem,
    base: f64,
    grid: &TimeGrid,
    rtol: f64,
    max_terms: usize,
) -> Result<TransitionTable> {
    let b = base_index(grid, base)?;
    let n = sys.dimension();
    let a = sys.sample(grid)?;
    let rate = sup_over_matrices(&a) * reach(grid, base);

    let mut sum = vec![DMatrix::<f64>::identity(n, n); grid.len()];
    let mut term = sum.clone();
    let mut norms = vec![if n > 0 { 1.0 } else { 0.0 }];
    loop {
        if norms.len() >= max_terms.max(1) {
            let diag = SeriesDiagnostics::new(norms, rate, false);
            return Err(Error::NonConvergence(Box::new(diag)));
        }
        let integrand: Vec<DMatrix<f64>> = a.iter().zip(&term).map(|(ai, pi)| ai * pi).collect();
        term = grid.integral_from(b, &integrand)?;
        let tn = sup_over_matrices(&term);
        for (s, t) in sum.iter_mut().zip(&term) {
            *s += t;
        }
        norms.push(tn);
        if tn == 0.0 || tn <= rtol * sup_over_matrices(&sum) {
            break;
        }
    }
    Ok(TransitionTable {
        grid: grid.clone(),
        base,
        base_index: b,
        matrices: sum,
        route: Solver::PeanoBaker,
        series: Some(SeriesDiagnostics::new(norms, rate, true)),
    })
}

/// Outcome of sampling `|A(s) A(u) - A(u) A(s)|` at random pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct CommutatorCheck {
    pub max_residual: f64,
    pub tolerance: f64,
    pub worst_pair: (f64, f64),
}

impl CommutatorCheck {
    pub fn passes(&self) -> bool {
        self.max_residual <= self.tolerance
    }
}

pub fn commutator_spot_check(sys: &LtvSystem, grid: &TimeGrid, seed: u64) -> Result<CommutatorCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sup_a = sup_over_matrices(&sys.sample(grid)?);
    let mut pairs = Vec::with_capacity(COMMUTATOR_SAMPLES);
    for _ in 0..COMMUTATOR_SAMPLES {
        let s = rng.random_range(grid.t0()..=grid.t_end());
        let u = rng.random_range(grid.t0()..=grid.t_end());
        let (a_s, a_u) = (sys.eval_at(s)?, sys.eval_at(u)?);
        sup_a = sup_a.max(inf_norm(&a_s)).max(inf_norm(&a_u));
        pairs.push((s, u, inf_norm(&(&a_s * &a_u - &a_u * &a_s))));
    }
    let (mut max_residual, mut worst_pair) = (0.0, (grid.t0(), grid.t0()));
    for (s, u, r) in pairs {
        if r > max_residual {
            max_residual = r;
            worst_pair = (s, u);
        }
    }
    Ok(CommutatorCheck { max_residual, tolerance: COMMUTATOR_RTOL * sup_a * sup_a, worst_pair })
}

/// `Phi(t, base) = exp(int_base^t A)`, valid when the family `A(t)` commutes.
///
/// Commutativity is spot-checked first; the hint alone is never trusted.
pub fn stm_commuting(sys: &LtvSystem, base: f64, grid: &TimeGrid) -> Result<TransitionTable> {
    stm_commuting_seeded(sys, base, grid, DEFAULT_SEED)
}

pub fn stm_commuting_seeded(sys: &LtvSystem, base: f64, grid: &TimeGrid, seed: u64) -> Result<TransitionTable> {
    let b = base_index(grid, base)?;
    let check = commutator_spot_check(sys, grid, seed)?;
    if !check.passes() {
        return Err(Error::NotCommuting {
            residual: check.max_residual,
            tolerance: check.tolerance,
            s: check.worst_pair.0,
            u: check.worst_pair.1,
        });
    }
    let integrals = grid.integral_from(b, &sys.sample(grid)?)?;
    let mut matrices =
        integrals.iter().map(|m| matrix_exp(m, 1.0, crate::lti::DEFAULT_EXP_RTOL)).collect::<Result<Vec<_>>>()?;
    matrices[b] = DMatrix::identity(sys.dimension(), sys.dimension());
    Ok(TransitionTable { grid: grid.clone(), base, base_index: b, matrices, route: Solver::Commuting, series: None })
}

/// `Phi(t, base) = [x_1(t) .. x_n(t)] V^{-1}` from `n` oracle solves started at
/// the columns of `V`.
pub fn stm_by_basis_solves(
    sys: &LtvSystem,
    base: f64,
    grid: &TimeGrid,
    basis: &DMatrix<f64>,
    cfg: OracleConfig,
) -> Result<TransitionTable> {
    let b = base_index(grid, base)?;
    let n = sys.dimension();
    if basis.nrows() != n || basis.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: basis.nrows() });
    }
    let v_inv = checked_inverse(basis)?;
    let field = |t: f64, x: &DVector<f64>| Ok(sys.eval(t)? * x);
    let mut columns = Vec::with_capacity(n);
    for k in 0..n {
        let v_k: DVector<f64> = basis.column(k).into_owned();
        columns.push(rk4_solve_from(field, &v_k, b, grid, &[], cfg)?);
    }
    let mut matrices: Vec<DMatrix<f64>> = (0..grid.len())
        .map(|i| {
            let x = DMatrix::from_columns(&columns.iter().map(|c| c.states[i].clone()).collect::<Vec<_>>());
            x * &v_inv
        })
        .collect();
    matrices[b] = DMatrix::identity(n, n);
    Ok(TransitionTable { grid: grid.clone(), base, base_index: b, matrices, route: Solver::BasisSolve, series: None })
}

/// `Phi(t, base) = e^{A (t - base)}` for a time-invariant system.
pub fn stm_matrix_exponential(sys: &LtvSystem, base: f64, grid: &TimeGrid) -> Result<TransitionTable> {
    let b = base_index(grid, base)?;
    let a = sys
        .constant_matrix()
        .ok_or_else(|| Error::InvalidArgument("matrix exponential route needs a constant matrix".into()))?;
    let matrices = grid
        .points()
        .iter()
        .map(|&t| matrix_exp(&a, t - base, crate::lti::DEFAULT_EXP_RTOL))
        .collect::<Result<Vec<_>>>()?;
    Ok(TransitionTable {
        grid: grid.clone(),
        base,
        base_index: b,
        matrices,
        route: Solver::MatrixExponential,
        series: None,
    })
}

/// How to build a transition table.
#[derive(Clone, Debug, PartialEq)]
pub enum StmRoute {
    MatrixExponential,
    PeanoBaker { rtol: f64, max_terms: usize },
    Commuting { seed: u64 },
    BasisSolve { basis: DMatrix<f64>, oracle: OracleConfig },
}

impl Default for StmRoute {
    fn default() -> Self {
        StmRoute::PeanoBaker { rtol: DEFAULT_RTOL, max_terms: DEFAULT_MAX_TERMS }
    }
}

impl StmRoute {
    pub fn build(&self, sys: &LtvSystem, base: f64, grid: &TimeGrid) -> Result<TransitionTable> {
        match self {
            StmRoute::MatrixExponential => stm_matrix_exponential(sys, base, grid),
            StmRoute::PeanoBaker { rtol, max_terms } => peano_baker(sys, base, grid, *rtol, *max_terms),
            StmRoute::Commuting { seed } => stm_commuting_seeded(sys, base, grid, *seed),
            StmRoute::BasisSolve { basis, oracle } => stm_by_basis_solves(sys, base, grid, basis, *oracle),
        }
    }
}

/// Impulsive inputs `sum_k wbar_k delta(t - tau_k)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImpulseSpec {
    impulses: Vec<(f64, DVector<f64>)>,
}

impl ImpulseSpec {
    pub fn new(impulses: Vec<(f64, DVector<f64>)>) -> Result<Self> {
        for w in impulses.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidArgument(format!(
                    "impulse times must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        Ok(Self { impulses })
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(f64, DVector<f64>)> {
        self.impulses.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.impulses.is_empty()
    }
}

/// Variation-of-constants response started from `x(tbar) = x0`, with `Phi` by
/// the Peano-Baker series.
pub fn ltv_forced(
    sys: &LtvSystem,
    x0: &DVector<f64>,
    tbar: f64,
    w: &[DVector<f64>],
    impulses: &ImpulseSpec,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    let table = peano_baker(sys, tbar, grid, DEFAULT_RTOL, DEFAULT_MAX_TERMS)?;
    forced_from_table(&table, x0, w, impulses)
}

/// Variation-of-constants response from a prebuilt table `Phi(t_i, tbar)`.
///
/// `Phi(t_i, tau_j)` is formed as `Phi(t_i, tbar) Phi(tau_j, tbar)^{-1}`, so
/// `x(t_i) = Phi(t_i, tbar) [x0 + int_tbar^{t_i} Phi(tbar, tau) w(tau) dtau +
/// sum_{tau_k <= t_i} Phi(tbar, tau_k) wbar_k]`. Impulses jump the state
/// exactly at their grid points; the stored sample is the post-jump value.
pub fn forced_from_table(
    table: &TransitionTable,
    x0: &DVector<f64>,
    w: &[DVector<f64>],
    impulses: &ImpulseSpec,
) -> Result<Trajectory> {
    let grid = &table.grid;
    let n = table.matrices[0].nrows();
    if x0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: x0.len() });
    }
    grid.check_len(w.len())?;
    if let Some(bad) = w.iter().find(|v| v.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, found: bad.len() });
    }
    let inverses = table
        .matrices
        .iter()
        .map(|m| m.clone().lu().try_inverse().ok_or(Error::IllConditioned { condition: f64::INFINITY }))
        .collect::<Result<Vec<_>>>()?;

    let pulled_back: Vec<DVector<f64>> = inverses.iter().zip(w).map(|(inv, wj)| inv * wj).collect();
    let integral = grid.integral_from(table.base_index, &pulled_back)?;

    let mut kicks: Vec<(usize, DVector<f64>)> = Vec::new();
    for (tau, wbar) in impulses.iter() {
        let k = grid.index_of(*tau).ok_or_else(|| Error::OffGrid(format!("impulse time {tau}")))?;
        if k < table.base_index {
            return Err(Error::InvalidArgument(format!("impulse at {tau} precedes the initial time {}", table.base)));
        }
        if wbar.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: wbar.len() });
        }
        kicks.push((k, &inverses[k] * wbar));
    }

    let states = (0..grid.len())
        .map(|i| {
            let mut inner = x0 + &integral[i];
            for (k, kick) in &kicks {
                if i >= *k {
                    inner += kick;
                }
            }
            &table.matrices[i] * inner
        })
        .collect();
    let mut traj = Trajectory::new(grid.points().to_vec(), states, table.route);
    traj.provenance.truncation_order = table.series.as_ref().map(|d| d.terms_used);
    Ok(traj)
}

/// Residuals of `Phi(t3,t1) = Phi(t3,t2) Phi(t2,t1)` and `Phi(t2,t1) Phi(t1,t2) = I`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SemigroupResidual {
    pub composition: f64,
    pub inverse: f64,
}

pub fn semigroup_check(
    route: &StmRoute,
    sys: &LtvSystem,
    times: (f64, f64, f64),
    grid: &TimeGrid,
) -> Result<SemigroupResidual> {
    let (t1, t2, t3) = times;
    let i2 = base_index(grid, t2)?;
    let i3 = base_index(grid, t3)?;
    let from_t1 = route.build(sys, t1, grid)?;
    let from_t2 = route.build(sys, t2, grid)?;
    let i1 = from_t1.base_index;
    let composed = from_t2.at(i3) * from_t1.at(i2);
    let composition = max_abs(&(from_t1.at(i3) - composed));
    let n = sys.dimension();
    let inverse = max_abs(&(from_t1.at(i2) * from_t2.at(i1) - DMatrix::identity(n, n)));
    Ok(SemigroupResidual { composition, inverse })
}

/// Largest `|dPhi/dt - A Phi|` over interior grid points, with `dPhi/dt` by
/// central differences.
pub fn stm_ode_residual(table: &TransitionTable, sys: &LtvSystem) -> Result<f64> {
    let pts = table.grid.points();
    let mut worst: f64 = 0.0;
    for i in 1..pts.len() - 1 {
        let fd = (&table.matrices[i + 1] - &table.matrices[i - 1]) / (pts[i + 1] - pts[i - 1]);
        let rhs = sys.eval_at(pts[i])? * &table.matrices[i];
        worst = worst.max(max_abs(&(fd - rhs)));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timegrid::QuadratureRule;

    fn grid(t0: f64, t_end: f64, n: usize) -> TimeGrid {
        TimeGrid::make_uniform(t0, t_end, n, QuadratureRule::Trapezoid).unwrap()
    }

    fn rot() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
    }

    #[test]
    fn zero_system_is_identity() {
        let sys = LtvSystem::constant(DMatrix::zeros(2, 2)).unwrap();
        let g = grid(0.0, 1.0, 10);
        let t = peano_baker(&sys, 0.0, &g, 1e-10, 60).unwrap();
        assert!(t.matrices.iter().all(|m| *m == DMatrix::identity(2, 2)));
        assert_eq!(t.terms_used(), 1);
    }

    #[test]
    fn constant_matrix_matches_exponential() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.3, 1.0, -0.8, 0.1]);
        let sys = LtvSystem::constant(a.clone()).unwrap();
        let g = grid(0.0, 1.0, 2000);
        let t = peano_baker(&sys, 0.0, &g, 1e-12, 60).unwrap();
        for (i, &ti) in g.points().iter().enumerate().step_by(100) {
            let e = matrix_exp(&a, ti, 1e-12).unwrap();
            assert!(max_abs(&(t.at(i) - e)) < 1e-6);
        }
    }

    #[test]
    fn scalar_time_varying_closed_form() {
        let sys = LtvSystem::from_exprs(1, vec![Expr::parse("2*t").unwrap()]).unwrap();
        let g = grid(0.0, 1.0, 2000);
        let t = peano_baker(&sys, 0.0, &g, 1e-12, 60).unwrap();
        assert!((t.last()[(0, 0)] - std::f64::consts::E).abs() < 1e-6);
    }

    #[test]
    fn base_exactly_identity_and_backwards() {
        let sys = LtvSystem::from_exprs(1, vec![Expr::parse("t").unwrap()]).unwrap();
        let g = grid(0.0, 2.0, 2000);
        let t = peano_baker(&sys, 1.0, &g, 1e-12, 60).unwrap();
        assert_eq!(t.at(1000)[(0, 0)], 1.0);
        // Phi(0, 1) = e^{(0 - 1)/2}
        assert!((t.at(0)[(0, 0)] - (-0.5f64).exp()).abs() < 1e-6);
        assert!(matches!(peano_baker(&sys, 0.1234, &g, 1e-12, 60), Err(Error::OffGrid(_))));
    }

    #[test]
    fn non_convergence_is_reported() {
        let sys = LtvSystem::constant(DMatrix::from_element(1, 1, 5.0)).unwrap();
        let g = grid(0.0, 2.0, 100);
        match peano_baker(&sys, 0.0, &g, 1e-12, 5) {
            Err(Error::NonConvergence(d)) => {
                assert_eq!(d.term_norms.len(), 5);
                assert!(d.tail_bound > 1.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn commuting_sine_family() {
        let sys = LtvSystem::from_fn(2, |t| rot() * t.sin());
        let g = grid(0.0, 2.0, 2000);
        let c = stm_commuting(&sys, 0.0, &g).unwrap();
        let pb = peano_baker(&sys, 0.0, &g, 1e-12, 60).unwrap();
        assert!(c.max_deviation(&pb) < 1e-6);
    }

    #[test]
    fn commuting_constant_and_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[0.2, -1.0, 0.7, 0.0]);
        let sys = LtvSystem::constant(a.clone()).unwrap();
        let g = grid(0.0, 1.5, 30);
        let c = stm_commuting(&sys, 0.5, &g).unwrap();
        for (i, &t) in g.points().iter().enumerate() {
            assert!(max_abs(&(c.at(i) - matrix_exp(&a, t - 0.5, 1e-12).unwrap())) < 1e-9);
        }
        let diag = LtvSystem::from_fn(2, |t| DMatrix::from_diagonal(&DVector::from_vec(vec![t.cos(), -2.0 * t])));
        let g = grid(0.0, 1.0, 1000);
        let c = stm_commuting(&diag, 0.0, &g).unwrap();
        let last = c.last();
        assert!(last[(0, 1)].abs() < 1e-15 && last[(1, 0)].abs() < 1e-15);
        assert!((last[(0, 0)] - 1f64.sin().exp()).abs() < 1e-6);
        assert!((last[(1, 1)] - (-1f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn commutator_refusal() {
        let sys = LtvSystem::from_fn(2, |t| rot() + DMatrix::from_row_slice(2, 2, &[t, 0.0, 0.0, 0.0]));
        let g = grid(0.0, 2.0, 100);
        assert!(matches!(stm_commuting(&sys, 0.0, &g), Err(Error::NotCommuting { .. })));
    }

    #[test]
    fn basis_solves() {
        let g = grid(0.0, 1.0, 200);
        let zero = LtvSystem::constant(DMatrix::zeros(2, 2)).unwrap();
        let t = stm_by_basis_solves(&zero, 0.0, &g, &DMatrix::identity(2, 2), OracleConfig::default()).unwrap();
        assert!(t.matrices.iter().all(|m| *m == DMatrix::identity(2, 2)));

        let a = DMatrix::from_row_slice(2, 2, &[-0.3, 1.0, -0.8, 0.1]);
        let sys = LtvSystem::constant(a.clone()).unwrap();
        let t = stm_by_basis_solves(&sys, 0.0, &g, &DMatrix::identity(2, 2), OracleConfig::default()).unwrap();
        assert!(max_abs(&(t.last() - matrix_exp(&a, 1.0, 1e-12).unwrap())) < 1e-10);

        let v = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 3.0]);
        let tv = stm_by_basis_solves(&sys, 0.0, &g, &v, OracleConfig::default()).unwrap();
        assert!(tv.max_deviation(&t) < 1e-12);

        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            stm_by_basis_solves(&sys, 0.0, &g, &singular, OracleConfig::default()),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn forced_zero_input_and_impulse() {
        let sys = LtvSystem::from_exprs(
            2,
            ["0", "1", "-1 - 0.5*sin(t)", "-0.1"].iter().map(|s| Expr::parse(s).unwrap()).collect(),
        )
        .unwrap();
        let g = grid(0.0, 2.0, 400);
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let zero_w = vec![DVector::zeros(2); g.len()];
        let free = ltv_forced(&sys, &x0, 0.0, &zero_w, &ImpulseSpec::none(), &g).unwrap();
        let table = peano_baker(&sys, 0.0, &g, DEFAULT_RTOL, DEFAULT_MAX_TERMS).unwrap();
        for (i, s) in free.states.iter().enumerate() {
            assert!((s - table.at(i) * &x0).amax() < 1e-12);
        }

        let wbar = DVector::from_vec(vec![0.0, 2.0]);
        let imp = ImpulseSpec::new(vec![(0.5, wbar.clone())]).unwrap();
        let kicked = ltv_forced(&sys, &DVector::zeros(2), 0.0, &zero_w, &imp, &g).unwrap();
        let from_tau = peano_baker(&sys, 0.5, &g, DEFAULT_RTOL, DEFAULT_MAX_TERMS).unwrap();
        for (i, s) in kicked.states.iter().enumerate() {
            if i < 100 {
                assert!(s.iter().all(|&v| v == 0.0));
            } else {
                assert!((s - from_tau.at(i) * &wbar).amax() < 1e-9);
            }
        }
        let off = ImpulseSpec::new(vec![(0.501, wbar)]).unwrap();
        assert!(matches!(ltv_forced(&sys, &x0, 0.0, &zero_w, &off, &g), Err(Error::OffGrid(_))));
    }

    #[test]
    fn forced_scalar_closed_form() {
        let sys = LtvSystem::constant(DMatrix::from_element(1, 1, -1.0)).unwrap();
        let g = grid(0.0, 1.0, 2000);
        let w: Vec<DVector<f64>> = g.points().iter().map(|t| DVector::from_element(1, t.sin())).collect();
        let tr = ltv_forced(&sys, &DVector::zeros(1), 0.0, &w, &ImpulseSpec::none(), &g).unwrap();
        let exact = (1f64.sin() - 1f64.cos() + (-1f64).exp()) / 2.0;
        assert!((tr.last()[0] - exact).abs() < 1e-6);
        assert!((exact - 0.334524).abs() < 1e-6);
    }

    #[test]
    fn impulse_spec_validation() {
        let v = DVector::zeros(1);
        assert!(ImpulseSpec::new(vec![(0.5, v.clone()), (0.5, v.clone())]).is_err());
        assert!(ImpulseSpec::new(vec![(0.5, v.clone()), (0.7, v)]).is_ok());
    }

    #[test]
    fn semigroup_examples() {
        let g = grid(0.0, 1.0, 1000);
        let zero = LtvSystem::constant(DMatrix::zeros(2, 2)).unwrap();
        let r = semigroup_check(&StmRoute::default(), &zero, (0.0, 0.5, 1.0), &g).unwrap();
        assert_eq!((r.composition, r.inverse), (0.0, 0.0));

        let sys = LtvSystem::constant(rot()).unwrap();
        let r = semigroup_check(&StmRoute::default(), &sys, (0.0, 0.5, 1.0), &g).unwrap();
        assert!(r.composition <= 1e-8 && r.inverse <= 1e-8, "{r:?}");

        let scalar = LtvSystem::from_exprs(1, vec![Expr::parse("t").unwrap()]).unwrap();
        let r = semigroup_check(&StmRoute::default(), &scalar, (0.2, 0.5, 0.9), &g).unwrap();
        assert!(r.composition <= 1e-8 && r.inverse <= 1e-8, "{r:?}");
        let t = peano_baker(&scalar, 0.2, &g, 1e-12, 60).unwrap();
        assert!((t.at(900)[(0, 0)] - ((0.81f64 - 0.04) / 2.0).exp()).abs() < 1e-6);
    }

    #[test]
    fn stm_satisfies_its_ode() {
        let sys = LtvSystem::from_fn(2, |t| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0 - t, -0.2]));
        let mut prev = f64::INFINITY;
        for n in [100, 200, 400] {
            let g = grid(0.0, 1.0, n);
            let t = peano_baker(&sys, 0.0, &g, 1e-12, 60).unwrap();
            let r = stm_ode_residual(&t, &sys).unwrap();
            assert!(r < prev / 3.5, "{r} vs {prev}");
            prev = r;
        }
    }
}
