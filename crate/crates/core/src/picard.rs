//! Nonlinear systems `x' = f(t, x)` by Picard iteration on sampled functions.
//!
//! Iterates live on the grid; the distance between iterates is the sup over
//! samples and components. The first iterate is the constant `x0`, and
//! `x_{k+1}(t) = x0 + int_{t0}^t f(s, x_k(s)) ds` by the grid rule.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expr::{Bindings, EvalError, Expr};
use crate::kernel::factorial_envelope;
use crate::linalg::{max_nan, sup_norm, sup_over_vectors};
use crate::oracle::{rk4_solve, OracleConfig};
use crate::timegrid::TimeGrid;
use crate::trajectory::{Solver, Trajectory};

pub const DEFAULT_RTOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 500;
pub const DEFAULT_BLOWUP_THRESHOLD: f64 = 1e12;

type FieldFn = Arc<dyn Fn(f64, &DVector<f64>) -> Result<DVector<f64>, EvalError> + Send + Sync>;

#[derive(Clone)]
enum FieldSource {
    Exprs(Vec<Expr>),
    Builtin(FieldFn),
}

#[derive(Clone)]
pub struct NonlinearSystem {
    field: FieldSource,
    dim: usize,
    /// User-supplied global Lipschitz constant; required for certificates.
    pub lipschitz: Option<f64>,
}

impl fmt::Debug for NonlinearSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearSystem").field("dim", &self.dim).field("lipschitz", &self.lipschitz).finish()
    }
}

impl NonlinearSystem {
    /// One expression per component, in `x1..xn` and optionally `t`.
    pub fn from_exprs(entries: Vec<Expr>) -> Result<Self> {
        let dim = entries.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("field needs at least one component".into()));
        }
        if let Some(k) = entries.iter().map(Expr::max_state_index).find(|&k| k > dim) {
            return Err(Error::InvalidArgument(format!("field references x{k} but dimension is {dim}")));
        }
        Ok(Self { field: FieldSource::Exprs(entries), dim, lipschitz: None })
    }

    pub fn from_fn(
        dim: usize,
        f: impl Fn(f64, &DVector<f64>) -> Result<DVector<f64>, EvalError> + Send + Sync + 'static,
    ) -> Self {
        Self { field: FieldSource::Builtin(Arc::new(f)), dim, lipschitz: None }
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>, EvalError> {
        match &self.field {
            FieldSource::Exprs(es) => {
                let env = Bindings::new(Some(t), x.as_slice());
                es.iter().map(|e| e.eval(&env)).collect::<Result<Vec<_>, _>>().map(DVector::from_vec)
            }
            FieldSource::Builtin(f) => f(t, x),
        }
    }

    fn eval_at(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.eval(t, x).map_err(|source| Error::Field { t, x: x.iter().copied().collect(), source })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicardOptions {
    pub rtol: f64,
    pub max_iters: usize,
    pub blowup_threshold: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { rtol: DEFAULT_RTOL, max_iters: DEFAULT_MAX_ITERS, blowup_threshold: DEFAULT_BLOWUP_THRESHOLD }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PicardStatus {
    Converged,
    MaxIterations,
    Blowup,
}

impl PicardStatus {
    pub fn name(self) -> &'static str {
        match self {
            PicardStatus::Converged => "converged",
            PicardStatus::MaxIterations => "max-iterations",
            PicardStatus::Blowup => "blowup",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardReport {
    pub iterates_used: usize,
    /// `|x_{k+1} - x_k|` for `k = 0, 1, ...`.
    pub successive_distances: Vec<f64>,
    /// `(l T)^k / k! * |x_1 - x_0|`, present when a Lipschitz constant was supplied.
    pub bound_sequence: Vec<f64>,
    pub status: PicardStatus,
    /// First grid time at which the last iterate exceeded the blowup threshold.
    pub blowup_time: Option<f64>,
}

/// Successive Picard iterates on a grid.
pub struct PicardIteration<'a> {
    sys: &'a NonlinearSystem,
    grid: &'a TimeGrid,
    x0: DVector<f64>,
    current: Vec<DVector<f64>>,
    index: usize,
}

impl<'a> PicardIteration<'a> {
    pub fn new(sys: &'a NonlinearSystem, x0: &DVector<f64>, grid: &'a TimeGrid) -> Result<Self> {
        if x0.len() != sys.dim {
            return Err(Error::DimensionMismatch { expected: sys.dim, found: x0.len() });
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("initial state is not finite".into()));
        }
        Ok(Self { sys, grid, x0: x0.clone(), current: vec![x0.clone(); grid.len()], index: 0 })
    }

    /// The iterate `x_k` with `k = self.index()`.
    pub fn current(&self) -> &[DVector<f64>] {
        &self.current
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// `x0 + V f(x)` for an arbitrary sampled function `x`.
    pub fn map(&self, x: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let f = self.grid.points().iter().zip(x).map(|(&t, xi)| self.sys.eval_at(t, xi)).collect::<Result<Vec<_>>>()?;
        let mut out = self.grid.cumulative_integral(&f)?;
        for v in &mut out {
            *v += &self.x0;
        }
        Ok(out)
    }

    /// Advances to the next iterate and returns `|x_{k+1} - x_k|`.
    pub fn advance(&mut self) -> Result<f64> {
        let next = self.map(&self.current)?;
        let d = next.iter().zip(&self.current).map(|(a, b)| sup_norm(&(a - b))).fold(0.0, max_nan);
        self.current = next;
        self.index += 1;
        Ok(d)
    }

    fn into_trajectory(self) -> Trajectory {
        let mut traj = Trajectory::new(self.grid.points().to_vec(), self.current, Solver::Picard);
        traj.provenance.truncation_order = Some(self.index);
        traj
    }
}

/// Iterates until `|x_{k+1} - x_k| <= rtol (1 + |x_{k+1}|)`, the iteration
/// budget runs out, or a sample exceeds the blowup threshold.
pub fn picard_solve(
    sys: &NonlinearSystem,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    opts: PicardOptions,
) -> Result<(Trajectory, PicardReport)> {
    let mut it = PicardIteration::new(sys, x0, grid)?;
    let mut distances = Vec::new();
    let mut status = PicardStatus::MaxIterations;
    let mut blowup_time = None;
    for _ in 0..opts.max_iters {
        let d = it.advance()?;
        distances.push(d);
        if let Some(i) = it.current().iter().position(|x| sup_norm(x).is_nan() || sup_norm(x) > opts.blowup_threshold) {
            status = PicardStatus::Blowup;
            blowup_time = Some(grid.points()[i]);
            break;
        }
        if d <= opts.rtol * (1.0 + sup_over_vectors(it.current())) {
            status = PicardStatus::Converged;
            break;
        }
    }
    let bound_sequence = match (sys.lipschitz, distances.first()) {
        (Some(l), Some(&d0)) => {
            factorial_envelope(l * grid.span(), distances.len() - 1).into_iter().map(|b| b * d0).collect()
        }
        _ => Vec::new(),
    };
    let report = PicardReport {
        iterates_used: it.index(),
        successive_distances: distances,
        bound_sequence,
        status,
        blowup_time,
    };
    Ok((it.into_trajectory(), report))
}

/// `|x - (x0 + V f(x))|` over the grid.
pub fn fixed_point_residual(
    sys: &NonlinearSystem,
    x0: &DVector<f64>,
    traj: &Trajectory,
    grid: &TimeGrid,
) -> Result<f64> {
    let it = PicardIteration::new(sys, x0, grid)?;
    let mapped = it.map(&traj.states)?;
    Ok(mapped.iter().zip(&traj.states).map(|(a, b)| sup_norm(&(a - b))).fold(0.0, max_nan))
}

/// Sampled lower estimate of the Lipschitz constant of `x -> f(t, x)` on a box.
///
/// Half the pairs are uniform in the box; the other half pair a uniform point
/// with the box center, which exposes singular behaviour at the center.
/// This is never an upper bound.
pub fn estimate_lipschitz(
    sys: &NonlinearSystem,
    bounds: &[(f64, f64)],
    samples: usize,
    t: f64,
    seed: u64,
) -> Result<f64> {
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    if bounds.len() != sys.dim {
        return Err(Error::DimensionMismatch { expected: sys.dim, found: bounds.len() });
    }
    if bounds.iter().any(|&(lo, hi)| hi <= lo || !lo.is_finite() || !hi.is_finite()) {
        return Err(Error::InvalidArgument("box must be nondegenerate and finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> DVector<f64> {
        DVector::from_iterator(bounds.len(), bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)))
    };
    let center = DVector::from_iterator(bounds.len(), bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)));
    let f_center = sys.eval_at(t, &center)?;
    let mut best: f64 = 0.0;
    for s in 0..samples {
        let x = draw(&mut rng);
        let (y, fy) = if s % 2 == 0 {
            let y = draw(&mut rng);
            let fy = sys.eval_at(t, &y)?;
            (y, fy)
        } else {
            (center.clone(), f_center.clone())
        };
        let dx = sup_norm(&(&x - &y));
        if dx == 0.0 {
            continue;
        }
        let fx = sys.eval_at(t, &x)?;
        best = best.max(sup_norm(&(fx - fy)) / dx);
    }
    Ok(best)
}

/// Convergence guarantees implied by a Lipschitz constant `l` on `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Certificates {
    pub lipschitz: f64,
    pub horizon: f64,
    /// The Picard map is a strict contraction in the sup norm.
    pub contraction_holds: bool,
    pub contraction_factor: f64,
    /// `sum_k (l T)^k / k! = e^{l T}`.
    pub global_envelope: f64,
}

impl Certificates {
    /// `(l T)^k / k!`, the bound on `|x_{k+1} - x_k| / |x_1 - x_0|`.
    pub fn per_k_bound(&self, k: usize) -> f64 {
        factorial_envelope(self.contraction_factor, k)[k]
    }

    /// Index of the largest per-k bound (the later one on ties).
    pub fn peak_index(&self) -> usize {
        let x = self.contraction_factor;
        let seq = factorial_envelope(x, x.ceil() as usize + 2);
        let max = seq.iter().copied().fold(0.0, f64::max);
        seq.iter().rposition(|&b| b >= max * (1.0 - 1e-12)).unwrap_or(0)
    }
}

pub fn convergence_certificates(lipschitz: f64, horizon: f64) -> Result<Certificates> {
    if lipschitz.is_nan() || lipschitz < 0.0 || horizon.is_nan() || horizon <= 0.0 {
        return Err(Error::InvalidArgument("need l >= 0 and T > 0".into()));
    }
    let factor = lipschitz * horizon;
    Ok(Certificates {
        lipschitz,
        horizon,
        contraction_holds: factor < 1.0,
        contraction_factor: factor,
        global_envelope: factor.exp(),
    })
}

/// Perturbation used by the non-uniqueness probe.
pub const PROBE_EPSILON: f64 = 1e-9;
/// Box half-widths around `x0` for the local Lipschitz estimates.
pub const PROBE_HALF_WIDTHS: [f64; 3] = [1e-2, 1e-4, 1e-6];
/// Estimate on the smallest box above which the probe raises its flag.
pub const PROBE_RATIO_THRESHOLD: f64 = 1e3;
const PROBE_SAMPLES: usize = 2000;

#[derive(Clone, Debug, PartialEq)]
pub struct NonuniquenessReport {
    pub picard: Trajectory,
    pub picard_status: PicardStatus,
    /// Largest `|x_eps(t) - x(t)| / eps` over Picard and oracle runs.
    pub divergence_ratio: f64,
    /// `(half-width, estimate)` pairs, widest first.
    pub lipschitz_estimates: Vec<(f64, f64)>,
    pub flagged: bool,
    pub message: String,
}

/// Looks for signs that the solution through `x0` is not unique.
///
/// Compares solves from `x0` and `x0 + eps` and watches the local Lipschitz
/// estimate as the box around `x0` shrinks. A flag is an indicator, not a proof.
pub fn nonuniqueness_probe(sys: &NonlinearSystem, x0: &DVector<f64>, grid: &TimeGrid) -> Result<NonuniquenessReport> {
    if sys.dim != 1 {
        return Err(Error::NotScalar(sys.dim));
    }
    let x_eps = x0.add_scalar(PROBE_EPSILON);
    let opts = PicardOptions::default();
    let (base, report) = picard_solve(sys, x0, grid, opts)?;
    let (perturbed, _) = picard_solve(sys, &x_eps, grid, opts)?;
    let mut ratio = base.max_deviation(&perturbed) / PROBE_EPSILON;

    let field = |t: f64, x: &DVector<f64>| sys.eval(t, x);
    if let (Ok(a), Ok(b)) =
        (rk4_solve(field, x0, grid, OracleConfig::default()), rk4_solve(field, &x_eps, grid, OracleConfig::default()))
    {
        ratio = ratio.max(a.max_deviation(&b) / PROBE_EPSILON);
    }

    let mut estimates = Vec::new();
    for (k, &w) in PROBE_HALF_WIDTHS.iter().enumerate() {
        let est = estimate_lipschitz(sys, &[(x0[0] - w, x0[0] + w)], PROBE_SAMPLES, grid.t0(), k as u64)?;
        estimates.push((w, est));
    }
    let widest = estimates[0].1;
    let narrowest = estimates[estimates.len() - 1].1;
    let flagged = narrowest > PROBE_RATIO_THRESHOLD && narrowest > 10.0 * widest;
    let message = if flagged {
        format!(
            "local Lipschitz estimate grows without bound as the box around x0 = {} shrinks \
             ({widest:.3e} at half-width {:.0e}, {narrowest:.3e} at {:.0e}); the solution through x0 \
             may not be unique. For x' = sqrt(|x|) from 0 both x(t) = 0 and x(t) = t^2/4 solve the \
             equation, and Picard iteration from exactly 0 returns the zero branch.",
            x0[0],
            PROBE_HALF_WIDTHS[0],
            PROBE_HALF_WIDTHS[PROBE_HALF_WIDTHS.len() - 1]
        )
    } else {
        format!(
            "local Lipschitz estimate stays bounded near x0 = {} ({narrowest:.3e}); no non-uniqueness indicator",
            x0[0]
        )
    };
    Ok(NonuniquenessReport {
        picard: base,
        picard_status: report.status,
        divergence_ratio: ratio,
        lipschitz_estimates: estimates,
        flagged,
        message,
    })
}
