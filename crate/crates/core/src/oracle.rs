//! Reference integrator used to cross-check the series and iteration engines.
//!
//! Classical fixed-step RK4 with a fixed number of substeps per grid interval.
//! Nothing here touches the engines' quadrature or series code; the only thing
//! shared with them is the list of grid times.

use nalgebra::DVector;
use thiserror::Error;

use crate::expr::{Bindings, EvalError, Expr};
use crate::timegrid::TimeGrid;
use crate::trajectory::{Solver, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleConfig {
    pub substeps_per_interval: usize,
    /// Attach a step-halving error estimate to every sample.
    pub richardson: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { substeps_per_interval: 16, richardson: false }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum OracleError {
    #[error("substeps per interval must be at least 1")]
    ZeroSubsteps,
    #[error("field evaluation failed at t = {t}: {source}")]
    Field { t: f64, source: EvalError },
    #[error("state became non-finite at t = {t}; last finite state at t = {last_finite_time}")]
    NonFinite { t: f64, last_finite_time: f64 },
    #[error("lower bound {lower} exceeds upper bound {upper}")]
    DegenerateBounds { lower: f64, upper: f64 },
    #[error("start index {0} outside grid")]
    BadStart(usize),
    #[error("state dimension {found} does not match field output {expected}")]
    Dimension { expected: usize, found: usize },
}

/// Integrates `x' = field(t, x)` from `x(t0) = x0` over the grid.
pub fn rk4_solve<F>(field: F, x0: &DVector<f64>, grid: &TimeGrid, cfg: OracleConfig) -> Result<Trajectory, OracleError>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>, EvalError>,
{
    rk4_solve_from(field, x0, 0, grid, &[], cfg)
}

/// Integrates forward and backward from the grid point `start`.
///
/// `jumps` are `(grid index, increment)` pairs applied on arrival at that
/// index (forward direction only), so the stored sample is the post-jump state.
pub fn rk4_solve_from<F>(
    field: F,
    x_start: &DVector<f64>,
    start: usize,
    grid: &TimeGrid,
    jumps: &[(usize, DVector<f64>)],
    cfg: OracleConfig,
) -> Result<Trajectory, OracleError>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>, EvalError>,
{
    if cfg.substeps_per_interval == 0 {
        return Err(OracleError::ZeroSubsteps);
    }
    if start >= grid.len() {
        return Err(OracleError::BadStart(start));
    }
    let states = integrate(&field, x_start, start, grid, jumps, cfg.substeps_per_interval)?;
    let mut traj = Trajectory::new(grid.points().to_vec(), states, Solver::Oracle);
    traj.provenance.truncation_order = Some(4);
    if cfg.richardson {
        let fine = integrate(&field, x_start, start, grid, jumps, 2 * cfg.substeps_per_interval)?;
        let est = traj.states.iter().zip(&fine).map(|(c, f)| (c - f).amax() * 16.0 / 15.0).collect();
        traj.provenance.error_estimates = Some(est);
    }
    Ok(traj)
}

fn integrate<F>(
    field: &F,
    x_start: &DVector<f64>,
    start: usize,
    grid: &TimeGrid,
    jumps: &[(usize, DVector<f64>)],
    substeps: usize,
) -> Result<Vec<DVector<f64>>, OracleError>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>, EvalError>,
{
    let pts = grid.points();
    let n = pts.len();
    let mut out = vec![DVector::zeros(x_start.len()); n];
    let jump_at = |i: usize, x: &mut DVector<f64>| {
        for (_, w) in jumps.iter().filter(|(k, _)| *k == i) {
            *x += w;
        }
    };

    let mut x = x_start.clone();
    jump_at(start, &mut x);
    out[start] = x.clone();
    let mut last_finite = pts[start];
    for i in start..n - 1 {
        x = advance(field, x, pts[i], pts[i + 1], substeps, &mut last_finite)?;
        jump_at(i + 1, &mut x);
        out[i + 1] = x.clone();
    }

    let mut x = x_start.clone();
    let mut last_finite = pts[start];
    for i in (1..=start).rev() {
        x = advance(field, x, pts[i], pts[i - 1], substeps, &mut last_finite)?;
        out[i - 1] = x.clone();
    }
    Ok(out)
}

fn advance<F>(
    field: &F,
    mut x: DVector<f64>,
    from: f64,
    to: f64,
    substeps: usize,
    last_finite: &mut f64,
) -> Result<DVector<f64>, OracleError>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>, EvalError>,
{
    let h = (to - from) / substeps as f64;
    let eval = |t: f64, y: &DVector<f64>| -> Result<DVector<f64>, OracleError> {
        let d = field(t, y).map_err(|source| OracleError::Field { t, source })?;
        if d.len() != y.len() {
            return Err(OracleError::Dimension { expected: d.len(), found: y.len() });
        }
        Ok(d)
    };
    for s in 0..substeps {
        let t = from + s as f64 * h;
        let k1 = eval(t, &x)?;
        let k2 = eval(t + 0.5 * h, &(&x + &k1 * (0.5 * h)))?;
        let k3 = eval(t + 0.5 * h, &(&x + &k2 * (0.5 * h)))?;
        let k4 = eval(t + h, &(&x + &k3 * h))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let t_next = if s + 1 == substeps { to } else { t + h };
        if x.iter().all(|v| v.is_finite()) {
            *last_finite = t_next;
        } else {
            return Err(OracleError::NonFinite { t: t_next, last_finite_time: *last_finite });
        }
    }
    Ok(x)
}

/// Compares `d/dt int_{a(t)}^{b(t)} f(t, tau) dtau` against the Leibniz rule
/// `f(t, b) b' - f(t, a) a' + int_a^b df/dt dtau`, both sides by central
/// differences with step `h`. Returns the absolute residual.
pub fn leibniz_check<F>(f: F, lower: &Expr, upper: &Expr, t: f64, h: f64) -> Result<f64, OracleError>
where
    F: Fn(f64, f64) -> f64,
{
    let bound = |e: &Expr, s: f64| e.eval(&Bindings::time(s)).map_err(|source| OracleError::Field { t: s, source });
    let a = bound(lower, t)?;
    let b = bound(upper, t)?;
    if a > b {
        return Err(OracleError::DegenerateBounds { lower: a, upper: b });
    }
    let big_f = |s: f64| -> Result<f64, OracleError> {
        let (lo, hi) = (bound(lower, s)?, bound(upper, s)?);
        Ok(simpson(|tau| f(s, tau), lo, hi))
    };
    let lhs = (big_f(t + h)? - big_f(t - h)?) / (2.0 * h);
    let da = (bound(lower, t + h)? - bound(lower, t - h)?) / (2.0 * h);
    let db = (bound(upper, t + h)? - bound(upper, t - h)?) / (2.0 * h);
    let partial = simpson(|tau| (f(t + h, tau) - f(t - h, tau)) / (2.0 * h), a, b);
    let rhs = f(t, b) * db - f(t, a) * da + partial;
    Ok((lhs - rhs).abs())
}

fn simpson(g: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const PANELS: usize = 2048;
    if a == b {
        return 0.0;
    }
    let h = (b - a) / PANELS as f64;
    let mut s = g(a) + g(b);
    for k in 1..PANELS {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * g(a + k as f64 * h);
    }
    s * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timegrid::QuadratureRule;

    fn grid(t_end: f64, n: usize) -> TimeGrid {
        TimeGrid::make_uniform(0.0, t_end, n, QuadratureRule::Trapezoid).unwrap()
    }

    fn scalar(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn zero_field_is_constant() {
        let x0 = DVector::from_vec(vec![1.0, -2.0]);
        let traj = rk4_solve(|_, x| Ok(DVector::zeros(x.len())), &x0, &grid(1.0, 10), OracleConfig::default()).unwrap();
        assert!(traj.states.iter().all(|s| *s == x0));
    }

    #[test]
    fn exponential_growth() {
        let traj = rk4_solve(|_, x| Ok(x.clone()), &scalar(1.0), &grid(1.0, 100), OracleConfig::default()).unwrap();
        assert!((traj.last()[0] - std::f64::consts::E).abs() < 1e-10);
    }

    #[test]
    fn quadratic_field_before_escape() {
        let g = grid(0.9, 900);
        let traj = rk4_solve(|_, x| Ok(x.component_mul(x)), &scalar(1.0), &g, OracleConfig::default()).unwrap();
        for (t, x) in traj.times.iter().zip(&traj.states) {
            assert!((x[0] - 1.0 / (1.0 - t)).abs() < 1e-6);
        }
    }

    #[test]
    fn quadratic_field_escapes_near_one() {
        let g = grid(1.5, 1500);
        match rk4_solve(|_, x| Ok(x.component_mul(x)), &scalar(1.0), &g, OracleConfig::default()) {
            Err(OracleError::NonFinite { last_finite_time, .. }) => {
                assert!(last_finite_time > 0.99 && last_finite_time < 1.01, "{last_finite_time}");
            }
            other => panic!("expected escape, got {other:?}"),
        }
    }

    #[test]
    fn observed_order_is_four() {
        let g = grid(2.0, 10);
        let field = |t: f64, x: &DVector<f64>| Ok(DVector::from_element(1, -x[0] * t.cos() + t.sin()));
        let errs: Vec<f64> = [1usize, 2, 4]
            .iter()
            .map(|&s| {
                let cfg = OracleConfig { substeps_per_interval: s, richardson: false };
                let coarse = rk4_solve(field, &scalar(0.5), &g, cfg).unwrap();
                let reference =
                    rk4_solve(field, &scalar(0.5), &g, OracleConfig { substeps_per_interval: 256, richardson: false })
                        .unwrap();
                coarse.max_deviation(&reference)
            })
            .collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 3.8, "{errs:?}");
        }
    }

    #[test]
    fn richardson_estimates_are_attached() {
        let cfg = OracleConfig { substeps_per_interval: 2, richardson: true };
        let traj = rk4_solve(|_, x| Ok(-x.clone()), &scalar(1.0), &grid(1.0, 10), cfg).unwrap();
        let est = traj.provenance.error_estimates.as_ref().unwrap();
        assert_eq!(est.len(), 11);
        let actual = (traj.last()[0] - (-1f64).exp()).abs();
        assert!(est[10] > 0.2 * actual && est[10] < 5.0 * actual);
    }

    #[test]
    fn backward_and_jumps() {
        let g = grid(2.0, 20);
        let traj = rk4_solve_from(|_, x| Ok(x.clone()), &scalar(1.0), 10, &g, &[], OracleConfig::default()).unwrap();
        assert_eq!(traj.states[10][0], 1.0);
        assert!((traj.states[0][0] - (-1f64).exp()).abs() < 1e-10);
        let jumped = rk4_solve_from(
            |_, x| Ok(DVector::zeros(x.len())),
            &scalar(0.0),
            0,
            &g,
            &[(5, scalar(2.0))],
            OracleConfig::default(),
        )
        .unwrap();
        assert_eq!(jumped.states[4][0], 0.0);
        assert_eq!(jumped.states[5][0], 2.0);
        assert_eq!(jumped.states[20][0], 2.0);
    }

    #[test]
    fn field_errors_surface() {
        let r = rk4_solve(|_, _| Err(EvalError::DivisionByZero), &scalar(1.0), &grid(1.0, 2), OracleConfig::default());
        assert!(matches!(r, Err(OracleError::Field { .. })));
        let r = rk4_solve(
            |_, x| Ok(x.clone()),
            &scalar(1.0),
            &grid(1.0, 2),
            OracleConfig { substeps_per_interval: 0, richardson: false },
        );
        assert_eq!(r.unwrap_err(), OracleError::ZeroSubsteps);
    }

    #[test]
    fn leibniz_examples() {
        let zero = Expr::parse("0").unwrap();
        let upper = Expr::parse("t").unwrap();
        let h = 1e-3;
        for t in [0.3, 1.0, 2.0] {
            let r1 = leibniz_check(|_, _| 1.0, &zero, &upper, t, h).unwrap();
            assert!(r1 < 1e-8, "{r1}");
            // d/dt t^3/2 = 3t^2/2
            let r2 = leibniz_check(|s, tau| s * tau, &zero, &upper, t, h).unwrap();
            assert!(r2 < 10.0 * h * h, "{r2}");
            // int_0^t e^{-(t - tau)} = 1 - e^{-t}
            let r3 = leibniz_check(|s, tau| (-(s - tau)).exp(), &zero, &upper, t, h).unwrap();
            assert!(r3 < 10.0 * h * h, "{r3}");
        }
    }

    #[test]
    fn leibniz_residual_shrinks_quadratically() {
        let zero = Expr::parse("0").unwrap();
        let upper = Expr::parse("t^2").unwrap();
        let f = |s: f64, tau: f64| (s * tau).sin();
        let r1 = leibniz_check(f, &zero, &upper, 1.2, 1e-2).unwrap();
        let r2 = leibniz_check(f, &zero, &upper, 1.2, 5e-3).unwrap();
        assert!(r1 / r2 > 3.0, "{r1} {r2}");
    }

    #[test]
    fn leibniz_degenerate_bounds() {
        let lower = Expr::parse("t + 1").unwrap();
        let upper = Expr::parse("t").unwrap();
        assert!(matches!(
            leibniz_check(|_, _| 1.0, &lower, &upper, 0.5, 1e-3),
            Err(OracleError::DegenerateBounds { .. })
        ));
    }
}
