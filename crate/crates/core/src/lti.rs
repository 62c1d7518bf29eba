//! Linear time-invariant systems `x' = A x + w`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{check_square, inf_norm};
use crate::timegrid::TimeGrid;
use crate::trajectory::{Solver, Trajectory};

pub const DEFAULT_EXP_RTOL: f64 = 1e-10;

const MAX_SERIES_TERMS: usize = 200;

/// `e^{A t}` by the power series, wrapped in scaling and squaring.
///
/// `A t` is halved `s` times until its norm is at most 1/2, the series is
/// summed to `rtol / 2^s` (squaring multiplies relative error by about `2^s`),
/// then the result is squared `s` times.
pub fn matrix_exp(a: &DMatrix<f64>, t: f64, rtol: f64) -> Result<DMatrix<f64>> {
    let n = check_square(a)?;
    let scaled = a * t;
    let norm = inf_norm(&scaled);
    if !norm.is_finite() {
        return Err(Error::InvalidArgument("matrix exponential of a non-finite matrix".into()));
    }
    let mut squarings = 0u32;
    while norm / 2f64.powi(squarings as i32) > 0.5 {
        squarings += 1;
    }
    let m = scaled / 2f64.powi(squarings as i32);
    let target = (rtol / 2f64.powi(squarings as i32)).max(f64::EPSILON * 0.25);

    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..MAX_SERIES_TERMS {
        term = &term * &m / k as f64;
        let tn = inf_norm(&term);
        sum += &term;
        if tn <= target * inf_norm(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    Ok(sum)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        check_square(&a)?;
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("system matrix has non-finite entries".into()));
        }
        Ok(Self { a })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn dimension(&self) -> usize {
        self.a.nrows()
    }

    fn check_vec(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dimension() {
            return Err(Error::DimensionMismatch { expected: self.dimension(), found: v.len() });
        }
        Ok(())
    }

    /// `s -> e^{A s}`, memoized on the exact bits of `s`.
    fn exp_cache(&self, rtol: f64) -> impl FnMut(f64) -> Result<DMatrix<f64>> + '_ {
        let mut cache: HashMap<u64, DMatrix<f64>> = HashMap::new();
        move |s: f64| {
            if let Some(m) = cache.get(&s.to_bits()) {
                return Ok(m.clone());
            }
            let m = matrix_exp(&self.a, s, rtol)?;
            cache.insert(s.to_bits(), m.clone());
            Ok(m)
        }
    }
}

/// Zero-input response `x(t_i) = e^{A (t_i - t0)} x0`.
pub fn lti_homogeneous(sys: &LtiSystem, x0: &DVector<f64>, grid: &TimeGrid) -> Result<Trajectory> {
    sys.check_vec(x0)?;
    let t0 = grid.t0();
    let states = grid
        .points()
        .iter()
        .map(|&t| Ok(matrix_exp(&sys.a, t - t0, DEFAULT_EXP_RTOL)? * x0))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory::new(grid.points().to_vec(), states, Solver::MatrixExponential))
}

/// Variation-of-constants response
/// `x(t_i) = e^{A (t_i - t0)} x0 + int_{t0}^{t_i} e^{A (t_i - tau)} w(tau) dtau`
/// with the convolution integral taken by the grid rule.
pub fn lti_forced(sys: &LtiSystem, x0: &DVector<f64>, w: &[DVector<f64>], grid: &TimeGrid) -> Result<Trajectory> {
    sys.check_vec(x0)?;
    grid.check_len(w.len())?;
    for wj in w {
        sys.check_vec(wj)?;
    }
    let pts = grid.points();
    let uniform = grid.is_uniform();
    let h = grid.span() / grid.intervals() as f64;
    let mut exp_of = sys.exp_cache(DEFAULT_EXP_RTOL);
    let mut states = Vec::with_capacity(pts.len());
    for i in 0..pts.len() {
        let lag = |j: usize| if uniform { (i - j) as f64 * h } else { pts[i] - pts[j] };
        let mut x = exp_of(lag(0))? * x0;
        for (j, wj) in w.iter().enumerate().take(i + 1) {
            let weight = grid.cumulative_weight(i, j);
            if weight == 0.0 {
                continue;
            }
            x += exp_of(lag(j))? * wj * weight;
        }
        states.push(x);
    }
    Ok(Trajectory::new(pts.to_vec(), states, Solver::MatrixExponential))
}
