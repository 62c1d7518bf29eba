//! Norms and small dense helpers shared by the engines.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `max` that returns NaN when either side is NaN, unlike `f64::max`.
pub fn max_nan(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// Largest absolute component; NaN if any component is NaN.
pub fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| max_nan(m, x.abs()))
}

/// Induced infinity norm (max absolute row sum).
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, max_nan)
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| max_nan(a, x.abs()))
}

/// Sup over samples of the sup norm of each sample.
pub fn sup_over_vectors(samples: &[DVector<f64>]) -> f64 {
    samples.iter().map(sup_norm).fold(0.0, max_nan)
}

pub fn sup_over_matrices(samples: &[DMatrix<f64>]) -> f64 {
    samples.iter().map(inf_norm).fold(0.0, max_nan)
}

pub fn check_square(m: &DMatrix<f64>) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(m.nrows())
}

/// Condition numbers above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Inverse with an infinity-norm condition check.
pub fn checked_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(m)?;
    let inv = m.clone().lu().try_inverse().ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
    let condition = inf_norm(m) * inf_norm(&inv);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::IllConditioned { condition });
    }
    Ok(inv)
}
