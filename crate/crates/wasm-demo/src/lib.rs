//! Browser bindings for three volterra-core operations: an LTI phase orbit,
//! Picard iterates of an expression field, and the Peano-Baker term norms
//! of a time-varying matrix.
//!
//! Each export wraps a plain function returning `Result<_, String>`, which is
//! what the native tests exercise.

use nalgebra::{DMatrix, DVector};
use wasm_bindgen::prelude::*;

use volterra_core::kernel::factorial_envelope;
use volterra_core::ltv::{DEFAULT_MAX_TERMS, DEFAULT_RTOL};
use volterra_core::picard::PicardIteration;
use volterra_core::{
    lti_homogeneous, peano_baker, Expr, LtiSystem, LtvSystem, NonlinearSystem, QuadratureRule, TimeGrid,
};

const MAX_STEPS: usize = 20_000;
const MAX_ITERATIONS: usize = 60;

fn grid(t_end: f64, steps: usize) -> Result<TimeGrid, String> {
    if steps == 0 || steps > MAX_STEPS {
        return Err(format!("steps must be in 1..={MAX_STEPS}"));
    }
    TimeGrid::make_uniform(0.0, t_end, steps, QuadratureRule::Trapezoid).map_err(|e| e.to_string())
}

/// Semicolon-separated expressions, each parse error tagged with its position in the list.
fn parse_list(src: &str) -> Result<Vec<Expr>, String> {
    src.split(';')
        .enumerate()
        .map(|(i, s)| Expr::parse(s.trim()).map_err(|e| format!("entry {}: {e}", i + 1)))
        .collect()
}

/// `x(t) = e^{A t} x0` for a 2x2 `A` given row-major, as interleaved `x1, x2` pairs.
pub fn phase_orbit(a: &[f64], x0: &[f64], t_end: f64, steps: usize) -> Result<Vec<f64>, String> {
    if a.len() != 4 || x0.len() != 2 {
        return Err("expected four matrix entries and two initial values".into());
    }
    let sys = LtiSystem::new(DMatrix::from_row_slice(2, 2, a)).map_err(|e| e.to_string())?;
    let traj =
        lti_homogeneous(&sys, &DVector::from_column_slice(x0), &grid(t_end, steps)?).map_err(|e| e.to_string())?;
    Ok(traj.states.iter().flat_map(|x| [x[0], x[1]]).collect())
}

/// Picard iterates together with their successive sup distances.
#[wasm_bindgen]
#[derive(Debug)]
pub struct PicardRun {
    dim: usize,
    times: Vec<f64>,
    iterates: Vec<Vec<DVector<f64>>>,
    distances: Vec<f64>,
    envelope: Vec<f64>,
}

/// Runs `iterations` Picard steps for `x' = f(t, x)` on `[0, t_end]`.
///
/// `field` holds one expression per component separated by `;`. The envelope
/// is `d_0 (l T)^k / k!` for the supplied Lipschitz constant `l`. Iteration
/// stops early once an iterate leaves the finite range.
pub fn picard_run(
    field: &str,
    x0: &[f64],
    t_end: f64,
    steps: usize,
    iterations: usize,
    lipschitz: f64,
) -> Result<PicardRun, String> {
    if iterations == 0 || iterations > MAX_ITERATIONS {
        return Err(format!("iterations must be in 1..={MAX_ITERATIONS}"));
    }
    if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
        return Err("lipschitz constant must be finite and non-negative".into());
    }
    let sys = NonlinearSystem::from_exprs(parse_list(field)?).map_err(|e| e.to_string())?;
    if x0.len() != sys.dimension() {
        return Err(format!("field has {} components but {} initial values were given", sys.dimension(), x0.len()));
    }
    let g = grid(t_end, steps)?;
    let mut it = PicardIteration::new(&sys, &DVector::from_column_slice(x0), &g).map_err(|e| e.to_string())?;
    let mut iterates = vec![it.current().to_vec()];
    let mut distances = Vec::new();
    for _ in 0..iterations {
        match it.advance() {
            Ok(d) if d.is_finite() => {
                distances.push(d);
                iterates.push(it.current().to_vec());
            }
            _ => break,
        }
    }
    let envelope = match distances.first() {
        Some(d0) => factorial_envelope(lipschitz * g.span(), distances.len() - 1).iter().map(|b| b * d0).collect(),
        None => Vec::new(),
    };
    Ok(PicardRun { dim: sys.dimension(), times: g.points().to_vec(), iterates, distances, envelope })
}

#[wasm_bindgen]
impl PicardRun {
    pub fn times(&self) -> Vec<f64> {
        self.times.clone()
    }

    /// Number of stored iterates, the initial constant included.
    pub fn count(&self) -> usize {
        self.iterates.len()
    }

    /// Component `c` (zero-based) of iterate `k` on the grid.
    pub fn iterate(&self, k: usize, c: usize) -> Vec<f64> {
        match self.iterates.get(k) {
            Some(x) if c < self.dim => x.iter().map(|v| v[c]).collect(),
            _ => Vec::new(),
        }
    }

    pub fn distances(&self) -> Vec<f64> {
        self.distances.clone()
    }

    pub fn envelope(&self) -> Vec<f64> {
        self.envelope.clone()
    }
}

/// Peano-Baker term norms and their factorial envelope.
#[wasm_bindgen]
#[derive(Debug)]
pub struct SeriesRun {
    term_norms: Vec<f64>,
    envelope: Vec<f64>,
    phi_end: Vec<f64>,
    converged: bool,
}

/// Sums the Peano-Baker series of `A(t)` on `[0, t_end]` from base 0.
///
/// `entries` lists the `n^2` entries of `A` row-major as expressions in `t`,
/// separated by `;`.
pub fn series_run(entries: &str, t_end: f64, steps: usize) -> Result<SeriesRun, String> {
    let exprs = parse_list(entries)?;
    let n = (exprs.len() as f64).sqrt().round() as usize;
    if n == 0 || n * n != exprs.len() {
        return Err(format!("{} entries do not form a square matrix", exprs.len()));
    }
    let sys = LtvSystem::from_exprs(n, exprs).map_err(|e| e.to_string())?;
    let table =
        peano_baker(&sys, 0.0, &grid(t_end, steps)?, DEFAULT_RTOL, DEFAULT_MAX_TERMS).map_err(|e| e.to_string())?;
    let series = table.series.as_ref().ok_or("series diagnostics missing")?;
    let last = table.last();
    Ok(SeriesRun {
        term_norms: series.term_norms.clone(),
        envelope: series.bound_sequence.clone(),
        phi_end: (0..n).flat_map(|i| (0..n).map(move |j| last[(i, j)])).collect(),
        converged: series.converged,
    })
}

#[wasm_bindgen]
impl SeriesRun {
    pub fn term_norms(&self) -> Vec<f64> {
        self.term_norms.clone()
    }

    pub fn envelope(&self) -> Vec<f64> {
        self.envelope.clone()
    }

    /// `Phi(T, 0)` row-major.
    pub fn phi_end(&self) -> Vec<f64> {
        self.phi_end.clone()
    }

    pub fn converged(&self) -> bool {
        self.converged
    }
}

#[wasm_bindgen(js_name = phaseOrbit)]
pub fn phase_orbit_js(a: &[f64], x0: &[f64], t_end: f64, steps: usize) -> Result<Vec<f64>, JsError> {
    phase_orbit(a, x0, t_end, steps).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = picardRun)]
pub fn picard_run_js(
    field: &str,
    x0: &[f64],
    t_end: f64,
    steps: usize,
    iterations: usize,
    lipschitz: f64,
) -> Result<PicardRun, JsError> {
    picard_run(field, x0, t_end, steps, iterations, lipschitz).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = seriesRun)]
pub fn series_run_js(entries: &str, t_end: f64, steps: usize) -> Result<SeriesRun, JsError> {
    series_run(entries, t_end, steps).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(k: usize) -> f64 {
        (1..=k).map(|i| i as f64).product()
    }

    #[test]
    fn diagonal_orbit_matches_exponentials() {
        let out = phase_orbit(&[-1.0, 0.0, 0.0, -2.0], &[1.0, 2.0], 2.0, 40).unwrap();
        assert_eq!(out.len(), 82);
        for (i, pair) in out.chunks(2).enumerate() {
            let t = 2.0 * i as f64 / 40.0;
            assert!((pair[0] - (-t).exp()).abs() < 1e-10);
            assert!((pair[1] - 2.0 * (-2.0 * t).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn rotation_orbit_stays_on_circle() {
        let out = phase_orbit(&[0.0, 1.0, -1.0, 0.0], &[0.0, 1.0], 10.0, 500).unwrap();
        for pair in out.chunks(2) {
            assert!((pair[0].hypot(pair[1]) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn orbit_rejects_bad_shapes() {
        assert!(phase_orbit(&[1.0; 3], &[1.0, 0.0], 1.0, 10).is_err());
        assert!(phase_orbit(&[1.0; 4], &[1.0, 0.0], 1.0, 0).is_err());
    }

    #[test]
    fn picard_on_growth_field_builds_taylor_polynomials() {
        let run = picard_run("x1", &[1.0], 1.0, 2000, 8, 1.0).unwrap();
        assert_eq!(run.count(), 9);
        let times = run.times();
        for k in 0..run.count() {
            let xk = run.iterate(k, 0);
            for (t, x) in times.iter().zip(&xk) {
                let taylor: f64 = (0..=k).map(|m| t.powi(m as i32) / factorial(m)).sum();
                assert!((x - taylor).abs() < 1e-6, "k={k} t={t}");
            }
        }
        for (d, b) in run.distances().iter().zip(run.envelope()) {
            assert!(*d <= b * (1.0 + 1e-6), "{d} > {b}");
        }
        assert!(run.iterate(20, 0).is_empty() && run.iterate(0, 1).is_empty());
    }

    #[test]
    fn picard_stops_when_iterates_overflow() {
        let run = picard_run("x1^2 * 1e300", &[1e10], 1.0, 10, 10, 1.0).unwrap();
        assert!(run.count() < 11);
        assert_eq!(run.distances().len(), run.count() - 1);
    }

    #[test]
    fn picard_reports_parse_errors_by_entry() {
        let err = picard_run("x2; sin(", &[0.0, 1.0], 1.0, 10, 3, 1.0).unwrap_err();
        assert!(err.starts_with("entry 2"), "{err}");
        assert!(picard_run("x1", &[0.0, 1.0], 1.0, 10, 3, 1.0).is_err());
        assert!(picard_run("x1", &[0.0], 1.0, 10, 0, 1.0).is_err());
    }

    #[test]
    fn rotation_series_terms_are_powers_over_factorials() {
        let run = series_run("0; 1; -1; 0", 2.0, 4000).unwrap();
        assert!(run.converged());
        let norms = run.term_norms();
        for (k, norm) in norms.iter().enumerate().take(8) {
            let exact = 2f64.powi(k as i32) / factorial(k);
            // trapezoid error grows like k^2 h^2
            assert!((norm - exact).abs() <= 1e-5 * exact, "k={k}");
        }
        // rotation attains the envelope, so only quadrature error separates them
        for (n, b) in norms.iter().zip(run.envelope()) {
            assert!(*n <= b * (1.0 + 1e-4));
        }
        let phi = run.phi_end();
        let (c, s) = (2f64.cos(), 2f64.sin());
        for (got, want) in phi.iter().zip([c, s, -s, c]) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn series_needs_square_entry_count() {
        assert!(series_run("t; 1; 0", 1.0, 10).is_err());
        assert!(series_run("t; 1; 0; q", 1.0, 10).is_err());
    }
}
