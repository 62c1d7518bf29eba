//! Two-variable kernels sampled on a grid, treated as linear operators on
//! sampled functions.
//!
//! A kernel `K(t, tau)` acts on `u` by `v(t_i) = sum_j w_ij K(t_i, t_j) u(t_j)`
//! where `w_ij` are the quadrature weights of the grid rule. Causal kernels
//! integrate over `[t0, t_i]` only, so the diagonal sample gets half a step
//! under the trapezoid rule and no weight at all under the left-endpoint rule.
//!
//! The identity operator has no kernel and is never materialized; Neumann sums
//! carry it implicitly as the zeroth term.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::sup_over_vectors;
use crate::timegrid::{QuadratureRule, Sample, TimeGrid};

#[derive(Clone, Debug, PartialEq)]
pub struct KernelOperator {
    grid: TimeGrid,
    block: usize,
    causal: bool,
    /// Row-major over `(i, j)`, each entry an `m x m` block stored row-major.
    values: Vec<f64>,
}

/// Truncation record of a Neumann-type series.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesDiagnostics {
    /// Terms in the returned partial sum, counting the zeroth term; trailing
    /// terms that vanished identically are not counted.
    pub terms_used: usize,
    /// Sup norm of every computed term, starting with the zeroth.
    pub term_norms: Vec<f64>,
    pub final_term_norm: f64,
    /// A-priori envelope `(s L)^k / k!` for `k = 0, 1, ...` where `s` bounds
    /// the kernel and `L` is the integration length.
    pub bound_sequence: Vec<f64>,
    /// Envelope mass beyond the last computed term.
    pub tail_bound: f64,
    pub converged: bool,
}

impl SeriesDiagnostics {
    pub(crate) fn new(term_norms: Vec<f64>, rate: f64, converged: bool) -> Self {
        let mut terms_used = term_norms.len();
        while terms_used > 1 && term_norms[terms_used - 1] == 0.0 {
            terms_used -= 1;
        }
        let last = term_norms.len().saturating_sub(1);
        Self {
            terms_used,
            final_term_norm: term_norms.last().copied().unwrap_or(0.0),
            bound_sequence: factorial_envelope(rate, last),
            tail_bound: factorial_tail(rate, last),
            term_norms,
            converged,
        }
    }
}

/// `x^k / k!` for `k = 0..=upto`.
pub fn factorial_envelope(x: f64, upto: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(upto + 1);
    let mut term = 1.0;
    out.push(term);
    for k in 1..=upto {
        term *= x / k as f64;
        out.push(term);
    }
    out
}

/// `sum_{j > m} x^j / j!`.
pub fn factorial_tail(x: f64, m: usize) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let mut term = 1.0;
    for k in 1..=m + 1 {
        term *= x / k as f64;
    }
    let mut sum = 0.0;
    let mut j = m + 1;
    while term.is_finite() && (term > sum * 1e-17 || (j as f64) < x) && term > 0.0 {
        sum += term;
        j += 1;
        term *= x / j as f64;
        if j > m + 100_000 {
            break;
        }
    }
    if term.is_finite() {
        sum
    } else {
        f64::INFINITY
    }
}

impl KernelOperator {
    /// Kernel with every block zero.
    pub fn zero(grid: &TimeGrid, block: usize, causal: bool) -> Self {
        let n = grid.len();
        Self { grid: grid.clone(), block, causal, values: vec![0.0; n * n * block * block] }
    }

    /// Samples a matrix-valued kernel; causal kernels are not evaluated above the diagonal.
    pub fn from_fn(
        grid: &TimeGrid,
        block: usize,
        causal: bool,
        mut f: impl FnMut(f64, f64) -> DMatrix<f64>,
    ) -> Result<Self> {
        let mut k = Self::zero(grid, block, causal);
        let pts = grid.points().to_vec();
        for (i, &t) in pts.iter().enumerate() {
            for (j, &tau) in pts.iter().enumerate() {
                if causal && j > i {
                    continue;
                }
                let v = f(t, tau);
                if v.nrows() != block || v.ncols() != block {
                    return Err(Error::DimensionMismatch { expected: block, found: v.nrows() });
                }
                k.set_block(i, j, &v);
            }
        }
        Ok(k)
    }

    pub fn from_scalar_fn(grid: &TimeGrid, causal: bool, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let n = grid.len();
        let pts = grid.points();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if !causal || j <= i {
                    values[i * n + j] = f(pts[i], pts[j]);
                }
            }
        }
        Self { grid: grid.clone(), block: 1, causal, values }
    }

    /// The Volterra integration kernel `h(t - tau)`, with `h(0) = 1`.
    pub fn volterra(grid: &TimeGrid) -> Self {
        Self::from_scalar_fn(grid, true, |_, _| 1.0)
    }

    /// Kernel of the `k`-th power of the Volterra operator sampled from
    /// `(t - tau)^(k-1) / (k-1)!`.
    pub fn volterra_power_closed_form(grid: &TimeGrid, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::ZeroOrder);
        }
        let denom: f64 = (1..k).map(|j| j as f64).product();
        Ok(Self::from_scalar_fn(grid, true, |t, tau| (t - tau).powi(k as i32 - 1) / denom))
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn block_size(&self) -> usize {
        self.block
    }

    pub fn is_causal(&self) -> bool {
        self.causal
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        (i * self.grid.len() + j) * self.block * self.block
    }

    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let o = self.offset(i, j);
        let m = self.block;
        DMatrix::from_row_slice(m, m, &self.values[o..o + m * m])
    }

    /// Entry of a scalar kernel.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.offset(i, j)]
    }

    fn set_block(&mut self, i: usize, j: usize, v: &DMatrix<f64>) {
        let o = self.offset(i, j);
        let m = self.block;
        for a in 0..m {
            for b in 0..m {
                self.values[o + a * m + b] = v[(a, b)];
            }
        }
    }

    /// Largest block norm over the grid.
    pub fn sup_norm(&self) -> f64 {
        let n = self.grid.len();
        let m = self.block;
        let mut best: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let o = self.offset(i, j);
                for a in 0..m {
                    let row: f64 = self.values[o + a * m..o + (a + 1) * m].iter().map(|x| x.abs()).sum();
                    best = best.max(row);
                }
            }
        }
        best
    }

    /// True when every entry is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    fn apply_weight(&self, i: usize, j: usize) -> f64 {
        if self.causal {
            self.grid.cumulative_weight(i, j)
        } else {
            self.grid.full_weight(j)
        }
    }

    /// `v(t_i) = integral K(t_i, xi) u(xi) dxi` by the grid rule.
    pub fn apply(&self, u: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        self.grid.check_len(u.len())?;
        let m = self.block;
        if let Some(bad) = u.iter().find(|x| x.len() != m) {
            return Err(Error::DimensionMismatch { expected: m, found: bad.len() });
        }
        let n = self.grid.len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = DVector::zeros(m);
            let upper = if self.causal { i + 1 } else { n };
            for (j, uj) in u.iter().enumerate().take(upper) {
                let w = self.apply_weight(i, j);
                if w == 0.0 {
                    continue;
                }
                let o = self.offset(i, j);
                for a in 0..m {
                    let row = &self.values[o + a * m..o + (a + 1) * m];
                    acc[a] += w * row.iter().zip(uj.iter()).map(|(k, x)| k * x).sum::<f64>();
                }
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// Scalar convenience for [`apply`](Self::apply).
    pub fn apply_scalar(&self, u: &[f64]) -> Result<Vec<f64>> {
        let lifted: Vec<DVector<f64>> = u.iter().map(|&x| DVector::from_element(1, x)).collect();
        Ok(self.apply(&lifted)?.into_iter().map(|v| v[0]).collect())
    }

    /// Entrywise sum; causal only if both are.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(Self { grid: self.grid.clone(), block: self.block, causal: self.causal && other.causal, values })
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { values: self.values.iter().map(|v| c * v).collect(), ..self.clone() }
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        if self.block != other.block {
            return Err(Error::DimensionMismatch { expected: self.block, found: other.block });
        }
        Ok(())
    }

    /// Weight of the intermediate sample `j` in `C(t_i, t_r) = int B(t_i, xi) A(xi, t_r) dxi`.
    fn compose_weight(&self, causal: bool, i: usize, r: usize, j: usize) -> f64 {
        if !causal {
            return self.grid.full_weight(j);
        }
        match self.grid.rule() {
            // The product of two strictly lower-triangular weighted operators:
            // only samples strictly between t_r and t_i contribute.
            QuadratureRule::LeftEndpoint => {
                if r < j && j < i {
                    self.grid.step(j)
                } else {
                    0.0
                }
            }
            QuadratureRule::Trapezoid => self.grid.subinterval_weight(r, i, j),
        }
    }

    /// Kernel of the operator `B A` (apply `A` first).
    pub fn compose(b: &Self, a: &Self) -> Result<Self> {
        b.check_compatible(a)?;
        let causal = a.causal && b.causal;
        let n = b.grid.len();
        let m = b.block;
        let mut out = Self::zero(&b.grid, m, causal);
        for i in 0..n {
            let (r_hi, j_range) = if causal { (i, 0..=i) } else { (n - 1, 0..=n - 1) };
            for r in 0..=r_hi {
                let o_out = out.offset(i, r);
                for j in j_range.clone() {
                    if causal && j < r {
                        continue;
                    }
                    let w = b.compose_weight(causal, i, r, j);
                    if w == 0.0 {
                        continue;
                    }
                    let ob = b.offset(i, j);
                    let oa = a.offset(j, r);
                    for p in 0..m {
                        for q in 0..m {
                            let mut s = 0.0;
                            for l in 0..m {
                                s += b.values[ob + p * m + l] * a.values[oa + l * m + q];
                            }
                            out.values[o_out + p * m + q] += w * s;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// `k`-fold composition of the kernel with itself.
    pub fn power(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::ZeroOrder);
        }
        let mut acc = self.clone();
        for _ in 1..k {
            acc = Self::compose(&acc, self)?;
        }
        Ok(acc)
    }

    /// The discrete operator as a dense matrix acting on stacked samples,
    /// entries `w_ij K(t_i, t_j)`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.grid.len();
        let m = self.block;
        let mut d = DMatrix::zeros(n * m, n * m);
        for i in 0..n {
            for j in 0..n {
                let w = self.apply_weight(i, j);
                if w == 0.0 {
                    continue;
                }
                let o = self.offset(i, j);
                for a in 0..m {
                    for b in 0..m {
                        d[(i * m + a, j * m + b)] = w * self.values[o + a * m + b];
                    }
                }
            }
        }
        d
    }

    /// Solves `x = g + K x` by summing `sum_n K^n g`.
    ///
    /// Stops once the sup norm of the newest term is at most `rtol` times the
    /// sup norm of the partial sum, or the term vanishes identically.
    pub fn neumann_inverse_apply(
        &self,
        g: &[DVector<f64>],
        rtol: f64,
        max_terms: usize,
    ) -> Result<(Vec<DVector<f64>>, SeriesDiagnostics)> {
        if !self.causal {
            return Err(Error::NonCausal);
        }
        self.grid.check_len(g.len())?;
        let rate = self.sup_norm() * self.grid.span();
        let mut sum: Vec<DVector<f64>> = g.to_vec();
        let mut term: Vec<DVector<f64>> = g.to_vec();
        let mut norms = vec![sup_over_vectors(g)];
        loop {
            if norms.len() >= max_terms.max(1) {
                let diag = SeriesDiagnostics::new(norms, rate, false);
                return Err(Error::NonConvergence(Box::new(diag)));
            }
            term = self.apply(&term)?;
            let tn = sup_over_vectors(&term);
            for (s, t) in sum.iter_mut().zip(&term) {
                *s += t;
            }
            norms.push(tn);
            if tn == 0.0 || tn <= rtol * sup_over_vectors(&sum) {
                return Ok((sum, SeriesDiagnostics::new(norms, rate, true)));
            }
        }
    }
}

/// `g^{(-k)}(t_i) = int_{t0}^{t_i} (t_i - tau)^(k-1) / (k-1)! g(tau) dtau`.
pub fn cauchy_repeated_integral<S: Sample>(grid: &TimeGrid, g: &[S], k: usize) -> Result<Vec<S>> {
    if k == 0 {
        return Err(Error::ZeroOrder);
    }
    if k == 1 {
        return grid.cumulative_integral(g);
    }
    grid.check_len(g.len())?;
    let pts = grid.points();
    let denom: f64 = (1..k).map(|j| j as f64).product();
    let mut out = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        let mut acc = g[0].zeros_like();
        for j in 0..=i {
            let w = grid.cumulative_weight(i, j);
            if w != 0.0 {
                acc.add_scaled(&g[j], w * (pts[i] - pts[j]).powi(k as i32 - 1) / denom);
            }
        }
        out.push(acc);
    }
    Ok(out)
}
