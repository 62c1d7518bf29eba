//! Time discretization and the quadrature rules every integral in the crate goes through.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Quadrature rule used for integrals over grid samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum QuadratureRule {
    /// Rectangle rule sampling the left end of each interval. Cumulative
    /// integrals never see the current sample, so discrete Volterra operators
    /// are strictly lower triangular.
    LeftEndpoint,
    /// Composite trapezoid rule, second order.
    #[default]
    Trapezoid,
}

impl QuadratureRule {
    pub fn name(self) -> &'static str {
        match self {
            QuadratureRule::LeftEndpoint => "left-endpoint",
            QuadratureRule::Trapezoid => "trapezoid",
        }
    }
}

/// Ordered sample times on `[t0, T]` together with a quadrature rule.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    rule: QuadratureRule,
}

impl TimeGrid {
    /// `n + 1` equally spaced points from `t0` to `t_end`.
    pub fn make_uniform(t0: f64, t_end: f64, n: usize, rule: QuadratureRule) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGrid("grid needs at least one subdivision".into()));
        }
        if !(t0.is_finite() && t_end.is_finite()) || t_end <= t0 {
            return Err(Error::InvalidGrid(format!("time span [{t0}, {t_end}] is not a positive finite interval")));
        }
        let h = (t_end - t0) / n as f64;
        let mut points: Vec<f64> = (0..=n).map(|i| t0 + i as f64 * h).collect();
        // keep the endpoint exact
        points[n] = t_end;
        Ok(Self { points, rule })
    }

    /// Grid over arbitrary strictly increasing points.
    pub fn from_points(points: Vec<f64>, rule: QuadratureRule) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid("grid needs at least two points".into()));
        }
        for w in points.windows(2) {
            let h = w[1] - w[0];
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "points must be finite and strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { points, rule })
    }

    pub fn t0(&self) -> f64 {
        self.points[0]
    }

    pub fn t_end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn span(&self) -> f64 {
        self.t_end() - self.t0()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of sample points, `N + 1`.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; a grid has at least two points.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of subdivisions `N`.
    pub fn intervals(&self) -> usize {
        self.points.len() - 1
    }

    pub fn rule(&self) -> QuadratureRule {
        self.rule
    }

    /// Same points, different rule.
    pub fn with_rule(&self, rule: QuadratureRule) -> Self {
        Self { points: self.points.clone(), rule }
    }

    pub fn step(&self, j: usize) -> f64 {
        self.points[j + 1] - self.points[j]
    }

    pub fn max_step(&self) -> f64 {
        (0..self.intervals()).map(|j| self.step(j)).fold(0.0, f64::max)
    }

    pub fn is_uniform(&self) -> bool {
        let h = self.span() / self.intervals() as f64;
        (0..self.intervals()).all(|j| (self.step(j) - h).abs() <= 1e-12 * h.max(1.0))
    }

    /// Index of the grid point equal to `t` (within a relative `1e-12` of the step).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * self.max_step();
        let pos = self.points.partition_point(|&p| p < t - tol);
        (pos < self.points.len() && (self.points[pos] - t).abs() <= tol).then_some(pos)
    }

    /// Weight of sample `j` in the integral over `[t0, t_i]`.
    ///
    /// These are the entries of the discrete Volterra operator; they vanish for
    /// `j > i`, and for `j == i` under the left-endpoint rule.
    pub fn cumulative_weight(&self, i: usize, j: usize) -> f64 {
        if j > i || i == 0 {
            return 0.0;
        }
        match self.rule {
            QuadratureRule::LeftEndpoint => {
                if j < i {
                    self.step(j)
                } else {
                    0.0
                }
            }
            QuadratureRule::Trapezoid => {
                let left = if j > 0 { self.step(j - 1) } else { 0.0 };
                let right = if j < i { self.step(j) } else { 0.0 };
                0.5 * (left + right)
            }
        }
    }

    /// Weight of sample `j` in the integral over `[t_lo, t_hi]` (`lo <= hi`).
    pub fn subinterval_weight(&self, lo: usize, hi: usize, j: usize) -> f64 {
        if j < lo || j > hi || lo == hi {
            return 0.0;
        }
        match self.rule {
            QuadratureRule::LeftEndpoint => {
                if j < hi {
                    self.step(j)
                } else {
                    0.0
                }
            }
            QuadratureRule::Trapezoid => {
                let left = if j > lo { self.step(j - 1) } else { 0.0 };
                let right = if j < hi { self.step(j) } else { 0.0 };
                0.5 * (left + right)
            }
        }
    }

    /// Weight of sample `j` in the integral over the whole grid.
    pub fn full_weight(&self, j: usize) -> f64 {
        self.subinterval_weight(0, self.intervals(), j)
    }

    /// Samples `(Vg)(t_i)`, the integral of `g` from `t0` to every grid point.
    pub fn cumulative_integral<S: Sample>(&self, samples: &[S]) -> Result<Vec<S>> {
        self.check_len(samples.len())?;
        // compensated running sum, so that nearby integrands (successive
        // iterates) differ by their true difference rather than by rounding noise
        let mut out = Vec::with_capacity(samples.len());
        let mut acc = samples[0].zeros_like();
        let mut carry = acc.clone();
        out.push(acc.clone());
        for j in 0..self.intervals() {
            let h = self.step(j);
            let mut inc = samples[j].zeros_like();
            match self.rule {
                QuadratureRule::LeftEndpoint => inc.add_scaled(&samples[j], h),
                QuadratureRule::Trapezoid => {
                    inc.add_scaled(&samples[j], 0.5 * h);
                    inc.add_scaled(&samples[j + 1], 0.5 * h);
                }
            }
            acc.add_compensated(&mut carry, &inc);
            let mut value = acc.clone();
            value.add_scaled(&carry, 1.0);
            out.push(value);
        }
        Ok(out)
    }

    /// Integral of `g` from the grid point `base` to every grid point, negative
    /// for points before `base`.
    pub fn integral_from<S: Sample>(&self, base: usize, samples: &[S]) -> Result<Vec<S>> {
        if base >= self.len() {
            return Err(Error::OffGrid(format!("base index {base} outside grid")));
        }
        let mut cum = self.cumulative_integral(samples)?;
        let at_base = cum[base].clone();
        for (i, c) in cum.iter_mut().enumerate() {
            if i == base {
                *c = at_base.zeros_like();
            } else {
                c.add_scaled(&at_base, -1.0);
            }
        }
        Ok(cum)
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::LengthMismatch { expected: self.len(), found: len });
        }
        Ok(())
    }
}

/// Values that can be integrated over a grid.
pub trait Sample: Clone {
    fn zeros_like(&self) -> Self;
    /// `self += w * other`
    fn add_scaled(&mut self, other: &Self, w: f64);
    /// `self += inc`, keeping the rounding error in `carry` (Neumaier).
    fn add_compensated(&mut self, carry: &mut Self, inc: &Self);
}

fn neumaier(sum: &mut f64, carry: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *carry += (*sum - t) + x;
    } else {
        *carry += (x - t) + *sum;
    }
    *sum = t;
}

fn neumaier_slices(sum: &mut [f64], carry: &mut [f64], inc: &[f64]) {
    for ((s, c), x) in sum.iter_mut().zip(carry.iter_mut()).zip(inc) {
        neumaier(s, c, *x);
    }
}

impl Sample for f64 {
    fn zeros_like(&self) -> Self {
        0.0
    }

    fn add_scaled(&mut self, other: &Self, w: f64) {
        *self += w * other;
    }

    fn add_compensated(&mut self, carry: &mut Self, inc: &Self) {
        neumaier(self, carry, *inc);
    }
}

impl Sample for DVector<f64> {
    fn zeros_like(&self) -> Self {
        DVector::zeros(self.len())
    }

    fn add_scaled(&mut self, other: &Self, w: f64) {
        self.axpy(w, other, 1.0);
    }

    fn add_compensated(&mut self, carry: &mut Self, inc: &Self) {
        neumaier_slices(self.as_mut_slice(), carry.as_mut_slice(), inc.as_slice());
    }
}

impl Sample for DMatrix<f64> {
    fn zeros_like(&self) -> Self {
        DMatrix::zeros(self.nrows(), self.ncols())
    }

    fn add_scaled(&mut self, other: &Self, w: f64) {
        self.zip_apply(other, |a, b| *a += w * b);
    }

    fn add_compensated(&mut self, carry: &mut Self, inc: &Self) {
        neumaier_slices(self.as_mut_slice(), carry.as_mut_slice(), inc.as_slice());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_points() {
        let g = TimeGrid::make_uniform(0.0, 1.0, 2, QuadratureRule::Trapezoid).unwrap();
        assert_eq!(g.points(), &[0.0, 0.5, 1.0]);
        let g = TimeGrid::make_uniform(0.0, 1.0, 1, QuadratureRule::LeftEndpoint).unwrap();
        assert_eq!(g.points(), &[0.0, 1.0]);
        let g = TimeGrid::make_uniform(-1.0, 1.0, 4, QuadratureRule::Trapezoid).unwrap();
        assert_eq!(g.points(), &[-1.0, -0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn rejects_bad_spans() {
        assert!(TimeGrid::make_uniform(1.0, 1.0, 4, QuadratureRule::Trapezoid).is_err());
        assert!(TimeGrid::make_uniform(1.0, 0.0, 4, QuadratureRule::Trapezoid).is_err());
        assert!(TimeGrid::make_uniform(0.0, 1.0, 0, QuadratureRule::Trapezoid).is_err());
        assert!(TimeGrid::from_points(vec![0.0, 0.5, 0.5], QuadratureRule::Trapezoid).is_err());
        assert!(TimeGrid::from_points(vec![0.0], QuadratureRule::Trapezoid).is_err());
    }

    #[test]
    fn integral_of_one_is_t() {
        for rule in [QuadratureRule::LeftEndpoint, QuadratureRule::Trapezoid] {
            let g = TimeGrid::make_uniform(0.0, 1.0, 8, rule).unwrap();
            let out = g.cumulative_integral(&vec![1.0; g.len()]).unwrap();
            assert_eq!(out[0], 0.0);
            for (o, t) in out.iter().zip(g.points()) {
                assert!((o - t).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn trapezoid_exact_on_ramp() {
        let g = TimeGrid::make_uniform(0.0, 1.0, 10, QuadratureRule::Trapezoid).unwrap();
        let out = g.cumulative_integral(g.points()).unwrap();
        assert!((out[10] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn left_endpoint_ramp_hand_sum() {
        // sum_{j=0}^{9} (j/10)(1/10) = 0.45
        let g = TimeGrid::make_uniform(0.0, 1.0, 10, QuadratureRule::LeftEndpoint).unwrap();
        let out = g.cumulative_integral(g.points()).unwrap();
        assert!((out[10] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        let g = TimeGrid::make_uniform(0.0, 1.0, 4, QuadratureRule::Trapezoid).unwrap();
        assert!(matches!(g.cumulative_integral(&[1.0, 2.0]), Err(Error::LengthMismatch { expected: 5, found: 2 })));
    }

    #[test]
    fn weights_reproduce_cumulative_sums() {
        for rule in [QuadratureRule::LeftEndpoint, QuadratureRule::Trapezoid] {
            let g = TimeGrid::from_points(vec![0.0, 0.1, 0.35, 0.5, 0.9, 1.0], rule).unwrap();
            let f: Vec<f64> = g.points().iter().map(|t| (3.0 * t).sin()).collect();
            let cum = g.cumulative_integral(&f).unwrap();
            for (i, c) in cum.iter().enumerate() {
                let direct: f64 = (0..g.len()).map(|j| g.cumulative_weight(i, j) * f[j]).sum();
                assert!((direct - c).abs() < 1e-14);
                let sub: f64 = (0..g.len()).map(|j| g.subinterval_weight(0, i, j) * f[j]).sum();
                assert!((sub - c).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn integral_from_interior_base() {
        let g = TimeGrid::make_uniform(0.0, 2.0, 20, QuadratureRule::Trapezoid).unwrap();
        let out = g.integral_from(10, &vec![1.0; g.len()]).unwrap();
        assert_eq!(out[10], 0.0);
        assert!((out[0] + 1.0).abs() < 1e-14);
        assert!((out[20] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn long_sums_stay_at_ulp_level() {
        let n = 1_000_000;
        let g = TimeGrid::make_uniform(0.0, 1.0, n, QuadratureRule::Trapezoid).unwrap();
        let out = g.cumulative_integral(&vec![1.0; g.len()]).unwrap();
        assert!((out[n] - 1.0).abs() <= 2.0 * f64::EPSILON, "{}", out[n] - 1.0);
        let v = g.cumulative_integral(&vec![DVector::from_element(2, 3.0); g.len()]).unwrap();
        assert!((v[n][1] - 3.0).abs() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn index_lookup() {
        let g = TimeGrid::make_uniform(0.0, 1.0, 10, QuadratureRule::Trapezoid).unwrap();
        assert_eq!(g.index_of(0.3), Some(3));
        assert_eq!(g.index_of(0.0), Some(0));
        assert_eq!(g.index_of(1.0), Some(10));
        assert_eq!(g.index_of(0.35), None);
        assert_eq!(g.index_of(-0.1), None);
    }

    fn rule_strategy() -> impl Strategy<Value = QuadratureRule> {
        prop_oneof![Just(QuadratureRule::LeftEndpoint), Just(QuadratureRule::Trapezoid)]
    }

    proptest! {
        #[test]
        fn linearity(
            rule in rule_strategy(),
            f in prop::collection::vec(-10.0f64..10.0, 9),
            g in prop::collection::vec(-10.0f64..10.0, 9),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let grid = TimeGrid::make_uniform(0.0, 2.0, 8, rule).unwrap();
            let mix: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
            let lhs = grid.cumulative_integral(&mix).unwrap();
            let vf = grid.cumulative_integral(&f).unwrap();
            let vg = grid.cumulative_integral(&g).unwrap();
            for i in 0..grid.len() {
                prop_assert!((lhs[i] - (a * vf[i] + b * vg[i])).abs() < 1e-12);
            }
        }

        #[test]
        fn monotone_for_nonnegative(
            rule in rule_strategy(),
            f in prop::collection::vec(0.0f64..10.0, 12),
        ) {
            let grid = TimeGrid::make_uniform(-1.0, 3.0, 11, rule).unwrap();
            let out = grid.cumulative_integral(&f).unwrap();
            for w in out.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
        }

        #[test]
        fn trapezoid_exact_on_affine(a in -5.0f64..5.0, b in -5.0f64..5.0, n in 1usize..40) {
            let grid = TimeGrid::make_uniform(-1.0, 2.0, n, QuadratureRule::Trapezoid).unwrap();
            let f: Vec<f64> = grid.points().iter().map(|t| a * t + b).collect();
            let out = grid.cumulative_integral(&f).unwrap();
            for (o, t) in out.iter().zip(grid.points()) {
                let exact = a * (t * t - 1.0) / 2.0 + b * (t + 1.0);
                prop_assert!((o - exact).abs() < 1e-12);
            }
        }
    }
}
