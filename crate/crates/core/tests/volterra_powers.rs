//! Powers of the discrete Volterra operator against independent constructions.

use proptest::prelude::*;
use volterra_core::kernel::cauchy_repeated_integral;
use volterra_core::*;

fn grid(n: usize, rule: QuadratureRule) -> TimeGrid {
    TimeGrid::make_uniform(0.0, 1.0, n, rule).unwrap()
}

/// `(V^k u)(t_i)` by applying the cumulative integral `k` times.
fn nested(g: &TimeGrid, u: &[f64], k: usize) -> Vec<f64> {
    let mut cur = u.to_vec();
    for _ in 0..k {
        cur = g.cumulative_integral(&cur).unwrap();
    }
    cur
}

#[test]
fn left_endpoint_power_equals_nested_sums() {
    let g = grid(40, QuadratureRule::LeftEndpoint);
    let u: Vec<f64> = g.points().iter().map(|t| (3.0 * t).cos() + t).collect();
    let v = KernelOperator::volterra(&g);
    for k in 1..=4 {
        let via_power = v.power(k).unwrap().apply_scalar(&u).unwrap();
        let via_nesting = nested(&g, &u, k);
        for (a, b) in via_power.iter().zip(&via_nesting) {
            assert!((a - b).abs() < 1e-13, "k={k}");
        }
    }
}

#[test]
fn left_endpoint_nilpotent_on_101_points() {
    let g = TimeGrid::make_uniform(0.0, 1.0, 100, QuadratureRule::LeftEndpoint).unwrap();
    assert_eq!(g.len(), 101);
    let v = KernelOperator::volterra(&g);
    assert!(!v.power(100).unwrap().is_zero());
    assert!(v.power(101).unwrap().is_zero());
}

#[test]
fn trapezoid_powers_match_cauchy_kernel() {
    // for k <= 3 the composed kernel integrates polynomials of degree <= 1 in tau
    for k in 1..=3 {
        let g = grid(30, QuadratureRule::Trapezoid);
        let power = KernelOperator::volterra(&g).power(k).unwrap();
        let exact = KernelOperator::volterra_power_closed_form(&g, k).unwrap();
        for i in 0..g.len() {
            for j in 0..=i {
                assert!((power.at(i, j) - exact.at(i, j)).abs() < 1e-13, "k={k} ({i},{j})");
            }
        }
    }
}

#[test]
fn trapezoid_powers_converge_at_second_order() {
    for k in 4..=5 {
        let errs: Vec<f64> = [20, 40, 80]
            .iter()
            .map(|&n| {
                let g = grid(n, QuadratureRule::Trapezoid);
                let diff = KernelOperator::volterra(&g)
                    .power(k)
                    .unwrap()
                    .add(&KernelOperator::volterra_power_closed_form(&g, k).unwrap().scale(-1.0))
                    .unwrap();
                diff.sup_norm()
            })
            .collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.9, "k={k}: {errs:?}");
        }
    }
}

#[test]
fn cauchy_formula_matches_nested_integrals_on_smooth_input() {
    let g = grid(2000, QuadratureRule::Trapezoid);
    let u: Vec<f64> = g.points().iter().map(|t| t.exp()).collect();
    for k in 1..=4 {
        let single = cauchy_repeated_integral(&g, &u, k).unwrap();
        let nest = nested(&g, &u, k);
        let worst = single.iter().zip(&nest).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "k={k}: {worst}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kernel_apply_is_linear(
        a in -3.0f64..3.0,
        u in prop::collection::vec(-1.0f64..1.0, 21),
        w in prop::collection::vec(-1.0f64..1.0, 21),
    ) {
        let g = grid(20, QuadratureRule::Trapezoid);
        let v = KernelOperator::volterra(&g).power(2).unwrap();
        let combo: Vec<f64> = u.iter().zip(&w).map(|(x, y)| a * x + y).collect();
        let lhs = v.apply_scalar(&combo).unwrap();
        let vu = v.apply_scalar(&u).unwrap();
        let vw = v.apply_scalar(&w).unwrap();
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (a * vu[i] + vw[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_output_ignores_future_input(
        u in prop::collection::vec(-1.0f64..1.0, 21),
        cut in 1usize..20,
        bump in -5.0f64..5.0,
    ) {
        let g = grid(20, QuadratureRule::Trapezoid);
        let v = KernelOperator::volterra(&g).power(3).unwrap();
        let mut changed = u.clone();
        for x in changed.iter_mut().skip(cut + 1) {
            *x += bump;
        }
        let a = v.apply_scalar(&u).unwrap();
        let b = v.apply_scalar(&changed).unwrap();
        for i in 0..=cut {
            prop_assert_eq!(a[i], b[i]);
        }
    }
}
