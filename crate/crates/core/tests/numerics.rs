use proptest::prelude::*;

use koopman_steady::numerics::{integrate, pseudoinverse, solve_linear, FnField, Matrix};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0..2.0f64, rows * cols).prop_map(move |v| Matrix::new(rows, cols, v).unwrap())
}

/// Final-time error of RK4 on `ẋ = −x` over `[0, 1]` with `steps` steps.
fn decay_error(steps: usize) -> f64 {
    let f = FnField::new(1, 0, |x: &[f64], _: &[f64], dx: &mut [f64]| dx[0] = -x[0]);
    let t = integrate(&f, &[1.0], |_| Vec::new(), 1.0 / steps as f64, steps).unwrap();
    (t.final_state()[0] - (-1.0f64).exp()).abs()
}

#[test]
fn rk4_is_fourth_order_on_exponential_decay() {
    for steps in [10, 20, 40, 80] {
        let order = (decay_error(steps) / decay_error(2 * steps)).log2();
        assert!((3.7..=4.3).contains(&order), "order {order} at {steps} steps");
    }
}

#[test]
fn rk4_is_fourth_order_on_a_rotation() {
    // ẋ = (−y, x) from (1, 0) stays on the unit circle at angle t.
    let f = FnField::new(2, 0, |x: &[f64], _: &[f64], dx: &mut [f64]| {
        dx[0] = -x[1];
        dx[1] = x[0];
    });
    let err = |steps: usize| {
        let t = integrate(&f, &[1.0, 0.0], |_| Vec::new(), 2.0 / steps as f64, steps).unwrap();
        let x = t.final_state();
        (x[0] - 2.0f64.cos()).hypot(x[1] - 2.0f64.sin())
    };
    let order = (err(20) / err(40)).log2();
    assert!((3.7..=4.3).contains(&order), "order {order}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn double_pseudoinverse_reconstructs_full_rank_matrices(m in matrix(5, 3)) {
        // Keep away from numerically rank-deficient draws.
        let gram = m.t_matmul(&m);
        let det = koopman_steady::numerics::Lu::new(&gram).unwrap();
        prop_assume!(det.condition_1() < 1e6);
        let back = pseudoinverse(&pseudoinverse(&m, 1e-10).unwrap(), 1e-10).unwrap();
        prop_assert!(back.sub(&m).max_abs() < 1e-8);
    }

    #[test]
    fn linear_solves_leave_small_residuals(a in matrix(4, 4), b in matrix(4, 2)) {
        let shifted = a.add(&Matrix::identity(4).scale(9.0));
        let sol = solve_linear(&shifted, &b).unwrap();
        prop_assume!(sol.condition < 1e8);
        let residual = shifted.matmul(&sol.solution).sub(&b).frobenius_norm();
        prop_assert!(residual <= 1e-9 * b.frobenius_norm().max(f64::MIN_POSITIVE));
    }
}
