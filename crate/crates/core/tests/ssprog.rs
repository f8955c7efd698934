use proptest::prelude::*;

use koopman_steady::deepdmd::{KoopmanModel, Lifting, MixedLifting};
use koopman_steady::dmdc::LinearModel;
use koopman_steady::numerics::Matrix;
use koopman_steady::observables::MonomialDictionary;
use koopman_steady::ssprog::{solve, steady_state_map, ConstraintForm, OptimizerConfig, SteadyStateProblem};
use koopman_steady::systems::UniformBox;

/// `x⁺ = a·x + c·x·u + b·u` lifted exactly by `[x, x²]`, `[u, u²]` and
/// their products.
fn bilinear_squared(a: f64, b: f64, c: f64) -> KoopmanModel {
    let quad = || Lifting::Monomial {
        dictionary: MonomialDictionary::new(1, 2).unwrap(),
    };
    KoopmanModel::new(
        quad(),
        quad(),
        Some(MixedLifting::Dictionary),
        Matrix::from_diag(&[a, a * a]),
        Some(
            Matrix::from_rows(&[
                vec![c, 0.0, 0.0, 0.0],
                vec![2.0 * a * b, 2.0 * b * c, 2.0 * a * c, c * c],
            ])
            .unwrap(),
        ),
        Matrix::from_diag(&[b, b * b]),
    )
    .unwrap()
}

fn linear_model() -> impl Strategy<Value = (KoopmanModel, UniformBox, usize)> {
    (1usize..=4, 1usize..=3).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(-1.0..1.0f64, n * n),
            prop::collection::vec(prop_oneof![-2.0..-0.1f64, 0.1..2.0f64], n * m),
            prop::collection::vec(-1.0..0.0f64, m),
            prop::collection::vec(0.5..2.0f64, m),
            0..n,
        )
            .prop_map(move |(a, b, lo, width, target)| {
                let a = Matrix::new(n, n, a).unwrap();
                let a = a.scale(0.9 / a.frobenius_norm().max(1e-3));
                let lin = LinearModel {
                    a,
                    b: Matrix::new(n, m, b).unwrap(),
                    fit_residual: 0.0,
                    rank: n + m,
                    rank_deficient: false,
                };
                let hi = lo.iter().zip(&width).map(|(l, w)| l + w).collect();
                (
                    KoopmanModel::from_linear(&lin).unwrap(),
                    UniformBox::new(lo, hi).unwrap(),
                    target,
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn linear_models_are_optimized_on_the_boundary((model, input_box, target) in linear_model(), seed in any::<u64>()) {
        let problem = SteadyStateProblem { target_index: target, input_box, constraint_form: ConstraintForm::NoMixed };
        let sol = solve(&model, &problem, &OptimizerConfig { seed, ..OptimizerConfig::default() }).unwrap();
        prop_assert!(problem.input_box.distance_to_boundary(&sol.u_star) < 1e-9);
    }

    #[test]
    fn best_start_is_no_worse_than_any_starting_point((model, input_box, target) in linear_model()) {
        let problem = SteadyStateProblem { target_index: target, input_box, constraint_form: ConstraintForm::NoMixed };
        let sol = solve(&model, &problem, &OptimizerConfig::default()).unwrap();
        for s in &sol.starts {
            prop_assert!(sol.predicted_value >= s.initial_value.unwrap());
        }
    }

    #[test]
    fn separated_forms_agree_on_exact_factorizations(
        a in -0.5..0.5f64,
        b in -1.0..1.0f64,
        c in -0.3..0.3f64,
        u in -1.0..1.0f64,
    ) {
        let model = bilinear_squared(a, b, c);
        prop_assert!(steady_state_map(&model, &[u], ConstraintForm::NoMixed).is_err());
        let in_u = steady_state_map(&model, &[u], ConstraintForm::SeparatedInU).unwrap();
        let in_x = steady_state_map(&model, &[u], ConstraintForm::SeparatedInX).unwrap();
        let x = b * u / (1.0 - a - c * u);
        for (p, q) in in_u.iter().zip(&in_x) {
            prop_assert!((p - q).abs() < 1e-8);
        }
        prop_assert!((in_u[0] - x).abs() < 1e-8 && (in_u[1] - x * x).abs() < 1e-8);
    }
}

#[test]
fn solved_equilibria_are_fixed_points_of_the_one_step_map() {
    let model = bilinear_squared(0.3, 0.8, -0.2);
    let input_box = UniformBox::uniform(1, -1.0, 1.0);
    for form in [ConstraintForm::SeparatedInU, ConstraintForm::SeparatedInX] {
        let problem = SteadyStateProblem {
            target_index: 0,
            input_box: input_box.clone(),
            constraint_form: form,
        };
        let sol = solve(&model, &problem, &OptimizerConfig::default()).unwrap();
        let z = &sol.predicted_lifted_equilibrium;
        let next = model.step_lifted(z, &sol.u_star);
        for (p, q) in next.iter().zip(z) {
            assert!((p - q).abs() < 1e-8);
        }
        assert!(sol.equilibrium_residual < 1e-8);
    }
}
