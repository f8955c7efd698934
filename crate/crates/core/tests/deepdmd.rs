use koopman_steady::deepdmd::{
    activation_pattern, gradients, loss, multi_step_predict, train, KoopmanModel, MixedTerms, Regularization,
    TrainConfig,
};
use koopman_steady::systems::{
    assemble_snapshots, generate_dataset, DatasetSpec, InputKind, SnapshotSet, SystemSpec, UniformBox,
};

fn iffl_snapshots(n_traj: usize, n_steps: usize, seed: u64) -> SnapshotSet {
    let spec = DatasetSpec {
        n_traj,
        n_steps,
        dt: 0.1,
        ic_box: UniformBox::uniform(5, 0.0, 2.0),
        input_box: UniformBox::uniform(2, 0.0, 10.0),
        input_kind: InputKind::Step,
        ramp_tau: None,
        seed,
    };
    assemble_snapshots(&generate_dataset(&SystemSpec::Iffl(Default::default()), &spec).unwrap()).unwrap()
}

fn config(mixed_terms: MixedTerms) -> TrainConfig {
    TrainConfig {
        hidden: vec![16, 16, 16],
        extra_state: 4,
        extra_input: 2,
        mixed_terms,
        mixed_observables: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn gradients_match_central_differences_coordinatewise() {
    // More columns than lifted features, so the residual stays away from zero.
    let snap = iffl_snapshots(8, 10, 21);
    let reg = Regularization {
        lambda_spectral: 0.05,
        lambda_sparsity: 1e-3,
    };
    for mixed in [MixedTerms::None, MixedTerms::Dictionary, MixedTerms::Learned] {
        let model = config(mixed).init_model(&snap).unwrap();
        let theta = model.params();
        let (_, g) = gradients(&model, &snap, &reg).unwrap();
        let pattern = activation_pattern(&model, &snap);
        let h = 1e-6;
        let mut checked = 0;
        // Every seventh coordinate keeps the test quick but touches every block.
        for i in (0..theta.len()).step_by(7) {
            let at = |s: f64| {
                let mut p = theta.clone();
                p[i] += s * h;
                let mut m: KoopmanModel = model.clone();
                m.set_params(&p).unwrap();
                m
            };
            let (plus, minus) = (at(1.0), at(-1.0));
            if activation_pattern(&plus, &snap) != pattern || activation_pattern(&minus, &snap) != pattern {
                continue;
            }
            if i >= model.n_operator_params() && theta[i].abs() < 2.0 * h {
                continue;
            }
            let fd = (loss(&plus, &snap, &reg).unwrap().total - loss(&minus, &snap, &reg).unwrap().total) / (2.0 * h);
            let scale = fd.abs().max(g[i].abs()).max(1e-3);
            assert!(
                (fd - g[i]).abs() / scale < 1e-4,
                "{mixed:?} coordinate {i}: {fd} vs {}",
                g[i]
            );
            checked += 1;
        }
        assert!(checked > 50, "{mixed:?}: only {checked} coordinates checked");
    }
}

#[test]
fn training_keeps_raw_coordinates_and_never_ends_worse_than_it_started() {
    let train_snaps = iffl_snapshots(6, 20, 22);
    let val = iffl_snapshots(2, 20, 23);
    let cfg = TrainConfig {
        hidden: vec![16],
        extra_state: 3,
        extra_input: 1,
        epochs: 30,
        batch_size: 32,
        mixed_terms: MixedTerms::Learned,
        ..TrainConfig::default()
    };
    let model = train(&cfg, &train_snaps, &val).unwrap();
    let curve = &model.metadata.loss_curve;
    assert_eq!(curve.len(), 31);
    assert!(curve[model.metadata.best_epoch].val_loss <= curve[0].val_loss);
    for j in 0..val.n_cols() {
        let x = val.x_p().column(j);
        assert_eq!(&model.lift_state(&x)[..5], x.as_slice());
    }
}

#[test]
fn saved_models_predict_bitwise_identically() {
    let snap = iffl_snapshots(4, 10, 24);
    for mixed in [MixedTerms::None, MixedTerms::Dictionary, MixedTerms::Learned] {
        let cfg = TrainConfig {
            hidden: vec![8],
            extra_state: 2,
            extra_input: 1,
            epochs: 3,
            mixed_terms: mixed,
            ..TrainConfig::default()
        };
        let model = train(&cfg, &snap, &SnapshotSet::empty(5, 2)).unwrap();
        let reloaded: KoopmanModel = serde_json::from_str(&serde_json::to_string(&model).unwrap()).unwrap();
        let u = vec![vec![3.0, 4.0]; 30];
        let x0 = [0.5, 0.4, 0.3, 0.2, 0.1];
        assert_eq!(
            multi_step_predict(&model, &x0, &u, 30).unwrap(),
            multi_step_predict(&reloaded, &x0, &u, 30).unwrap()
        );
    }
}
