use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use koopman_steady::deepdmd::multi_step_predict;
use koopman_steady::ssprog::VerificationReport;
use koopman_steady_cli::{cmd_fit, cmd_pipeline, cmd_simulate, FittedModel, PipelineConfig, MODEL_FILE};

const LINEAR: &str = include_str!("../../../configs/linear.toml");

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_koopman-steady"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn tiny() -> String {
    LINEAR
        .replace("n_traj = 20", "n_traj = 1")
        .replace("n_steps = 50", "n_steps = 2")
        .replace("horizon = 50", "horizon = 2")
        .replace(
            "[[program]]\ntarget_index = 3\ninput_box = { lo = 0.0, hi = 1.0 }\nconstraint_form = \"no_mixed\"",
            "",
        )
}

#[test]
fn simulate_writes_one_csv_per_trajectory_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &tiny());
    let out = dir.path().join("a");
    let o = run(&["simulate", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("dataset/traj_0000.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
    assert!(out.join("dataset/manifest.json").is_file());

    let again = dir.path().join("b");
    assert!(
        run(&["simulate", "--config", &config, "--out", again.to_str().unwrap()])
            .status
            .success()
    );
    assert_eq!(csv, fs::read_to_string(again.join("dataset/traj_0000.csv")).unwrap());

    let reseeded = dir.path().join("c");
    let o = run(&[
        "simulate",
        "--config",
        &config,
        "--out",
        reseeded.to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert!(o.status.success());
    assert_ne!(csv, fs::read_to_string(reseeded.join("dataset/traj_0000.csv")).unwrap());
}

#[test]
fn fit_without_a_dataset_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), LINEAR);
    let o = run(&[
        "fit",
        "--config",
        &config,
        "--out",
        dir.path().join("empty").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no dataset"));
}

#[test]
fn missing_config_file_exits_2() {
    let o = run(&["pipeline", "--config", "/nonexistent/config.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_constraint_form_is_rejected_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &LINEAR.replace("\"no_mixed\"", "\"mixed_everything\""));
    let out = dir.path().join("out");
    let o = run(&["pipeline", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn missed_error_ceiling_exits_1_after_writing_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &LINEAR.replace("max_median_error = 1e-6", "max_median_error = 0.0"),
    );
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    assert!(run(&["simulate", "--config", &config, "--out", out]).status.success());
    let o = run(&["fit", "--config", &config, "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(Path::new(out).join("fit_report.json").is_file());
}

#[test]
fn linear_dmdc_pipeline_recovers_the_model_and_lands_on_the_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::parse(LINEAR).unwrap();
    let summary = cmd_pipeline(&cfg, dir.path()).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fit_report.json")).unwrap()).unwrap();
    assert!(report["fit_residual"].as_f64().unwrap() < 1e-8);
    assert!(summary.fit.median_error < 1e-8);

    let p = &summary.programs[0];
    let on_boundary = p.u_star.iter().any(|&u| u == 0.0 || u == 1.0);
    assert!(on_boundary, "{:?}", p.u_star);
    assert!(p.equilibrium_residual < 1e-8);
    assert!(summary.passed);

    let plot = fs::read_to_string(dir.path().join("plot_x3_no_mixed.csv")).unwrap();
    assert_eq!(plot.lines().next(), Some("t,series_id,value"));
    assert!(plot.contains(",optimal,") && plot.contains(",random_19,"));
}

#[test]
fn pipeline_summary_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), LINEAR);
    let read = |name: &str| {
        let out = dir.path().join(name);
        let o = run(&["pipeline", "--config", &config, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out.join("summary.json")).unwrap()
    };
    assert_eq!(read("first"), read("second"));
}

#[test]
fn without_random_inputs_only_the_optimal_course_is_plotted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::parse(&LINEAR.replace("n_random = 20", "n_random = 0")).unwrap();
    cmd_pipeline(&cfg, dir.path()).unwrap();
    let report: VerificationReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify_x3_no_mixed.json")).unwrap()).unwrap();
    assert!(report.random_inputs.is_empty());
    assert_eq!(report.beats_fraction, 1.0);
    let plot = fs::read_to_string(dir.path().join("plot_x3_no_mixed.csv")).unwrap();
    assert!(plot.lines().skip(1).all(|l| l.split(',').nth(1) == Some("optimal")));
}

#[test]
fn saved_models_reload_to_identical_predictions() {
    let deep = LINEAR
        .replace("estimator = \"dmdc\"", "estimator = \"deepdmd\"")
        .replace("max_median_error = 1e-6", "")
        .replace("\"no_mixed\"", "\"separated_in_x\"")
        .replace(
            "rank_tol = 1e-10     # relative singular-value cutoff of the pseudoinverse",
            "[fit.train]\nhidden = [8]\nextra_state = 3\nextra_input = 2\nmixed_terms = \"learned\"\nmixed_observables = 3\nepochs = 5",
        );
    for text in [LINEAR.to_string(), deep] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::parse(&text).unwrap();
        cmd_simulate(&cfg, dir.path()).unwrap();
        cmd_fit(&cfg, dir.path()).unwrap();
        let path = dir.path().join(MODEL_FILE);
        let model = FittedModel::load(&path).unwrap();
        model.save(&dir.path().join("copy.json")).unwrap();
        assert_eq!(
            fs::read(&path).unwrap(),
            fs::read(dir.path().join("copy.json")).unwrap()
        );
        let reloaded = FittedModel::load(&dir.path().join("copy.json"))
            .unwrap()
            .koopman()
            .unwrap();
        let original = model.koopman().unwrap();
        let u = vec![vec![0.3, 0.7]; 20];
        let x0 = [0.5, 1.0, 1.5, 2.0];
        assert_eq!(
            multi_step_predict(&original, &x0, &u, 20).unwrap(),
            multi_step_predict(&reloaded, &x0, &u, 20).unwrap()
        );
    }
}
