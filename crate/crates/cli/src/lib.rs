//! Configuration-driven runner for the simulate → fit → program → verify
//! pipeline. Every stage reads and writes plain files under one output
//! directory, so stages can be rerun individually.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use koopman_steady::deepdmd::{self, median, trajectory_error, KoopmanModel};
use koopman_steady::dmdc::{fit_dmdc, LinearModel};
use koopman_steady::numerics::Trajectory;
use koopman_steady::numerics::VectorField;
use koopman_steady::ssprog::{self, comparison_trajectories, SteadyStateSolution, VerificationReport};
use koopman_steady::systems::io::{read_dataset, write_dataset, MANIFEST_FILE};
use koopman_steady::systems::{assemble_snapshots, generate_dataset, train_test_split, SnapshotSet, Split};

pub use config::{Estimator, PipelineConfig, Seeds};

pub const DATASET_DIR: &str = "dataset";
pub const MODEL_FILE: &str = "model.json";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const FIT_REPORT_FILE: &str = "fit_report.json";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] koopman_steady::Error),

    /// The run finished but missed a configured threshold.
    #[error("threshold not met: {0}")]
    Threshold(String),
}

impl CliError {
    /// 2 for configuration and file problems, 1 for failed thresholds and
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        use koopman_steady::Error as E;
        match self {
            Self::Config(_) | Self::Io { .. } => 2,
            Self::Core(E::Config(_) | E::FormUnavailable { .. } | E::Io(_) | E::Json(_) | E::Csv(_)) => 2,
            Self::Core(_) | Self::Threshold(_) => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        context: format!("cannot read {}", path.display()),
        source,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| CliError::Io {
            context: format!("cannot create {}", parent.display()),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| CliError::Io {
        context: format!("cannot write {}", path.display()),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(koopman_steady::Error::from)? + "\n";
    write_file(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_file(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// A fitted model as stored in `model.json`.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Dmdc(LinearModel),
    Deep(KoopmanModel),
}

impl FittedModel {
    /// The lifted form used for prediction and programming; a linear model
    /// becomes the identity lifting.
    pub fn koopman(&self) -> Result<KoopmanModel> {
        match self {
            Self::Dmdc(m) => Ok(KoopmanModel::from_linear(m)?),
            Self::Deep(m) => Ok(m.clone()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            Self::Dmdc(m) => write_json(path, m),
            Self::Deep(m) => write_json(path, m),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let value: serde_json::Value = read_json(path)?;
        let bad = |e: serde_json::Error| CliError::Config(format!("{}: {e}", path.display()));
        match value.get("kind").and_then(|k| k.as_str()) {
            Some("dmdc") => Ok(Self::Dmdc(serde_json::from_value(value).map_err(bad)?)),
            Some("deepdmd") => Ok(Self::Deep(serde_json::from_value(value).map_err(bad)?)),
            other => Err(CliError::Config(format!(
                "{}: unknown model kind {other:?}",
                path.display()
            ))),
        }
    }
}

/// Multi-step error on one held-out trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryError {
    pub trajectory: usize,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub estimator: Estimator,
    pub train_trajectories: Vec<usize>,
    pub validation_trajectories: Vec<usize>,
    pub test_trajectories: Vec<usize>,
    pub horizon: usize,
    /// Relative Frobenius error of each held-out multi-step prediction.
    pub test_errors: Vec<TrajectoryError>,
    pub median_error: f64,
    pub max_error: f64,
    pub max_median_error: Option<f64>,
    pub passed: bool,
    /// One-step residual on the fitting data (linear fits only).
    pub fit_residual: Option<f64>,
    pub best_epoch: Option<usize>,
    pub spectral_radius: f64,
    pub unit_eigenvalue_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramSummary {
    pub target_index: usize,
    pub constraint_form: String,
    pub u_star: Vec<f64>,
    pub predicted_value: f64,
    pub achieved_value: f64,
    pub oracle_u: Option<Vec<f64>>,
    pub oracle_value: Option<f64>,
    pub oracle_gap: Option<f64>,
    pub beats_fraction: f64,
    pub equilibrium_residual: f64,
    pub flat_landscape: bool,
    pub passed: bool,
}

/// Every number the pipeline is judged on. Free of timings and absolute
/// paths so that reruns compare byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub system: String,
    pub estimator: Estimator,
    pub n_trajectories: usize,
    pub fit: FitSummary,
    pub programs: Vec<ProgramSummary>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub median_error: f64,
    pub max_error: f64,
    pub spectral_radius: f64,
    pub passed: bool,
}

/// Simulates the configured dataset into `out/dataset`.
pub fn cmd_simulate(cfg: &PipelineConfig, out: &Path) -> Result<PathBuf> {
    let system = cfg.system_spec()?;
    let spec = cfg.dataset_spec()?;
    let trajs = generate_dataset(&system, &spec)?;
    let dir = out.join(DATASET_DIR);
    write_dataset(&dir, &system, &spec, &trajs).map_err(|e| match e {
        koopman_steady::Error::Io(source) => CliError::Io {
            context: format!("cannot write dataset to {}", dir.display()),
            source,
        },
        e => e.into(),
    })?;
    println!("wrote {} trajectories to {}", trajs.len(), dir.display());
    Ok(dir)
}

fn load_dataset(cfg: &PipelineConfig, out: &Path) -> Result<Vec<Trajectory>> {
    let dir = out.join(DATASET_DIR);
    if !dir.join(MANIFEST_FILE).is_file() {
        return Err(CliError::Config(format!(
            "no dataset at {}; run `simulate` first",
            dir.display()
        )));
    }
    let (manifest, trajs) = read_dataset(&dir)?;
    if manifest.system != cfg.system_spec()? || manifest.spec != cfg.dataset_spec()? {
        return Err(CliError::Config(format!(
            "dataset at {} was generated from a different configuration",
            dir.display()
        )));
    }
    Ok(trajs)
}

struct Partition {
    fit: Vec<usize>,
    validation: Vec<usize>,
    test: Vec<usize>,
}

fn partition(cfg: &PipelineConfig, n: usize) -> Result<Partition> {
    let seeds = cfg.seeds();
    let Split { train, test } = train_test_split(n, cfg.dataset.train_fraction, seeds.split)?;
    if cfg.dataset.validation_fraction == 0.0 {
        return Ok(Partition {
            fit: train,
            validation: Vec::new(),
            test,
        });
    }
    let inner = train_test_split(train.len(), 1.0 - cfg.dataset.validation_fraction, seeds.validation)?;
    Ok(Partition {
        fit: Split::pick(&inner.train, &train),
        validation: Split::pick(&inner.test, &train),
        test,
    })
}

fn snapshots(trajs: &[Trajectory], idx: &[usize], state_dim: usize, input_dim: usize) -> Result<SnapshotSet> {
    if idx.is_empty() {
        return Ok(SnapshotSet::empty(state_dim, input_dim));
    }
    Ok(assemble_snapshots(&Split::pick(idx, trajs))?)
}

/// Fits the configured estimator and scores it on the held-out
/// trajectories. Writes the model, loss curve and report before checking
/// the error ceiling.
pub fn cmd_fit(cfg: &PipelineConfig, out: &Path) -> Result<FitReport> {
    let system = cfg.system_spec()?;
    let trajs = load_dataset(cfg, out)?;
    let parts = partition(cfg, trajs.len())?;
    let (n, m) = (system.state_dim(), system.input_dim());
    let fit_snaps = snapshots(&trajs, &parts.fit, n, m)?;
    let val_snaps = snapshots(&trajs, &parts.validation, n, m)?;

    let (fitted, fit_residual, curve) = match cfg.fit.estimator {
        Estimator::Dmdc => {
            let lin = fit_dmdc(&fit_snaps, cfg.fit.rank_tol)?;
            let r = lin.fit_residual;
            (FittedModel::Dmdc(lin), Some(r), None)
        }
        Estimator::Deepdmd => {
            let model = deepdmd::train(&cfg.train_config(), &fit_snaps, &val_snaps)?;
            let curve = model.metadata.loss_curve.clone();
            (FittedModel::Deep(model), None, Some(curve))
        }
    };
    fitted.save(&out.join(MODEL_FILE))?;
    if let Some(curve) = &curve {
        deepdmd::write_loss_curve(&out.join(LOSS_CURVE_FILE), curve)?;
    }

    let model = fitted.koopman()?;
    let horizon = cfg.fit.horizon;
    let test_errors = parts
        .test
        .iter()
        .map(|&i| {
            Ok(TrajectoryError {
                trajectory: i,
                error: trajectory_error(&model, &trajs[i], horizon)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let errors: Vec<f64> = test_errors.iter().map(|e| e.error).collect();
    let median_error = median(&errors).unwrap_or(f64::NAN);
    let max_error = errors.iter().copied().fold(f64::NAN, f64::max);
    let passed = cfg.fit.max_median_error.map_or(true, |ceiling| median_error <= ceiling);
    let spectral_radius = model
        .metadata
        .kx_eigenvalues
        .iter()
        .map(|&(re, im)| re.hypot(im))
        .fold(0.0, f64::max);

    let report = FitReport {
        estimator: cfg.fit.estimator,
        train_trajectories: parts.fit,
        validation_trajectories: parts.validation,
        test_trajectories: parts.test,
        horizon,
        test_errors,
        median_error,
        max_error,
        max_median_error: cfg.fit.max_median_error,
        passed,
        fit_residual,
        best_epoch: curve.as_ref().map(|_| model.metadata.best_epoch),
        spectral_radius,
        unit_eigenvalue_distance: model.metadata.unit_eigenvalue_distance,
    };
    write_json(&out.join(FIT_REPORT_FILE), &report)?;
    println!(
        "held-out median {horizon}-step error {median_error:.4} (max {max_error:.4}) over {} trajectories",
        errors.len()
    );
    if let Some(r) = fit_residual {
        println!("one-step fit residual {r:.3e}");
    }
    Ok(report)
}

pub fn solution_path(out: &Path, stem: &str) -> PathBuf {
    out.join(format!("solution_{stem}.json"))
}

pub fn verify_path(out: &Path, stem: &str) -> PathBuf {
    out.join(format!("verify_{stem}.json"))
}

pub fn plot_path(out: &Path, stem: &str) -> PathBuf {
    out.join(format!("plot_{stem}.csv"))
}

fn load_model(out: &Path) -> Result<KoopmanModel> {
    let path = out.join(MODEL_FILE);
    if !path.is_file() {
        return Err(CliError::Config(format!(
            "no model at {}; run `fit` first",
            path.display()
        )));
    }
    FittedModel::load(&path)?.koopman()
}

/// Solves every configured program against the fitted model.
pub fn cmd_program(cfg: &PipelineConfig, out: &Path) -> Result<Vec<SteadyStateSolution>> {
    let system = cfg.system_spec()?;
    let model = load_model(out)?;
    let mut solutions = Vec::with_capacity(cfg.program.len());
    for p in &cfg.program {
        let problem = cfg.problem(p, &system)?;
        let solution = ssprog::solve(&model, &problem, &cfg.optimizer_config(p))?;
        write_json(&solution_path(out, &p.stem()), &solution)?;
        println!(
            "x{}: u* = {:?}, predicted {:.6}{}",
            p.target_index,
            solution.u_star,
            solution.predicted_value,
            if solution.flat_landscape {
                " (flat landscape)"
            } else {
                ""
            }
        );
        solutions.push(solution);
    }
    Ok(solutions)
}

/// Checks every solution on the true system, writes the reports and the
/// comparison time courses, and records the achieved value back into the
/// solution file.
pub fn cmd_verify(cfg: &PipelineConfig, out: &Path) -> Result<Vec<VerificationReport>> {
    let system = cfg.system_spec()?;
    let mut reports = Vec::with_capacity(cfg.program.len());
    for (k, p) in cfg.program.iter().enumerate() {
        let path = solution_path(out, &p.stem());
        if !path.is_file() {
            return Err(CliError::Config(format!(
                "no solution at {}; run `program` first",
                path.display()
            )));
        }
        let mut solution: SteadyStateSolution = read_json(&path)?;
        let problem = cfg.problem(p, &system)?;
        let vcfg = cfg.verify_config(k, &system)?;
        let report = ssprog::verify(&system, &solution, &problem.input_box, &vcfg)?;
        solution.achieved_value = Some(report.achieved_value);
        write_json(&path, &solution)?;
        write_json(&verify_path(out, &p.stem()), &report)?;

        let mut inputs = vec![report.u_star.clone()];
        inputs.extend(report.random_inputs.iter().map(|r| r.u.clone()));
        let steps = (cfg.verify.plot_time / vcfg.settle.dt).round() as usize;
        let x0 = vcfg.initial_state(&system)?;
        let courses = comparison_trajectories(&system, &x0, &inputs, vcfg.settle.dt, steps)?;
        write_plot(&plot_path(out, &p.stem()), &courses, p.target_index)?;

        println!(
            "x{}: achieved {:.6}, oracle {}, beats {:.0}% of {} random inputs{}",
            p.target_index,
            report.achieved_value,
            report.oracle_value.map_or("skipped".into(), |v| format!("{v:.6}")),
            100.0 * report.beats_fraction,
            report.random_inputs.len(),
            if report.passes() { "" } else { " [FAILED]" }
        );
        reports.push(report);
    }
    Ok(reports)
}

/// Long-format plot data: the optimal input is series `optimal`, random
/// inputs are `random_0`, `random_1`, ...
fn write_plot(path: &Path, courses: &[Trajectory], target: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Core(e.into());
    w.write_record(["t", "series_id", "value"]).map_err(io)?;
    for (s, traj) in courses.iter().enumerate() {
        let id = if s == 0 {
            "optimal".to_string()
        } else {
            format!("random_{}", s - 1)
        };
        for (t, x) in traj.times().iter().zip(traj.states()) {
            w.write_record([format!("{t:?}"), id.clone(), format!("{:?}", x[target])])
                .map_err(io)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Config(e.to_string()))?;
    write_file(path, &bytes)
}

/// Runs all four stages and writes `summary.json`. A missed threshold is
/// reported only after every artifact is on disk.
pub fn cmd_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<Summary> {
    cmd_simulate(cfg, out)?;
    let fit = cmd_fit(cfg, out)?;
    let solutions = cmd_program(cfg, out)?;
    let reports = cmd_verify(cfg, out)?;
    let summary = summarize(cfg, &fit, &solutions, &reports)?;
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Collects the judged numbers of a finished run.
pub fn summarize(
    cfg: &PipelineConfig,
    fit: &FitReport,
    solutions: &[SteadyStateSolution],
    reports: &[VerificationReport],
) -> Result<Summary> {
    let programs: Vec<ProgramSummary> = solutions
        .iter()
        .zip(reports)
        .map(|(s, r)| ProgramSummary {
            target_index: s.target_index,
            constraint_form: s.constraint_form.name().to_string(),
            u_star: s.u_star.clone(),
            predicted_value: s.predicted_value,
            achieved_value: r.achieved_value,
            oracle_u: r.oracle_u.clone(),
            oracle_value: r.oracle_value,
            oracle_gap: r.oracle_gap,
            beats_fraction: r.beats_fraction,
            equilibrium_residual: s.equilibrium_residual,
            flat_landscape: s.flat_landscape,
            passed: r.passes(),
        })
        .collect();
    Ok(Summary {
        seed: cfg.seed,
        system: cfg.system_spec()?.name().to_string(),
        estimator: cfg.fit.estimator,
        n_trajectories: cfg.dataset.n_traj,
        fit: FitSummary {
            median_error: fit.median_error,
            max_error: fit.max_error,
            spectral_radius: fit.spectral_radius,
            passed: fit.passed,
        },
        passed: fit.passed && programs.iter().all(|p| p.passed),
        programs,
    })
}

/// Turns a finished run into the exit status: an unmet threshold is an
/// error even though the artifacts were written.
pub fn check_fit(report: &FitReport) -> Result<()> {
    if report.passed {
        return Ok(());
    }
    Err(CliError::Threshold(format!(
        "median error {:.4} exceeds the ceiling {:.4}",
        report.median_error,
        report.max_median_error.unwrap_or(f64::INFINITY)
    )))
}

pub fn check_reports(reports: &[VerificationReport]) -> Result<()> {
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passes())
        .map(|r| format!("x{}", r.target_index))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Threshold(format!(
            "verification failed for {}",
            failed.join(", ")
        )))
    }
}

pub fn check_summary(summary: &Summary) -> Result<()> {
    if summary.passed {
        Ok(())
    } else {
        Err(CliError::Threshold(
            "the summary records at least one failed check".into(),
        ))
    }
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/pipeline.md")]
mod guide_pipeline {}
