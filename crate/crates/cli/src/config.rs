//! The pipeline configuration file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use koopman_steady::deepdmd::{MixedTerms, TrainConfig};
use koopman_steady::numerics::{VectorField, DEFAULT_RANK_TOL};
use koopman_steady::ssprog::{ConstraintForm, OptimizerConfig, SettleConfig, SteadyStateProblem, VerifyConfig};
use koopman_steady::systems::{DatasetSpec, InputKind, SystemSpec, UniformBox};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub system: SystemBlock,
    pub dataset: DatasetBlock,
    pub fit: FitBlock,
    #[serde(default)]
    pub program: Vec<ProgramBlock>,
    #[serde(default)]
    pub verify: VerifyBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    /// `iffl`, `promoter` or `linear`.
    pub name: String,
    /// Overrides for individual parameters; unnamed ones keep their defaults.
    #[serde(default)]
    pub params: Option<toml::Table>,
}

/// Box bounds: scalars apply to every channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Scalar(f64),
    PerChannel(Vec<f64>),
}

impl Bound {
    fn expand(&self, dim: usize) -> Result<Vec<f64>, CliError> {
        match self {
            Self::Scalar(v) => Ok(vec![*v; dim]),
            Self::PerChannel(v) if v.len() == dim => Ok(v.clone()),
            Self::PerChannel(v) => Err(CliError::Config(format!(
                "bound has {} entries, expected {dim}",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxBlock {
    pub lo: Bound,
    pub hi: Bound,
}

impl BoxBlock {
    pub fn resolve(&self, dim: usize) -> Result<UniformBox, CliError> {
        Ok(UniformBox::new(self.lo.expand(dim)?, self.hi.expand(dim)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetBlock {
    pub n_traj: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub initial_box: BoxBlock,
    pub input_box: BoxBlock,
    #[serde(default = "default_input_kind")]
    pub input_kind: InputKind,
    #[serde(default)]
    pub ramp_tau: Option<f64>,
    /// Fraction of trajectories used for fitting; the rest are held out.
    pub train_fraction: f64,
    /// Fraction of the fitting trajectories set aside for model selection.
    #[serde(default)]
    pub validation_fraction: f64,
}

fn default_input_kind() -> InputKind {
    InputKind::Step
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Dmdc,
    Deepdmd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitBlock {
    pub estimator: Estimator,
    /// Steps predicted on each held-out trajectory.
    pub horizon: usize,
    /// Median held-out error above which the fit counts as failed.
    #[serde(default)]
    pub max_median_error: Option<f64>,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    /// Training settings for `deepdmd`; `seed` is taken from the master seed.
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_rank_tol() -> f64 {
    DEFAULT_RANK_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramBlock {
    pub target_index: usize,
    pub input_box: BoxBlock,
    pub constraint_form: ConstraintForm,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

impl ProgramBlock {
    /// File-name stem shared by this program's outputs, e.g. `x3_no_mixed`.
    pub fn stem(&self) -> String {
        format!("x{}_{}", self.target_index, self.constraint_form.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyBlock {
    pub n_random: usize,
    pub grid_per_dim: usize,
    /// Settling horizon in time units.
    pub horizon: f64,
    pub dt: f64,
    pub residual_tolerance: f64,
    pub relative_tolerance: f64,
    /// Shared initial state; empty means the origin.
    pub x0: Vec<f64>,
    /// Length of the plotted time courses in time units.
    pub plot_time: f64,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        let s = SettleConfig::default();
        Self {
            n_random: 20,
            grid_per_dim: 21,
            horizon: s.max_time,
            dt: s.dt,
            residual_tolerance: s.residual_tolerance,
            relative_tolerance: 0.05,
            x0: Vec::new(),
            plot_time: 20.0,
        }
    }
}

/// Per-stage seeds derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub dataset: u64,
    pub split: u64,
    pub train: u64,
    pub optimizer: u64,
    pub verify: u64,
    pub validation: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        Self {
            dataset: seed,
            split: seed.wrapping_add(1),
            train: seed.wrapping_add(2),
            optimizer: seed.wrapping_add(3),
            verify: seed.wrapping_add(4),
            validation: seed.wrapping_add(5),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses and validates every block.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_master(self.seed)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let system = self.system_spec()?;
        let spec = self.dataset_spec()?;
        let d = &self.dataset;
        if spec.n_traj < 2 && !self.program.is_empty() {
            return Err(CliError::Config("at least two trajectories are needed to fit".into()));
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(CliError::Config("train_fraction must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&d.validation_fraction) {
            return Err(CliError::Config("validation_fraction must lie in [0, 1)".into()));
        }
        if self.fit.horizon == 0 || self.fit.horizon > d.n_steps {
            return Err(CliError::Config(format!(
                "fit.horizon must lie in 1..={} (the trajectory length)",
                d.n_steps
            )));
        }
        self.train_config().validate()?;
        let mixed = match self.fit.estimator {
            Estimator::Dmdc => MixedTerms::None,
            Estimator::Deepdmd => self.fit.train.mixed_terms,
        };
        for (k, p) in self.program.iter().enumerate() {
            let problem = self.problem(p, &system)?;
            let fits = match problem.constraint_form {
                ConstraintForm::NoMixed => mixed == MixedTerms::None,
                ConstraintForm::SeparatedInU => mixed == MixedTerms::Dictionary,
                ConstraintForm::SeparatedInX => mixed != MixedTerms::None,
            };
            if !fits {
                return Err(CliError::Config(format!(
                    "program {} cannot use constraint_form {:?} with mixed_terms {:?}",
                    p.stem(),
                    problem.constraint_form.name(),
                    mixed
                )));
            }
            if self.program[..k].iter().any(|q| q.stem() == p.stem()) {
                return Err(CliError::Config(format!("program {} is listed twice", p.stem())));
            }
        }
        self.verify_config(0, &system)?.settle.validate()?;
        if self.verify.plot_time < 0.0 {
            return Err(CliError::Config("verify.plot_time must be ≥ 0".into()));
        }
        Ok(())
    }

    pub fn system_spec(&self) -> Result<SystemSpec, CliError> {
        let name = self.system.name.as_str();
        let defaults = match name {
            "iffl" => Some(SystemSpec::Iffl(Default::default())),
            "promoter" => Some(SystemSpec::CombPromoter(Default::default())),
            "linear" => None,
            other => return Err(CliError::Config(format!("unknown system {other:?}"))),
        };
        let mut params = match &defaults {
            Some(spec) => {
                let json = serde_json::to_value(spec).map_err(|e| CliError::Config(e.to_string()))?;
                json.get("params").cloned().unwrap_or(serde_json::Value::Null)
            }
            None => serde_json::Value::Object(Default::default()),
        };
        if let Some(overrides) = &self.system.params {
            let overrides = serde_json::to_value(overrides).map_err(|e| CliError::Config(e.to_string()))?;
            let (serde_json::Value::Object(base), serde_json::Value::Object(extra)) = (&mut params, overrides) else {
                return Err(CliError::Config("system.params must be a table".into()));
            };
            for (k, v) in extra {
                if defaults.is_some() && !base.contains_key(&k) {
                    return Err(CliError::Config(format!("unknown {name} parameter {k:?}")));
                }
                base.insert(k, v);
            }
        }
        let spec: SystemSpec = serde_json::from_value(serde_json::json!({ "name": name, "params": params }))
            .map_err(|e| CliError::Config(format!("system.params: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec, CliError> {
        let system = self.system_spec()?;
        let d = &self.dataset;
        let (n, m) = (system.state_dim(), system.input_dim());
        let spec = DatasetSpec {
            n_traj: d.n_traj,
            n_steps: d.n_steps,
            dt: d.dt,
            ic_box: d.initial_box.resolve(n)?,
            input_box: d.input_box.resolve(m)?,
            input_kind: d.input_kind,
            ramp_tau: d.ramp_tau,
            seed: self.seeds().dataset,
        };
        if !(spec.dt > 0.0) || spec.n_steps == 0 || spec.n_traj == 0 {
            return Err(CliError::Config(
                "dataset needs dt > 0 and at least one trajectory and step".into(),
            ));
        }
        Ok(spec)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seeds().train,
            ..self.fit.train.clone()
        }
    }

    pub fn problem(&self, p: &ProgramBlock, system: &SystemSpec) -> Result<SteadyStateProblem, CliError> {
        if p.target_index >= system.state_dim() {
            return Err(CliError::Config(format!(
                "program target_index {} out of range for {} states",
                p.target_index,
                system.state_dim()
            )));
        }
        if p.optimizer.n_starts == 0 {
            return Err(CliError::Config("optimizer.n_starts must be positive".into()));
        }
        Ok(SteadyStateProblem {
            target_index: p.target_index,
            input_box: p.input_box.resolve(system.input_dim())?,
            constraint_form: p.constraint_form,
        })
    }

    pub fn optimizer_config(&self, p: &ProgramBlock) -> OptimizerConfig {
        OptimizerConfig {
            seed: self.seeds().optimizer,
            ..p.optimizer.clone()
        }
    }

    /// Verification settings for the `k`-th program.
    pub fn verify_config(&self, k: usize, system: &SystemSpec) -> Result<VerifyConfig, CliError> {
        let v = &self.verify;
        let cfg = VerifyConfig {
            n_random: v.n_random,
            grid_per_dim: v.grid_per_dim,
            x0: v.x0.clone(),
            settle: SettleConfig {
                dt: v.dt,
                max_time: v.horizon,
                residual_tolerance: v.residual_tolerance,
            },
            relative_tolerance: v.relative_tolerance,
            seed: self.seeds().verify.wrapping_add(k as u64),
        };
        cfg.initial_state(system)?;
        Ok(cfg)
    }
}
