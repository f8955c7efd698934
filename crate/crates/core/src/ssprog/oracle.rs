use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{integrate, rk4_step, Trajectory, VectorField};
use crate::ssprog::solve::{StartRecord, SteadyStateSolution};
use crate::systems::{SystemSpec, UniformBox};

/// How long to run the true system under a constant input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SettleConfig {
    pub dt: f64,
    /// Fixed horizon used when the state never settles.
    pub max_time: f64,
    /// Stop once `‖f(x, u)‖_∞` drops below this.
    pub residual_tolerance: f64,
}

impl Default for SettleConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            max_time: 500.0,
            residual_tolerance: 1e-6,
        }
    }
}

impl SettleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.max_time >= self.dt && self.residual_tolerance >= 0.0) {
            return Err(Error::Config(format!("invalid settle settings {self:?}")));
        }
        Ok(())
    }

    pub fn max_steps(&self) -> usize {
        (self.max_time / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settled {
    pub state: Vec<f64>,
    pub time: f64,
    pub residual: f64,
    /// False when the horizon ran out first.
    pub settled: bool,
}

/// Integrates the true system from `x0` under constant `u` until the vector
/// field is below tolerance or the horizon ends.
pub fn settle(system: &SystemSpec, x0: &[f64], u: &[f64], cfg: &SettleConfig) -> Result<Settled> {
    cfg.validate()?;
    let mut x = x0.to_vec();
    let mut dx = vec![0.0; x.len()];
    let residual_of = |x: &[f64], dx: &mut Vec<f64>| {
        system.eval(x, u, dx);
        dx.iter().map(|v| v.abs()).fold(0.0, f64::max)
    };
    let mut residual = residual_of(&x, &mut dx);
    let steps = cfg.max_steps();
    for k in 0..steps {
        if residual < cfg.residual_tolerance {
            return Ok(Settled {
                state: x,
                time: k as f64 * cfg.dt,
                residual,
                settled: true,
            });
        }
        x = rk4_step(system, &x, u, cfg.dt).map_err(|_| Error::Integration {
            step: k,
            state: x.clone(),
        })?;
        residual = residual_of(&x, &mut dx);
    }
    Ok(Settled {
        state: x,
        time: steps as f64 * cfg.dt,
        residual,
        settled: residual < cfg.residual_tolerance,
    })
}

/// Evenly spaced grid over the box, first channel varying slowest so the
/// points come out in lexicographic order.
pub fn box_grid(b: &UniformBox, per_dim: usize) -> Vec<Vec<f64>> {
    let axis = |d: usize| -> Vec<f64> {
        (0..per_dim)
            .map(|k| {
                if k + 1 == per_dim {
                    b.hi[d]
                } else {
                    b.lo[d] + b.width(d) * k as f64 / (per_dim - 1) as f64
                }
            })
            .collect()
    };
    let mut points = vec![Vec::new()];
    for d in 0..b.dim() {
        let ax = axis(d);
        points = points
            .into_iter()
            .flat_map(|p| {
                ax.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    points
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub u_star: Vec<f64>,
    pub value: f64,
    /// Every grid point and its settled target value, in grid order.
    pub grid: Vec<(Vec<f64>, f64)>,
}

/// Exhaustive search over a grid of constant inputs on the true system.
/// Exact ties go to the lexicographically smallest input.
pub fn brute_force_oracle(
    system: &SystemSpec,
    input_box: &UniformBox,
    grid_per_dim: usize,
    x0: &[f64],
    settle_cfg: &SettleConfig,
    target: usize,
) -> Result<OracleResult> {
    if grid_per_dim < 2 {
        return Err(Error::Config(
            "the oracle grid needs at least 2 points per channel".into(),
        ));
    }
    check_target(system, target)?;
    input_box.validate()?;
    let points = box_grid(input_box, grid_per_dim);
    let values = points
        .par_iter()
        .map(|u| settle(system, x0, u, settle_cfg).map(|s| s.state[target]))
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    Ok(OracleResult {
        u_star: points[best].clone(),
        value: values[best],
        grid: points.into_iter().zip(values).collect(),
    })
}

fn check_target(system: &SystemSpec, target: usize) -> Result<()> {
    if target >= system.state_dim() {
        return Err(Error::Config(format!(
            "target index {target} out of range for {} states",
            system.state_dim()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub n_random: usize,
    /// Oracle grid points per channel; 0 skips the oracle.
    pub grid_per_dim: usize,
    /// Common initial state; empty means the origin.
    pub x0: Vec<f64>,
    pub settle: SettleConfig,
    /// Relative slack when comparing against random inputs and the oracle.
    pub relative_tolerance: f64,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            n_random: 20,
            grid_per_dim: 21,
            x0: Vec::new(),
            settle: SettleConfig::default(),
            relative_tolerance: 0.05,
            seed: 0,
        }
    }
}

impl VerifyConfig {
    pub fn initial_state(&self, system: &SystemSpec) -> Result<Vec<f64>> {
        let n = system.state_dim();
        match self.x0.len() {
            0 => Ok(vec![0.0; n]),
            len if len == n => Ok(self.x0.clone()),
            len => Err(Error::Dimension(format!("x0 has length {len}, system has {n} states"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomInput {
    pub u: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub target_index: usize,
    pub u_star: Vec<f64>,
    pub predicted_value: f64,
    pub achieved_value: f64,
    pub achieved_settled: bool,
    pub oracle_u: Option<Vec<f64>>,
    pub oracle_value: Option<f64>,
    /// `(oracle − achieved) / |oracle|`.
    pub oracle_gap: Option<f64>,
    pub random_inputs: Vec<RandomInput>,
    /// Share of random inputs whose value `u*` matches up to the relative
    /// tolerance; 1 when there are none.
    pub beats_fraction: f64,
    pub relative_tolerance: f64,
    pub starts: Vec<StartRecord>,
}

impl VerificationReport {
    /// Beats every random input and lands within tolerance of the oracle.
    pub fn passes(&self) -> bool {
        self.beats_fraction == 1.0 && self.oracle_gap.map_or(true, |g| g <= self.relative_tolerance)
    }
}

pub fn at_least_within(value: f64, reference: f64, rel_tol: f64) -> bool {
    value >= reference - rel_tol * reference.abs()
}

/// Applies `u*` and `n_random` random box inputs to the true system from a
/// shared initial state and compares the settled target values.
pub fn verify(
    system: &SystemSpec,
    solution: &SteadyStateSolution,
    input_box: &UniformBox,
    cfg: &VerifyConfig,
) -> Result<VerificationReport> {
    let target = solution.target_index;
    check_target(system, target)?;
    let x0 = cfg.initial_state(system)?;
    let achieved = settle(system, &x0, &solution.u_star, &cfg.settle)?;
    let achieved_value = achieved.state[target];

    let inputs = random_inputs(input_box, cfg.n_random, cfg.seed);
    let values = inputs
        .par_iter()
        .map(|u| settle(system, &x0, u, &cfg.settle).map(|s| s.state[target]))
        .collect::<Result<Vec<f64>>>()?;
    let beaten = values
        .iter()
        .filter(|&&v| at_least_within(achieved_value, v, cfg.relative_tolerance))
        .count();
    let beats_fraction = if values.is_empty() {
        1.0
    } else {
        beaten as f64 / values.len() as f64
    };

    let oracle = if cfg.grid_per_dim == 0 {
        None
    } else {
        Some(brute_force_oracle(
            system,
            input_box,
            cfg.grid_per_dim,
            &x0,
            &cfg.settle,
            target,
        )?)
    };
    let oracle_gap = oracle.as_ref().map(|o| {
        if o.value == 0.0 {
            o.value - achieved_value
        } else {
            (o.value - achieved_value) / o.value.abs()
        }
    });

    Ok(VerificationReport {
        target_index: target,
        u_star: solution.u_star.clone(),
        predicted_value: solution.predicted_value,
        achieved_value,
        achieved_settled: achieved.settled,
        oracle_u: oracle.as_ref().map(|o| o.u_star.clone()),
        oracle_value: oracle.as_ref().map(|o| o.value),
        oracle_gap,
        random_inputs: inputs
            .into_iter()
            .zip(values)
            .map(|(u, value)| RandomInput { u, value })
            .collect(),
        beats_fraction,
        relative_tolerance: cfg.relative_tolerance,
        starts: solution.starts.clone(),
    })
}

/// Uniform draws from the box, reproducible from `seed`.
pub fn random_inputs(b: &UniformBox, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| b.sample(&mut rng)).collect()
}

/// Time courses under each constant input from a shared initial state, for
/// plotting.
pub fn comparison_trajectories(
    system: &SystemSpec,
    x0: &[f64],
    inputs: &[Vec<f64>],
    dt: f64,
    n_steps: usize,
) -> Result<Vec<Trajectory>> {
    inputs
        .par_iter()
        .map(|u| integrate(system, x0, |_| u.clone(), dt, n_steps))
        .collect()
}
