//! Fixed-step classical Runge-Kutta integration with zero-order-hold inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-hand side `dx/dt = f(x, u)` of a controlled system.
pub trait VectorField {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]);

    fn eval_vec(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.state_dim()];
        self.eval(x, u, &mut dx);
        dx
    }
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }

    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }

    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        (**self).eval(x, u, dx)
    }
}

/// Adapts a closure into a [`VectorField`].
pub struct FnField<F> {
    state_dim: usize,
    input_dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &[f64], &mut [f64])> FnField<F> {
    pub fn new(state_dim: usize, input_dim: usize, f: F) -> Self {
        Self {
            state_dim,
            input_dim,
            f,
        }
    }
}

impl<F: Fn(&[f64], &[f64], &mut [f64])> VectorField for FnField<F> {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        (self.f)(x, u, dx)
    }
}

/// One classical RK4 step with `u` held over `[t, t + dt]`.
pub fn rk4_step<F: VectorField + ?Sized>(f: &F, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let n = x.len();
    let fail = || Error::NonFiniteState { state: x.to_vec() };

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    f.eval(x, u, &mut k1);
    if k1.iter().any(|v| !v.is_finite()) {
        return Err(fail());
    }
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    f.eval(&tmp, u, &mut k2);
    if k2.iter().any(|v| !v.is_finite()) {
        return Err(fail());
    }
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    f.eval(&tmp, u, &mut k3);
    if k3.iter().any(|v| !v.is_finite()) {
        return Err(fail());
    }
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    f.eval(&tmp, u, &mut k4);
    if k4.iter().any(|v| !v.is_finite()) {
        return Err(fail());
    }

    let next: Vec<f64> = (0..n)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(fail());
    }
    Ok(next)
}

/// Integrates `n_steps` RK4 steps from `x0`. The input is sampled at the
/// start of each step and held for its duration.
pub fn integrate<F, S>(f: &F, x0: &[f64], input: S, dt: f64, n_steps: usize) -> Result<Trajectory>
where
    F: VectorField + ?Sized,
    S: Fn(f64) -> Vec<f64>,
{
    if n_steps == 0 {
        return Err(Error::Config("integration needs at least one step".into()));
    }
    if x0.len() != f.state_dim() {
        return Err(Error::Dimension(format!(
            "initial state has length {}, system has {} states",
            x0.len(),
            f.state_dim()
        )));
    }
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut inputs = Vec::with_capacity(n_steps);
    states.push(x0.to_vec());
    for step in 0..n_steps {
        let u = input(step as f64 * dt);
        if u.len() != f.input_dim() {
            return Err(Error::Dimension(format!(
                "input signal returned {} channels, system has {}",
                u.len(),
                f.input_dim()
            )));
        }
        let x = states.last().expect("states is nonempty");
        let next = rk4_step(f, x, &u, dt).map_err(|e| match e {
            Error::NonFiniteState { state } => Error::Integration { step, state },
            other => other,
        })?;
        inputs.push(u);
        states.push(next);
    }
    Trajectory::new(dt, states, inputs)
}

/// Sampled states `x_0 … x_N` and held inputs `u_0 … u_{N-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrajectory")]
pub struct Trajectory {
    dt: f64,
    states: Vec<Vec<f64>>,
    inputs: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawTrajectory {
    dt: f64,
    states: Vec<Vec<f64>>,
    inputs: Vec<Vec<f64>>,
}

impl TryFrom<RawTrajectory> for Trajectory {
    type Error = Error;

    fn try_from(r: RawTrajectory) -> Result<Self> {
        Self::new(r.dt, r.states, r.inputs)
    }
}

impl Trajectory {
    pub fn new(dt: f64, states: Vec<Vec<f64>>, inputs: Vec<Vec<f64>>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Dimension("trajectory has no states".into()));
        }
        if inputs.len() + 1 != states.len() {
            return Err(Error::Dimension(format!(
                "trajectory has {} states but {} inputs",
                states.len(),
                inputs.len()
            )));
        }
        let n = states[0].len();
        if states.iter().any(|s| s.len() != n) {
            return Err(Error::Dimension("states have inconsistent lengths".into()));
        }
        if let Some(m) = inputs.first().map(Vec::len) {
            if inputs.iter().any(|u| u.len() != m) {
                return Err(Error::Dimension("inputs have inconsistent lengths".into()));
            }
        }
        let finite = states.iter().chain(&inputs).flatten().all(|v| v.is_finite());
        if !finite || !dt.is_finite() {
            return Err(Error::NonFinite("trajectory".into()));
        }
        Ok(Self { dt, states, inputs })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    /// Input dimension, or `None` for a single-sample trajectory.
    pub fn input_dim(&self) -> Option<usize> {
        self.inputs.first().map(Vec::len)
    }

    /// Number of steps (one fewer than the number of states).
    pub fn n_steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|k| k as f64 * self.dt).collect()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("states is nonempty")
    }

    /// Series of one state coordinate.
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[i]).collect()
    }
}
