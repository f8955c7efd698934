use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{integrate, Matrix, Trajectory, VectorField};
use crate::systems::SystemSpec;

/// Axis-aligned box `[lo, hi]` used for initial conditions and inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl UniformBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            lo: vec![lo; dim],
            hi: vec![hi; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() {
            return Err(Error::Dimension("box bounds differ in length".into()));
        }
        for (i, (l, h)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(Error::Config(format!("box channel {i}: invalid bounds [{l}, {h}]")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| if h > l { rng.random_range(l..h) } else { l })
            .collect()
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.dim() && v.iter().enumerate().all(|(i, &x)| self.lo[i] <= x && x <= self.hi[i])
    }

    pub fn project(&self, v: &mut [f64]) {
        for (i, x) in v.iter_mut().enumerate() {
            *x = x.clamp(self.lo[i], self.hi[i]);
        }
    }

    /// Smallest distance from `v` to any face of the box.
    pub fn distance_to_boundary(&self, v: &[f64]) -> f64 {
        v.iter()
            .enumerate()
            .map(|(i, &x)| (x - self.lo[i]).abs().min((self.hi[i] - x).abs()))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Step,
    SaturatingRamp,
}

/// Per-trajectory input signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSignal {
    /// `u(t) = level`.
    Step { level: Vec<f64> },
    /// `u(t) = level · (1 − e^{−t/τ})`: continuous, nondecreasing, bounded by
    /// `level`.
    SaturatingRamp { level: Vec<f64>, tau: f64 },
}

impl InputSignal {
    pub fn at(&self, t: f64) -> Vec<f64> {
        match self {
            Self::Step { level } => level.clone(),
            Self::SaturatingRamp { level, tau } => {
                let s = 1.0 - (-t / tau).exp();
                level.iter().map(|l| l * s).collect()
            }
        }
    }

    pub fn level(&self) -> &[f64] {
        match self {
            Self::Step { level } | Self::SaturatingRamp { level, .. } => level,
        }
    }
}

/// Everything needed to reproduce a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_traj: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub ic_box: UniformBox,
    pub input_box: UniformBox,
    pub input_kind: InputKind,
    /// Ramp time constant; defaults to `10·dt`.
    pub ramp_tau: Option<f64>,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn ramp_tau(&self) -> f64 {
        self.ramp_tau.unwrap_or(10.0 * self.dt)
    }

    /// The input signal trajectory `index` receives, drawn from its own
    /// stream of the master seed.
    pub fn draw(&self, index: usize) -> (Vec<f64>, InputSignal) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let x0 = self.ic_box.sample(&mut rng);
        let level = self.input_box.sample(&mut rng);
        let signal = match self.input_kind {
            InputKind::Step => InputSignal::Step { level },
            InputKind::SaturatingRamp => InputSignal::SaturatingRamp {
                level,
                tau: self.ramp_tau(),
            },
        };
        (x0, signal)
    }
}

/// Simulates `spec.n_traj` trajectories, each with its own initial
/// condition and input level. Deterministic in `spec.seed`.
pub fn generate_dataset(system: &SystemSpec, spec: &DatasetSpec) -> Result<Vec<Trajectory>> {
    system.validate()?;
    spec.ic_box.validate()?;
    spec.input_box.validate()?;
    if spec.n_traj == 0 {
        return Err(Error::Config("dataset needs at least one trajectory".into()));
    }
    if spec.ic_box.dim() != system.state_dim() || spec.input_box.dim() != system.input_dim() {
        return Err(Error::Dimension(format!(
            "sampling boxes have dims ({}, {}), system has ({}, {})",
            spec.ic_box.dim(),
            spec.input_box.dim(),
            system.state_dim(),
            system.input_dim()
        )));
    }
    if spec.input_kind == InputKind::SaturatingRamp && !(spec.ramp_tau() > 0.0) {
        return Err(Error::Config("ramp time constant must be positive".into()));
    }

    let results: Vec<Result<Trajectory>> = (0..spec.n_traj)
        .into_par_iter()
        .map(|i| {
            let (x0, signal) = spec.draw(i);
            integrate(system, &x0, |t| signal.at(t), spec.dt, spec.n_steps)
        })
        .collect();
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| Error::Dataset {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Which columns of a [`SnapshotSet`] came from which trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotSpan {
    pub trajectory: usize,
    pub columns: Range<usize>,
}

/// Snapshot matrices `X_p`, `X_f` (n × N) and `U_p` (m × N). Column `j` of
/// `X_f` is the one-step successor of column `j` of `X_p` within a single
/// trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    x_p: Matrix,
    x_f: Matrix,
    u_p: Matrix,
    provenance: Vec<SnapshotSpan>,
}

impl SnapshotSet {
    pub fn new(x_p: Matrix, x_f: Matrix, u_p: Matrix, provenance: Vec<SnapshotSpan>) -> Result<Self> {
        if x_p.shape() != x_f.shape() || u_p.cols() != x_p.cols() {
            return Err(Error::Dimension(format!(
                "snapshot shapes disagree: X_p {:?}, X_f {:?}, U_p {:?}",
                x_p.shape(),
                x_f.shape(),
                u_p.shape()
            )));
        }
        Ok(Self {
            x_p,
            x_f,
            u_p,
            provenance,
        })
    }

    pub fn empty(state_dim: usize, input_dim: usize) -> Self {
        Self {
            x_p: Matrix::zeros(state_dim, 0),
            x_f: Matrix::zeros(state_dim, 0),
            u_p: Matrix::zeros(input_dim, 0),
            provenance: Vec::new(),
        }
    }

    pub fn x_p(&self) -> &Matrix {
        &self.x_p
    }

    pub fn x_f(&self) -> &Matrix {
        &self.x_f
    }

    pub fn u_p(&self) -> &Matrix {
        &self.u_p
    }

    pub fn provenance(&self) -> &[SnapshotSpan] {
        &self.provenance
    }

    pub fn n_cols(&self) -> usize {
        self.x_p.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.n_cols() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.x_p.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.u_p.rows()
    }

    /// Column subset, e.g. a minibatch. Provenance is not carried over.
    pub fn select(&self, cols: &[usize]) -> Self {
        Self {
            x_p: self.x_p.select_columns(cols),
            x_f: self.x_f.select_columns(cols),
            u_p: self.u_p.select_columns(cols),
            provenance: Vec::new(),
        }
    }
}

/// Stacks per-trajectory shifted pairs column-wise. No pair straddles two
/// trajectories.
pub fn assemble_snapshots(trajs: &[Trajectory]) -> Result<SnapshotSet> {
    let first = trajs
        .first()
        .ok_or_else(|| Error::Config("no trajectories to assemble".into()))?;
    let n = first.state_dim();
    let m = trajs.iter().find_map(Trajectory::input_dim).unwrap_or(0);
    let dt = first.dt();
    for (i, t) in trajs.iter().enumerate() {
        if t.state_dim() != n || t.input_dim().is_some_and(|d| d != m) {
            return Err(Error::Dimension(format!("trajectory {i} has different dimensions")));
        }
        if t.dt() != dt {
            return Err(Error::Config(format!(
                "trajectory {i} has dt {} but trajectory 0 has {dt}",
                t.dt()
            )));
        }
    }

    let total: usize = trajs.iter().map(Trajectory::n_steps).sum();
    let mut x_p = Vec::with_capacity(total);
    let mut x_f = Vec::with_capacity(total);
    let mut u_p = Vec::with_capacity(total);
    let mut provenance = Vec::with_capacity(trajs.len());
    for (id, t) in trajs.iter().enumerate() {
        let start = x_p.len();
        for k in 0..t.n_steps() {
            x_p.push(t.states()[k].clone());
            x_f.push(t.states()[k + 1].clone());
            u_p.push(t.inputs()[k].clone());
        }
        provenance.push(SnapshotSpan {
            trajectory: id,
            columns: start..x_p.len(),
        });
    }
    SnapshotSet::new(
        Matrix::from_columns(n, &x_p)?,
        Matrix::from_columns(n, &x_f)?,
        Matrix::from_columns(m, &u_p)?,
        provenance,
    )
}

/// Trajectory indices on each side of a train/test split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn pick<T: Clone>(indices: &[usize], items: &[T]) -> Vec<T> {
        indices.iter().map(|&i| items[i].clone()).collect()
    }
}

/// Splits `n` trajectories at trajectory granularity. `round(fraction·n)`
/// go to training, clamped so both sides are nonempty; each side keeps the
/// original order.
pub fn train_test_split(n: usize, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    if n < 2 {
        return Err(Error::Config(format!("cannot split {n} trajectories")));
    }
    let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rk4_step;
    use crate::systems::IfflParams;

    fn iffl_spec(n_traj: usize, n_steps: usize) -> DatasetSpec {
        DatasetSpec {
            n_traj,
            n_steps,
            dt: 0.1,
            ic_box: UniformBox::uniform(5, 0.0, 2.0),
            input_box: UniformBox::uniform(2, 0.0, 10.0),
            input_kind: InputKind::Step,
            ramp_tau: None,
            seed: 42,
        }
    }

    #[test]
    fn one_trajectory_one_step() {
        let t = generate_dataset(&SystemSpec::Iffl(IfflParams::default()), &iffl_spec(1, 1)).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].states().len(), 2);
        assert_eq!(t[0].inputs().len(), 1);
    }

    #[test]
    fn deterministic_and_distinct_per_trajectory() {
        let sys = SystemSpec::Iffl(IfflParams::default());
        let a = generate_dataset(&sys, &iffl_spec(4, 5)).unwrap();
        let b = generate_dataset(&sys, &iffl_spec(4, 5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].states()[0], a[1].states()[0]);
        assert_ne!(a[0].inputs()[0], a[1].inputs()[0]);
        let mut other = iffl_spec(4, 5);
        other.seed = 43;
        assert_ne!(generate_dataset(&sys, &other).unwrap(), a);
    }

    #[test]
    fn ramp_signal_is_monotone_bounded_and_continuous() {
        let s = InputSignal::SaturatingRamp {
            level: vec![0.5, 1.0],
            tau: 0.1,
        };
        assert_eq!(s.at(0.0), vec![0.0, 0.0]);
        let mut prev = s.at(0.0);
        for k in 1..200 {
            let u = s.at(k as f64 * 0.01);
            for c in 0..2 {
                assert!(u[c] >= prev[c] && u[c] <= s.level()[c]);
                assert!(u[c] - prev[c] < 0.1 * s.level()[c]);
            }
            prev = u;
        }
        let step = InputSignal::Step { level: vec![3.0] };
        assert_eq!(step.at(0.0), step.at(100.0));
    }

    #[test]
    fn assembly_never_crosses_trajectories() {
        let t1 = Trajectory::new(1.0, vec![vec![0.0], vec![1.0], vec![2.0]], vec![vec![0.0]; 2]).unwrap();
        let t2 = Trajectory::new(
            1.0,
            vec![vec![10.0], vec![11.0], vec![12.0], vec![13.0]],
            vec![vec![1.0]; 3],
        )
        .unwrap();
        let s = assemble_snapshots(std::slice::from_ref(&t1)).unwrap();
        assert_eq!(s.n_cols(), 2);
        let s = assemble_snapshots(&[t1, t2]).unwrap();
        assert_eq!(s.n_cols(), 5);
        assert_eq!(s.x_p().row(0), &[0.0, 1.0, 10.0, 11.0, 12.0]);
        assert_eq!(s.x_f().row(0), &[1.0, 2.0, 11.0, 12.0, 13.0]);
        assert_eq!(s.provenance()[1].columns, 2..5);
    }

    #[test]
    fn assembly_rejects_mixed_dt_or_dims() {
        let a = Trajectory::new(1.0, vec![vec![0.0], vec![1.0]], vec![vec![0.0]]).unwrap();
        let b = Trajectory::new(0.5, vec![vec![0.0], vec![1.0]], vec![vec![0.0]]).unwrap();
        let c = Trajectory::new(1.0, vec![vec![0.0, 1.0], vec![1.0, 1.0]], vec![vec![0.0]]).unwrap();
        assert!(assemble_snapshots(&[a.clone(), b]).is_err());
        assert!(assemble_snapshots(&[a, c]).is_err());
        assert!(assemble_snapshots(&[]).is_err());
    }

    #[test]
    fn snapshot_columns_are_one_rk4_step_apart() {
        let sys = SystemSpec::Iffl(IfflParams::default());
        let trajs = generate_dataset(&sys, &iffl_spec(6, 20)).unwrap();
        let s = assemble_snapshots(&trajs).unwrap();
        for j in (0..s.n_cols()).step_by(7) {
            let next = rk4_step(&sys, &s.x_p().column(j), &s.u_p().column(j), 0.1).unwrap();
            assert_eq!(next, s.x_f().column(j));
        }
    }

    #[test]
    fn split_examples() {
        let s = train_test_split(100, 0.5, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (50, 50));
        let s = train_test_split(2, 0.5, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (1, 1));
        assert_eq!(
            train_test_split(100, 0.75, 9).unwrap(),
            train_test_split(100, 0.75, 9).unwrap()
        );
        let s = train_test_split(10, 0.75, 3).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(train_test_split(10, 1.0, 0).is_err());
        assert!(train_test_split(1, 0.5, 0).is_err());
    }

    #[test]
    fn box_helpers() {
        let b = UniformBox::new(vec![0.0, 1.0], vec![10.0, 2.0]).unwrap();
        let mut v = vec![-1.0, 1.5];
        b.project(&mut v);
        assert_eq!(v, vec![0.0, 1.5]);
        assert_eq!(b.distance_to_boundary(&v), 0.0);
        assert!((b.distance_to_boundary(&[5.0, 1.5]) - 0.5).abs() < 1e-15);
        assert!(UniformBox::new(vec![1.0], vec![0.0]).is_err());
    }
}
