//! Least-squares identification of `x_{k+1} = A·x_k + B·u_k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{pseudoinverse_detailed, Matrix, Trajectory};
use crate::systems::SnapshotSet;

/// A fitted linear model. Serializes as
/// `{"kind":"dmdc","A":[[..]],"B":[[..]],"residual":r}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "LinearModelFile", into = "LinearModelFile")]
pub struct LinearModel {
    pub a: Matrix,
    pub b: Matrix,
    /// `‖X_f − A·X_p − B·U_p‖_F / ‖X_f‖_F` on the fitting data.
    pub fit_residual: f64,
    /// Numerical rank of the regressor; not part of the file format.
    pub rank: usize,
    pub rank_deficient: bool,
}

#[derive(Serialize, Deserialize)]
enum DmdcKind {
    #[serde(rename = "dmdc")]
    Dmdc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearModelFile {
    kind: DmdcKind,
    #[serde(rename = "A")]
    a: Matrix,
    #[serde(rename = "B")]
    b: Matrix,
    residual: f64,
}

impl From<LinearModelFile> for LinearModel {
    fn from(f: LinearModelFile) -> Self {
        let full = f.a.rows() + f.b.cols();
        Self {
            a: f.a,
            b: f.b,
            fit_residual: f.residual,
            rank: full,
            rank_deficient: false,
        }
    }
}

impl From<LinearModel> for LinearModelFile {
    fn from(m: LinearModel) -> Self {
        Self {
            kind: DmdcKind::Dmdc,
            a: m.a,
            b: m.b,
            residual: m.fit_residual,
        }
    }
}

impl LinearModel {
    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut next = self.a.matvec(x);
        for (n, bu) in next.iter_mut().zip(self.b.matvec(u)) {
            *n += bu;
        }
        next
    }
}

/// Relative Frobenius residual of `X_f ≈ A·X_p + B·U_p`; absolute when
/// `X_f` is zero.
pub fn fit_residual(a: &Matrix, b: &Matrix, snap: &SnapshotSet) -> f64 {
    let pred = a.matmul(snap.x_p()).add(&b.matmul(snap.u_p()));
    let err = snap.x_f().sub(&pred).frobenius_norm();
    let scale = snap.x_f().frobenius_norm();
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

/// `[A B] = X_f · pinv([X_p; U_p])`. A rank-deficient regressor still
/// yields the minimum-norm solution and sets `rank_deficient`.
pub fn fit_dmdc(snap: &SnapshotSet, rank_tol: f64) -> Result<LinearModel> {
    if snap.is_empty() {
        return Err(Error::EmptySnapshots);
    }
    let n = snap.state_dim();
    let regressor = Matrix::vstack(&[snap.x_p(), snap.u_p()]);
    let pinv = pseudoinverse_detailed(&regressor, rank_tol)?;
    let ab = snap.x_f().matmul(&pinv.matrix);
    let a = ab.column_range(0..n);
    let b = ab.column_range(n..ab.cols());
    let fit_residual = fit_residual(&a, &b, snap);
    Ok(LinearModel {
        a,
        b,
        fit_residual,
        rank: pinv.rank,
        rank_deficient: pinv.rank < regressor.rows(),
    })
}

/// Fits `A` on unforced data, then `B` on the forced residual with `A`
/// held fixed. The reported residual covers both sets.
pub fn fit_two_stage(unforced: &SnapshotSet, forced: &SnapshotSet, rank_tol: f64) -> Result<LinearModel> {
    if unforced.is_empty() || forced.is_empty() {
        return Err(Error::EmptySnapshots);
    }
    if unforced.u_p().max_abs() != 0.0 {
        return Err(Error::Config("the first stage needs unforced data (U_p ≡ 0)".into()));
    }
    if unforced.state_dim() != forced.state_dim() || unforced.input_dim() != forced.input_dim() {
        return Err(Error::Dimension(
            "unforced and forced snapshots differ in dimension".into(),
        ));
    }
    let pa = pseudoinverse_detailed(unforced.x_p(), rank_tol)?;
    let a = unforced.x_f().matmul(&pa.matrix);
    let remainder = forced.x_f().sub(&a.matmul(forced.x_p()));
    let pb = pseudoinverse_detailed(forced.u_p(), rank_tol)?;
    let b = remainder.matmul(&pb.matrix);

    let both = SnapshotSet::new(
        Matrix::hstack(&[unforced.x_p(), forced.x_p()]),
        Matrix::hstack(&[unforced.x_f(), forced.x_f()]),
        Matrix::hstack(&[unforced.u_p(), forced.u_p()]),
        Vec::new(),
    )?;
    Ok(LinearModel {
        fit_residual: fit_residual(&a, &b, &both),
        rank: pa.rank + pb.rank,
        rank_deficient: pa.rank < unforced.state_dim() || pb.rank < forced.input_dim(),
        a,
        b,
    })
}

/// Iterates the linear map from `x0` under `u_seq`; the trajectory has
/// `u_seq.len() + 1` states spaced by `dt`.
pub fn predict_linear(model: &LinearModel, x0: &[f64], u_seq: &[Vec<f64>], dt: f64) -> Result<Trajectory> {
    if x0.len() != model.state_dim() {
        return Err(Error::Dimension(format!(
            "initial state has length {}, model has {} states",
            x0.len(),
            model.state_dim()
        )));
    }
    if let Some(u) = u_seq.iter().find(|u| u.len() != model.input_dim()) {
        return Err(Error::Dimension(format!(
            "input of length {} for a model with {} inputs",
            u.len(),
            model.input_dim()
        )));
    }
    let mut states = Vec::with_capacity(u_seq.len() + 1);
    states.push(x0.to_vec());
    for u in u_seq {
        let next = model.step(states.last().expect("nonempty"), u);
        states.push(next);
    }
    Trajectory::new(dt, states, u_seq.to_vec())
}
