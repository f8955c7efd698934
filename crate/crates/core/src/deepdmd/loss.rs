//! Training objective
//! `‖Ψ_x(X_f) − K_x·Ψ_x(X_p) − K_xu·Ψ_xu − K_u·Ψ_u(U_p)‖_F + λ₁·σ_max([K_x K_xu K_u]) + λ₂·Σ|θ|`
//! and its exact reverse-mode gradient.

use serde::{Deserialize, Serialize};

use crate::deepdmd::model::{KoopmanModel, Lifting, MixedLifting};
use crate::deepdmd::net::NetCache;
use crate::error::{Error, Result};
use crate::numerics::{svd, Matrix};
use crate::systems::SnapshotSet;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Regularization {
    /// Weight on the spectral norm of the stacked operator.
    pub lambda_spectral: f64,
    /// Weight on the ℓ₁ norm of all network weights and biases.
    pub lambda_sparsity: f64,
}

impl Regularization {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.lambda_spectral) && ok(self.lambda_sparsity) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "regularization weights must be finite and ≥ 0, got {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub residual: f64,
    pub spectral: f64,
    pub sparsity: f64,
    pub total: f64,
}

/// A lifted batch plus whatever the backward pass needs.
struct LiftedBatch {
    values: Matrix,
    cache: Option<NetCache>,
}

fn lift_batch(l: &Lifting, x: &Matrix) -> LiftedBatch {
    match l {
        Lifting::Network { net } => {
            let (cache, out) = net.forward_cached(x);
            LiftedBatch {
                values: Matrix::vstack(&[x, &out]),
                cache: Some(cache),
            }
        }
        Lifting::Monomial { .. } => LiftedBatch {
            values: l.lift_batch(x),
            cache: None,
        },
    }
}

/// Column-wise `ψ_x ⊗ ψ_u`, state-major.
fn kron_columns(px: &Matrix, pu: &Matrix) -> Matrix {
    let (n_l, m_l, cols) = (px.rows(), pu.rows(), px.cols());
    let mut out = Matrix::zeros(n_l * m_l, cols);
    for i in 0..n_l {
        let xi = px.row(i);
        for j in 0..m_l {
            let uj = pu.row(j);
            for ((o, a), b) in out.row_mut(i * m_l + j).iter_mut().zip(xi).zip(uj) {
                *o = a * b;
            }
        }
    }
    out
}

struct Forward {
    lx_f: LiftedBatch,
    lx_p: LiftedBatch,
    lu: LiftedBatch,
    mixed: Option<LiftedBatch>,
    residual: Matrix,
}

fn forward(model: &KoopmanModel, snap: &SnapshotSet) -> Result<Forward> {
    if snap.state_dim() != model.state_dim() || snap.input_dim() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "snapshots are {}-state/{}-input, model is {}/{}",
            snap.state_dim(),
            snap.input_dim(),
            model.state_dim(),
            model.input_dim()
        )));
    }
    let lx_f = lift_batch(model.psi_x(), snap.x_f());
    let lx_p = lift_batch(model.psi_x(), snap.x_p());
    let lu = lift_batch(model.psi_u(), snap.u_p());
    let mixed = model.psi_xu().map(|m| match m {
        MixedLifting::Dictionary => LiftedBatch {
            values: kron_columns(&lx_p.values, &lu.values),
            cache: None,
        },
        MixedLifting::Learned { net } => {
            let (cache, values) = net.forward_cached(&Matrix::vstack(&[snap.x_p(), snap.u_p()]));
            LiftedBatch {
                values,
                cache: Some(cache),
            }
        }
    });
    let mut residual = lx_f.values.sub(&model.k_x().matmul(&lx_p.values));
    if let (Some(k), Some(m)) = (model.k_xu(), &mixed) {
        residual.add_assign_scaled(&k.matmul(&m.values), -1.0);
    }
    residual.add_assign_scaled(&model.k_u().matmul(&lu.values), -1.0);
    Ok(Forward {
        lx_f,
        lx_p,
        lu,
        mixed,
        residual,
    })
}

fn penalties(model: &KoopmanModel, reg: &Regularization) -> Result<(f64, Option<Matrix>)> {
    if reg.lambda_spectral == 0.0 {
        return Ok((0.0, None));
    }
    let k = model.stacked_operator();
    let s = svd(&k)?;
    let (top, &sigma) = s
        .singular_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("stacked operator is nonempty");
    // σ_max is differentiable where the top singular value is simple, with
    // gradient u₁·v₁ᵀ; elsewhere this is a valid subgradient.
    let u1 = s.u.column(top);
    let v1 = s.vt.row(top);
    let sub = Matrix::from_fn(k.rows(), k.cols(), |i, j| u1[i] * v1[j]);
    Ok((reg.lambda_spectral * sigma, Some(sub)))
}

fn breakdown(residual: f64, spectral: f64, sparsity: f64) -> Result<LossBreakdown> {
    let total = residual + spectral + sparsity;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss (residual {residual}, spectral {spectral}, sparsity {sparsity})"
        )));
    }
    Ok(LossBreakdown {
        residual,
        spectral,
        sparsity,
        total,
    })
}

/// Evaluates the objective over every column of `snap`. With no columns only
/// the penalties remain.
pub fn loss(model: &KoopmanModel, snap: &SnapshotSet, reg: &Regularization) -> Result<LossBreakdown> {
    reg.validate()?;
    let residual = if snap.is_empty() {
        0.0
    } else {
        forward(model, snap)?.residual.frobenius_norm()
    };
    let (spectral, _) = penalties(model, reg)?;
    breakdown(residual, spectral, reg.lambda_sparsity * model.network_l1())
}

/// Objective and its gradient with respect to
/// [`KoopmanModel::params`]. The residual norm uses the zero subgradient at
/// an exact fit (to rounding), ReLU the zero subgradient at a zero pre-activation and the
/// ℓ₁ term `sign(θ)` with `sign(0) = 0`.
pub fn gradients(model: &KoopmanModel, snap: &SnapshotSet, reg: &Regularization) -> Result<(LossBreakdown, Vec<f64>)> {
    reg.validate()?;
    if snap.is_empty() {
        return Err(Error::EmptySnapshots);
    }
    let fw = forward(model, snap)?;
    let rnorm = fw.residual.frobenius_norm();
    let (spectral, spectral_sub) = penalties(model, reg)?;
    let l1 = breakdown(rnorm, spectral, reg.lambda_sparsity * model.network_l1())?;

    let mut grad = vec![0.0; model.n_params()];
    // dL/dR for the un-squared norm. A residual at rounding level counts as
    // an exact fit, where the zero subgradient applies.
    let exact = rnorm <= 64.0 * f64::EPSILON * fw.lx_f.values.frobenius_norm();
    let g = if !exact {
        fw.residual.scale(1.0 / rnorm)
    } else {
        Matrix::zeros(fw.residual.rows(), fw.residual.cols())
    };

    // Operator blocks: dL/dK = −G·Ψᵀ.
    let mut blocks: Vec<Matrix> = vec![g.matmul_t(&fw.lx_p.values).scale(-1.0)];
    if let Some(m) = &fw.mixed {
        blocks.push(g.matmul_t(&m.values).scale(-1.0));
    }
    blocks.push(g.matmul_t(&fw.lu.values).scale(-1.0));
    if let Some(sub) = &spectral_sub {
        let mut at = 0;
        for b in &mut blocks {
            let c = b.cols();
            b.add_assign_scaled(&sub.column_range(at..at + c), reg.lambda_spectral);
            at += c;
        }
    }
    let mut at = 0;
    for b in &blocks {
        let len = b.as_slice().len();
        grad[at..at + len].copy_from_slice(b.as_slice());
        at += len;
    }

    // Lifted-coordinate gradients.
    let mut d_lx_p = model.k_x().t_matmul(&g).scale(-1.0);
    let mut d_lu = model.k_u().t_matmul(&g).scale(-1.0);
    let d_mixed = model.k_xu().map(|k| k.t_matmul(&g).scale(-1.0));
    if let (Some(MixedLifting::Dictionary), Some(dm)) = (model.psi_xu(), &d_mixed) {
        let (n_l, m_l) = (model.n_l(), model.m_l());
        let (px, pu) = (&fw.lx_p.values, &fw.lu.values);
        for i in 0..n_l {
            for j in 0..m_l {
                let dmr = dm.row(i * m_l + j);
                for c in 0..dmr.len() {
                    d_lx_p[(i, c)] += dmr[c] * pu[(j, c)];
                    d_lu[(j, c)] += dmr[c] * px[(i, c)];
                }
            }
        }
    }

    // Networks, in parameter order: state, input, mixed.
    let n = model.state_dim();
    let m = model.input_dim();
    let mut offset = model.n_operator_params();
    if let Some(net) = model.psi_x().net() {
        let len = net.n_params();
        let slot = &mut grad[offset..offset + len];
        let rows = n..model.n_l();
        net.backward(
            fw.lx_f.cache.as_ref().expect("network lift"),
            &g.row_range(rows.clone()),
            slot,
        );
        net.backward(
            fw.lx_p.cache.as_ref().expect("network lift"),
            &d_lx_p.row_range(rows),
            slot,
        );
        offset += len;
    }
    if let Some(net) = model.psi_u().net() {
        let len = net.n_params();
        let rows = m..model.m_l();
        net.backward(
            fw.lu.cache.as_ref().expect("network lift"),
            &d_lu.row_range(rows),
            &mut grad[offset..offset + len],
        );
        offset += len;
    }
    if let (Some(MixedLifting::Learned { net }), Some(dm), Some(mixed)) = (model.psi_xu(), &d_mixed, &fw.mixed) {
        let len = net.n_params();
        net.backward(
            mixed.cache.as_ref().expect("network lift"),
            dm,
            &mut grad[offset..offset + len],
        );
        offset += len;
    }
    debug_assert_eq!(offset, grad.len());

    if reg.lambda_sparsity > 0.0 {
        let params = model.params();
        let start = model.n_operator_params();
        for (gv, p) in grad[start..].iter_mut().zip(&params[start..]) {
            if *p != 0.0 {
                *gv += reg.lambda_sparsity * p.signum();
            }
        }
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("loss gradient".into()));
    }
    Ok((l1, grad))
}

/// Hidden-unit on/off pattern of every network over `snap`, used to tell
/// whether a perturbation crossed a ReLU kink.
pub fn activation_pattern(model: &KoopmanModel, snap: &SnapshotSet) -> Vec<bool> {
    let mut out = Vec::new();
    if let Some(net) = model.psi_x().net() {
        net.activation_pattern(snap.x_f(), &mut out);
        net.activation_pattern(snap.x_p(), &mut out);
    }
    if let Some(net) = model.psi_u().net() {
        net.activation_pattern(snap.u_p(), &mut out);
    }
    if let Some(MixedLifting::Learned { net }) = model.psi_xu() {
        net.activation_pattern(&Matrix::vstack(&[snap.x_p(), snap.u_p()]), &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deepdmd::net::FeedforwardNet;
    use crate::dmdc::fit_dmdc;
    use crate::numerics::{Trajectory, DEFAULT_RANK_TOL};
    use crate::systems::assemble_snapshots;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(seed: u64, n_cols: usize) -> SnapshotSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut col = |k| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let xp: Vec<Vec<f64>> = (0..n_cols).map(|_| col(2)).collect();
        let xf: Vec<Vec<f64>> = (0..n_cols).map(|_| col(2)).collect();
        let up: Vec<Vec<f64>> = (0..n_cols).map(|_| col(1)).collect();
        SnapshotSet::new(
            Matrix::from_columns(2, &xp).unwrap(),
            Matrix::from_columns(2, &xf).unwrap(),
            Matrix::from_columns(1, &up).unwrap(),
            Vec::new(),
        )
        .unwrap()
    }

    fn model(mixed: u8, seed: u64) -> KoopmanModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nx = FeedforwardNet::init(&[2, 6, 3], &mut rng).unwrap();
        let nu = FeedforwardNet::init(&[1, 4, 2], &mut rng).unwrap();
        let (psi_xu, md) = match mixed {
            0 => (None, 0),
            1 => (Some(MixedLifting::Dictionary), 15),
            _ => (
                Some(MixedLifting::Learned {
                    net: FeedforwardNet::init(&[3, 5, 4], &mut rng).unwrap(),
                }),
                4,
            ),
        };
        let mut k = |r, c| Matrix::from_fn(r, c, |_, _| rng.random_range(-0.4..0.4));
        let (kx, ku) = (k(5, 5), k(5, 3));
        let kxu = (md > 0).then(|| k(5, md));
        KoopmanModel::new(
            Lifting::Network { net: nx },
            Lifting::Network { net: nu },
            psi_xu,
            kx,
            kxu,
            ku,
        )
        .unwrap()
    }

    fn fd_check(m: &KoopmanModel, snap: &SnapshotSet, reg: &Regularization) {
        let (_, g) = gradients(m, snap, reg).unwrap();
        let p = m.params();
        let base_pattern = activation_pattern(m, snap);
        let h = 1e-6;
        let mut probe = m.clone();
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i] = p[i] + h;
            probe.set_params(&q).unwrap();
            let same_plus = activation_pattern(&probe, snap) == base_pattern;
            let lp = loss(&probe, snap, reg).unwrap().total;
            q[i] = p[i] - h;
            probe.set_params(&q).unwrap();
            let same_minus = activation_pattern(&probe, snap) == base_pattern;
            let lm = loss(&probe, snap, reg).unwrap().total;
            // ℓ₁ kinks at zero are excluded the same way.
            if !(same_plus && same_minus) || (reg.lambda_sparsity > 0.0 && p[i].abs() < h) {
                continue;
            }
            let fd = (lp - lm) / (2.0 * h);
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: analytic {} vs fd {fd}", g[i]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_for_each_mixed_mode() {
        let snap = data(7, 40);
        let reg = Regularization {
            lambda_spectral: 0.3,
            lambda_sparsity: 0.01,
        };
        for mixed in 0..3 {
            fd_check(&model(mixed, 11 + mixed as u64), &snap, &reg);
            fd_check(&model(mixed, 21 + mixed as u64), &snap, &Regularization::default());
        }
    }

    #[test]
    fn exact_linear_fit_has_zero_loss_and_gradient() {
        let mut xs = vec![vec![1.0, -0.5]];
        let mut us = Vec::new();
        for k in 0..20 {
            let u = ((k * 37) % 11) as f64 / 11.0 - 0.5;
            let x = &xs[k];
            xs.push(vec![0.9 * x[0] + 0.1 * x[1] + u, -0.2 * x[0] + 0.7 * x[1]]);
            us.push(vec![u]);
        }
        let snap = assemble_snapshots(&[Trajectory::new(0.1, xs, us).unwrap()]).unwrap();
        let m = KoopmanModel::from_linear(&fit_dmdc(&snap, DEFAULT_RANK_TOL).unwrap()).unwrap();
        let (l, g) = gradients(&m, &snap, &Regularization::default()).unwrap();
        assert!(l.total < 1e-12);
        assert!(g.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn penalty_terms_behave() {
        let m = model(2, 3);
        let empty = SnapshotSet::empty(2, 1);
        let reg = Regularization {
            lambda_spectral: 0.5,
            lambda_sparsity: 0.25,
        };
        let l = loss(&m, &empty, &reg).unwrap();
        assert_eq!(l.residual, 0.0);
        assert_eq!(l.total, l.spectral + l.sparsity);
        let doubled = loss(
            &m,
            &empty,
            &Regularization {
                lambda_sparsity: 0.5,
                ..reg
            },
        )
        .unwrap();
        assert!((doubled.sparsity - 2.0 * l.sparsity).abs() < 1e-12 * l.sparsity);
        assert!(gradients(&m, &empty, &reg).is_err());
        assert!(loss(
            &m,
            &empty,
            &Regularization {
                lambda_spectral: -1.0,
                ..reg
            }
        )
        .is_err());
    }
}
