//! Minibatch Adam over the joint parameters of the operators and networks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deepdmd::loss::{gradients, loss, Regularization};
use crate::deepdmd::model::{EpochLoss, KoopmanModel, Lifting, MixedLifting};
use crate::deepdmd::net::{standardization, FeedforwardNet};
use crate::error::{Error, Result};
use crate::numerics::{pseudoinverse, Matrix, DEFAULT_RANK_TOL};
use crate::observables::MonomialDictionary;
use crate::systems::SnapshotSet;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixedTerms {
    /// No mixed observables and no `K_xu`.
    #[default]
    None,
    /// Kronecker products of the lifted state and input.
    Dictionary,
    /// A separate network over `[x; u]`.
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Hidden layer widths shared by every network.
    pub hidden: Vec<usize>,
    /// Learned state observables; `n_L = n + extra_state`.
    pub extra_state: usize,
    /// Learned input observables; `m_L = m + extra_input`.
    pub extra_input: usize,
    pub mixed_terms: MixedTerms,
    /// Output width of the mixed network when `mixed_terms = learned`.
    pub mixed_observables: usize,
    pub lambda_spectral: f64,
    pub lambda_sparsity: f64,
    pub learning_rate: f64,
    /// The step size follows a cosine from `learning_rate` down to this.
    pub final_learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Start the operators at the least-squares fit for the initial networks.
    pub least_squares_init: bool,
    /// A batch loss above this aborts training.
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            extra_state: 20,
            extra_input: 5,
            mixed_terms: MixedTerms::None,
            mixed_observables: 10,
            lambda_spectral: 0.0,
            lambda_sparsity: 0.0,
            learning_rate: 1e-3,
            final_learning_rate: 1e-5,
            epochs: 2000,
            batch_size: 256,
            seed: 0,
            least_squares_init: true,
            divergence_threshold: 1e6,
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl TrainConfig {
    pub fn regularization(&self) -> Regularization {
        Regularization {
            lambda_spectral: self.lambda_spectral,
            lambda_sparsity: self.lambda_sparsity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.regularization().validate()?;
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.final_learning_rate >= 0.0 && self.final_learning_rate <= self.learning_rate) {
            return bad("final_learning_rate must lie in [0, learning_rate]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.mixed_terms == MixedTerms::Learned && self.mixed_observables == 0 {
            return bad("learned mixed terms need at least one observable");
        }
        if !(self.divergence_threshold > 0.0) {
            return bad("divergence_threshold must be positive");
        }
        Ok(())
    }

    /// Step size for a 1-based epoch.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let progress = (epoch.saturating_sub(1)) as f64 / self.epochs.max(1) as f64;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.final_learning_rate + (self.learning_rate - self.final_learning_rate) * cos
    }

    fn network(&self, input: usize, output: usize, data: &Matrix, rng: &mut ChaCha8Rng) -> Result<FeedforwardNet> {
        let mut widths = vec![input];
        widths.extend(&self.hidden);
        widths.push(output);
        let (shift, scale) = standardization(data);
        FeedforwardNet::init(&widths, rng)?.with_normalization(shift, scale)
    }

    fn lifting(&self, dim: usize, extra: usize, data: &Matrix, rng: &mut ChaCha8Rng) -> Result<Lifting> {
        if extra == 0 {
            Ok(Lifting::Monomial {
                dictionary: MonomialDictionary::identity(dim)?,
            })
        } else {
            Ok(Lifting::Network {
                net: self.network(dim, extra, data, rng)?,
            })
        }
    }

    /// Draws the networks and sets the operators, either to zero or to the
    /// least-squares fit over `train` for those networks.
    pub fn init_model(&self, train: &SnapshotSet) -> Result<KoopmanModel> {
        self.validate()?;
        if train.is_empty() {
            return Err(Error::EmptySnapshots);
        }
        let (n, m) = (train.state_dim(), train.input_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let psi_x = self.lifting(n, self.extra_state, train.x_p(), &mut rng)?;
        let psi_u = self.lifting(m, self.extra_input, train.u_p(), &mut rng)?;
        let (n_l, m_l) = (psi_x.lifted_dim(), psi_u.lifted_dim());
        let (psi_xu, mixed_dim) = match self.mixed_terms {
            MixedTerms::None => (None, 0),
            MixedTerms::Dictionary => (Some(MixedLifting::Dictionary), n_l * m_l),
            MixedTerms::Learned => {
                let xu = Matrix::vstack(&[train.x_p(), train.u_p()]);
                let net = self.network(n + m, self.mixed_observables, &xu, &mut rng)?;
                (Some(MixedLifting::Learned { net }), self.mixed_observables)
            }
        };
        let mut model = KoopmanModel::new(
            psi_x,
            psi_u,
            psi_xu,
            Matrix::zeros(n_l, n_l),
            (mixed_dim > 0).then(|| Matrix::zeros(n_l, mixed_dim)),
            Matrix::zeros(n_l, m_l),
        )?;
        if self.least_squares_init {
            let mut regressors = vec![model.psi_x().lift_batch(train.x_p())];
            let lu = model.psi_u().lift_batch(train.u_p());
            if mixed_dim > 0 {
                let cols: Vec<Vec<f64>> = (0..train.n_cols())
                    .map(|j| {
                        model
                            .lift_mixed(&train.x_p().column(j), &train.u_p().column(j))
                            .expect("mixed lifting present")
                    })
                    .collect();
                regressors.push(Matrix::from_columns(mixed_dim, &cols)?);
            }
            regressors.push(lu);
            let refs: Vec<&Matrix> = regressors.iter().collect();
            let target = model.psi_x().lift_batch(train.x_f());
            let k = target.matmul(&pseudoinverse(&Matrix::vstack(&refs), DEFAULT_RANK_TOL)?);
            // The flat order stores each block row-major in turn, so split by columns.
            let mut p = Vec::with_capacity(model.n_operator_params());
            let mut at = 0;
            for width in [n_l, mixed_dim, m_l] {
                p.extend(k.column_range(at..at + width).into_vec());
                at += width;
            }
            let mut full = model.params();
            full[..p.len()].copy_from_slice(&p);
            model.set_params(&full)?;
        }
        model.refresh_spectrum()?;
        Ok(model)
    }
}

/// Trains from a fresh [`TrainConfig::init_model`].
pub fn train(cfg: &TrainConfig, train_snaps: &SnapshotSet, val_snaps: &SnapshotSet) -> Result<KoopmanModel> {
    let model = cfg.init_model(train_snaps)?;
    train_from(cfg, model, train_snaps, val_snaps)
}

/// Runs `cfg.epochs` epochs of Adam from `model` and returns the parameters
/// with the lowest validation loss (training loss when `val_snaps` is empty).
/// Epoch 0 in the loss curve is the starting point.
pub fn train_from(
    cfg: &TrainConfig,
    mut model: KoopmanModel,
    train_snaps: &SnapshotSet,
    val_snaps: &SnapshotSet,
) -> Result<KoopmanModel> {
    cfg.validate()?;
    if train_snaps.is_empty() {
        return Err(Error::EmptySnapshots);
    }
    let reg = cfg.regularization();
    let score = |m: &KoopmanModel, train_loss: f64| -> Result<f64> {
        if val_snaps.is_empty() {
            Ok(train_loss)
        } else {
            Ok(loss(m, val_snaps, &reg)?.total)
        }
    };

    let initial = loss(&model, train_snaps, &reg)?.total;
    let initial_val = score(&model, initial)?;
    let mut curve = vec![EpochLoss {
        epoch: 0,
        train_loss: initial,
        val_loss: initial_val,
    }];
    let mut best = (initial_val, 0, model.params());

    let mut params = model.params();
    let mut m1 = vec![0.0; params.len()];
    let mut m2 = vec![0.0; params.len()];
    let mut t = 0i32;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5ee_d0fb_a7c4);
    let mut order: Vec<usize> = (0..train_snaps.n_cols()).collect();

    for epoch in 1..=cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut residual_sq = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_snaps.select(idx);
            let (l, g) = match gradients(&model, &batch, &reg) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => {
                    return Err(Error::Diverged {
                        epoch,
                        batch: b,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            if l.total > cfg.divergence_threshold {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: l.total,
                });
            }
            residual_sq += l.residual * l.residual;
            t += 1;
            let c1 = 1.0 - BETA1.powi(t);
            let c2 = 1.0 - BETA2.powi(t);
            for i in 0..params.len() {
                m1[i] = BETA1 * m1[i] + (1.0 - BETA1) * g[i];
                m2[i] = BETA2 * m2[i] + (1.0 - BETA2) * g[i] * g[i];
                params[i] -= lr * (m1[i] / c1) / ((m2[i] / c2).sqrt() + ADAM_EPS);
            }
            model.set_params(&params).map_err(|_| Error::Diverged {
                epoch,
                batch: b,
                loss: f64::NAN,
            })?;
        }
        // Residual over the whole epoch, plus the penalties at its end.
        let penalties = loss(&model, &SnapshotSet::empty(model.state_dim(), model.input_dim()), &reg)?.total;
        let train_loss = residual_sq.sqrt() + penalties;
        let val_loss = score(&model, train_loss)?;
        curve.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, params.clone());
        }
    }

    model.set_params(&best.2)?;
    model.refresh_spectrum()?;
    model.metadata.seed = cfg.seed;
    model.metadata.lambda_spectral = cfg.lambda_spectral;
    model.metadata.lambda_sparsity = cfg.lambda_sparsity;
    model.metadata.loss_curve = curve;
    model.metadata.best_epoch = best.1;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmdc::fit_dmdc;
    use crate::numerics::Trajectory;
    use crate::systems::assemble_snapshots;

    fn scalar_snaps(seed: usize) -> SnapshotSet {
        let mut trajs = Vec::new();
        for r in 0..4 {
            let mut xs = vec![vec![1.0 - 0.4 * r as f64]];
            let mut us = Vec::new();
            for k in 0..25 {
                let u = (((k + seed) * 31 + r * 7) % 17) as f64 / 17.0 - 0.5;
                let noise = (((k * 13 + r * 5 + seed) % 11) as f64 - 5.0) * 1e-3;
                xs.push(vec![0.8 * xs[k][0] + 0.3 * u + noise]);
                us.push(vec![u]);
            }
            trajs.push(Trajectory::new(0.1, xs, us).unwrap());
        }
        assemble_snapshots(&trajs).unwrap()
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.learning_rate_at(1), 1e-3);
        assert!(cfg.learning_rate_at(10) < 1e-4);
        assert!(cfg.learning_rate_at(10) >= cfg.final_learning_rate);
    }

    #[test]
    fn reduces_to_dmdc_without_extra_observables() {
        let snaps = scalar_snaps(0);
        let dmdc = fit_dmdc(&snaps, DEFAULT_RANK_TOL).unwrap();
        for least_squares_init in [true, false] {
            let cfg = TrainConfig {
                extra_state: 0,
                extra_input: 0,
                epochs: 3000,
                batch_size: snaps.n_cols(),
                learning_rate: 1e-2,
                final_learning_rate: 1e-6,
                least_squares_init,
                ..TrainConfig::default()
            };
            let m = train(&cfg, &snaps, &SnapshotSet::empty(1, 1)).unwrap();
            let err = m.k_x().sub(&dmdc.a).frobenius_norm() + m.k_u().sub(&dmdc.b).frobenius_norm();
            assert!(err < 1e-3, "init {least_squares_init}: {err}");
        }
    }

    #[test]
    fn seeded_runs_repeat_and_never_lose_to_the_start() {
        let snaps = scalar_snaps(1);
        let cfg = TrainConfig {
            hidden: vec![8],
            extra_state: 3,
            extra_input: 2,
            mixed_terms: MixedTerms::Learned,
            mixed_observables: 2,
            epochs: 15,
            batch_size: 16,
            seed: 9,
            least_squares_init: false,
            ..TrainConfig::default()
        };
        let val = scalar_snaps(2);
        let a = train(&cfg, &snaps, &val).unwrap();
        let b = train(&cfg, &snaps, &val).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(a.metadata.loss_curve, b.metadata.loss_curve);
        let curve = &a.metadata.loss_curve;
        assert_eq!(curve.len(), 16);
        let best = curve.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert!(best <= curve[0].val_loss);
        assert_eq!(curve[a.metadata.best_epoch].val_loss, best);
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = TrainConfig {
            hidden: vec![4],
            extra_state: 2,
            extra_input: 1,
            epochs: 5,
            learning_rate: 1e3,
            final_learning_rate: 1e3,
            divergence_threshold: 10.0,
            least_squares_init: false,
            ..TrainConfig::default()
        };
        let snaps = scalar_snaps(0);
        assert!(matches!(
            train(&cfg, &snaps, &SnapshotSet::empty(1, 1)),
            Err(Error::Diverged { .. })
        ));
    }
}
