//! Learned observables and lifted linear operators fitted jointly.

mod loss;
mod model;
mod net;
mod predict;
mod train;

use std::path::Path;

pub use loss::{activation_pattern, gradients, loss, LossBreakdown, Regularization};
pub use model::{EpochLoss, KoopmanModel, Lifting, MixedLifting, ModelMetadata, UNIT_EIGENVALUE_TOL};
pub use net::FeedforwardNet;
pub use predict::{median, multi_step_predict, prediction_error, trajectory_error};
pub use train::{train, train_from, MixedTerms, TrainConfig};

use crate::error::Result;

/// Writes `epoch,train_loss,val_loss`.
pub fn write_loss_curve(path: &Path, curve: &[EpochLoss]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for e in curve {
        w.write_record([
            e.epoch.to_string(),
            format!("{:?}", e.train_loss),
            format!("{:?}", e.val_loss),
        ])?;
    }
    w.flush()?;
    Ok(())
}
