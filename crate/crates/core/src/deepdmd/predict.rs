use crate::deepdmd::model::KoopmanModel;
use crate::error::{Error, Result};
use crate::numerics::Trajectory;

/// Lifts `x0` once and iterates the lifted model for `horizon` steps,
/// reading states back from the first `n` coordinates. Returns
/// `horizon + 1` states.
pub fn multi_step_predict(
    model: &KoopmanModel,
    x0: &[f64],
    u_seq: &[Vec<f64>],
    horizon: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = model.state_dim();
    if x0.len() != n {
        return Err(Error::Dimension(format!(
            "initial state has length {}, model has {n} states",
            x0.len()
        )));
    }
    if horizon > u_seq.len() {
        return Err(Error::Dimension(format!(
            "horizon {horizon} exceeds the {} supplied inputs",
            u_seq.len()
        )));
    }
    if let Some(u) = u_seq[..horizon].iter().find(|u| u.len() != model.input_dim()) {
        return Err(Error::Dimension(format!(
            "input of length {} for a model with {} inputs",
            u.len(),
            model.input_dim()
        )));
    }
    let mut z = model.lift_state(x0);
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(z[..n].to_vec());
    for u in &u_seq[..horizon] {
        z = model.step_lifted(&z, u);
        out.push(z[..n].to_vec());
    }
    Ok(out)
}

/// Predicts `horizon` steps of `truth` from its first state and inputs and
/// returns the relative error against the matching true states.
pub fn trajectory_error(model: &KoopmanModel, truth: &Trajectory, horizon: usize) -> Result<f64> {
    let pred = multi_step_predict(model, &truth.states()[0], truth.inputs(), horizon)?;
    prediction_error(&pred, &truth.states()[..=horizon])
}

/// `‖pred − truth‖_F / ‖truth‖_F` over all samples and states.
pub fn prediction_error(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    if pred.len() != truth.len() || pred.iter().zip(truth).any(|(p, t)| p.len() != t.len()) {
        return Err(Error::Dimension("prediction and truth differ in shape".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        for (a, b) in p.iter().zip(t) {
            num += (a - b) * (a - b);
            den += b * b;
        }
    }
    if den == 0.0 {
        return Err(Error::NonFinite("relative error against an all-zero truth".into()));
    }
    Ok((num / den).sqrt())
}

/// Median of finite values; `None` for an empty slice.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(v[n / 2]),
        _ => Some(0.5 * (v[n / 2 - 1] + v[n / 2])),
    }
}
