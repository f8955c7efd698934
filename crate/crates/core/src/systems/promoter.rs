//! Combinatorial promoter: eleven binding/unbinding species with an
//! activator inducer `u0` and a repressor inducer `u1`.
//!
//! The right-hand side is taken literally from the model definition, including
//! the constant `0.2` terms in `ẋ1` and `ẋ3` and the `−δ·x9²` term in `ẋ10`.
//! Setting [`PromoterParams::promoter_decay_on_x10`] replaces the latter by
//! `−δ·x10²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROMOTER_STATES: usize = 11;
pub const PROMOTER_INPUTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromoterParams {
    /// Forward rates `k1f … k8f`.
    pub k_forward: [f64; 8],
    /// Reverse rates `k1r … k7r`.
    pub k_reverse: [f64; 7],
    pub delta: f64,
    pub promoter_decay_on_x10: bool,
}

impl Default for PromoterParams {
    fn default() -> Self {
        Self {
            k_forward: [1.0; 8],
            k_reverse: [0.5; 7],
            delta: 0.1,
            promoter_decay_on_x10: false,
        }
    }
}

impl PromoterParams {
    pub fn validate(&self) -> Result<()> {
        let rates = self.k_forward.iter().chain(&self.k_reverse);
        if rates.clone().any(|&v| !(v > 0.0 && v.is_finite())) || !(self.delta > 0.0) {
            return Err(Error::Config("promoter rate constants must be positive".into()));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let f = |i: usize| self.k_forward[i - 1];
        let r = |i: usize| self.k_reverse[i - 1];
        dx[0] = -f(1) * x[0] * u[0] + r(1) * x[2];
        dx[1] = -f(2) * x[1] * u[1] + r(2) * x[3] - f(4) * x[1] * x[4] + r(4) * x[6] - f(5) * x[1] * x[5]
            + r(5) * x[7]
            + 0.2 * x[10];
        dx[2] = f(1) * x[0] * u[0] - r(1) * x[2] - f(3) * x[2] * x[4] + r(3) * x[5] - f(6) * x[2] * x[6] + r(6) * x[7];
        dx[3] = f(2) * x[1] * u[1] - r(2) * x[3] - 0.2 * x[3];
        dx[4] = -f(3) * x[2] * x[4] + r(3) * x[5] - f(4) * x[1] * x[4] + r(4) * x[6];
        dx[5] = f(3) * x[2] * x[4] - r(3) * x[5] - f(5) * x[1] * x[5] + r(5) * x[7] - f(7) * x[5] * x[8]
            + r(7) * x[9]
            + f(8) * x[9];
        dx[6] = -f(6) * x[2] * x[6] + r(6) * x[7] - r(4) * x[6] + f(4) * x[1] * x[4];
        dx[7] = f(5) * x[1] * x[5] - r(5) * x[7] + f(6) * x[2] * x[6] - r(6) * x[7];
        dx[8] = -f(7) * x[5] * x[8] + (r(7) + f(8)) * x[9];
        dx[9] = f(7) * x[5] * x[8] - (r(7) + f(8)) * x[9];
        let decaying = if self.promoter_decay_on_x10 { x[10] } else { x[9] };
        dx[10] = f(8) * x[9] - self.delta * decaying * decaying;
    }
}

pub fn comb_promoter_field(x: &[f64], u: &[f64], params: &PromoterParams) -> Result<Vec<f64>> {
    params.validate()?;
    if x.len() != PROMOTER_STATES || u.len() != PROMOTER_INPUTS {
        return Err(Error::Dimension(format!(
            "promoter expects 11 states and 2 inputs, got {} and {}",
            x.len(),
            u.len()
        )));
    }
    let mut dx = vec![0.0; PROMOTER_STATES];
    params.eval(x, u, &mut dx);
    Ok(dx)
}
