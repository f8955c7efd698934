//! Incoherent feedforward loop: five proteins driven by two inducers.
//!
//! ```text
//! ẋ0 = k0·u0 / (1 + u1/Kd4) − δ0·x0
//! ẋ1 = k1·u1 / (1 + x0/Kd1) − δ1·x1
//! ẋ2 = k2·x1 + k3·u0        − δ2·x2
//! ẋ3 = k4·u1 / (1 + x2/Kd2) − δ3·x3
//! ẋ4 = k5·u0 / (1 + x3/Kd3) − δ4·x4
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IFFL_STATES: usize = 5;
pub const IFFL_INPUTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IfflParams {
    /// Production rates `k0 … k5`.
    pub k: [f64; 6],
    /// Dissociation constants `[Kd1, Kd2, Kd3, Kd4]`.
    pub kd: [f64; 4],
    /// Degradation rates `δ0 … δ4`.
    pub delta: [f64; 5],
}

impl Default for IfflParams {
    fn default() -> Self {
        Self {
            k: [1.0; 6],
            kd: [1.0; 4],
            delta: [0.5; 5],
        }
    }
}

impl IfflParams {
    pub fn validate(&self) -> Result<()> {
        if self.kd.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("IFFL Kd values must be positive: {:?}", self.kd)));
        }
        if self.delta.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!(
                "IFFL degradation rates must be positive: {:?}",
                self.delta
            )));
        }
        if self.k.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("IFFL production rates".into()));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let (k, kd, d) = (&self.k, &self.kd, &self.delta);
        dx[0] = k[0] * u[0] / (1.0 + u[1] / kd[3]) - d[0] * x[0];
        dx[1] = k[1] * u[1] / (1.0 + x[0] / kd[0]) - d[1] * x[1];
        dx[2] = k[2] * x[1] + k[3] * u[0] - d[2] * x[2];
        dx[3] = k[4] * u[1] / (1.0 + x[2] / kd[1]) - d[3] * x[3];
        dx[4] = k[5] * u[0] / (1.0 + x[3] / kd[2]) - d[4] * x[4];
    }
}

/// Right-hand side of the feedforward loop; validates parameters first.
pub fn iffl_field(x: &[f64], u: &[f64], params: &IfflParams) -> Result<Vec<f64>> {
    params.validate()?;
    if x.len() != IFFL_STATES || u.len() != IFFL_INPUTS {
        return Err(Error::Dimension(format!(
            "IFFL expects 5 states and 2 inputs, got {} and {}",
            x.len(),
            u.len()
        )));
    }
    let mut dx = vec![0.0; IFFL_STATES];
    params.eval(x, u, &mut dx);
    Ok(dx)
}
