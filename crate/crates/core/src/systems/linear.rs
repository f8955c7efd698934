use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Continuous-time linear system `ẋ = A·x + B·u`, used as exact ground truth
/// for linear identification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSystem {
    pub a: Matrix,
    pub b: Matrix,
}

impl LinearSystem {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        let s = Self { a, b };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.a.is_square() || self.b.rows() != self.a.rows() {
            return Err(Error::Dimension(format!(
                "linear system needs square A and matching B, got {:?} and {:?}",
                self.a.shape(),
                self.b.shape()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let ax = self.a.matvec(x);
        let bu = self.b.matvec(u);
        for i in 0..dx.len() {
            dx[i] = ax[i] + bu[i];
        }
    }
}

pub fn linear_test_field(x: &[f64], u: &[f64], a: &Matrix, b: &Matrix) -> Result<Vec<f64>> {
    if a.cols() != x.len() || b.cols() != u.len() || a.rows() != b.rows() {
        return Err(Error::Dimension("linear field operand shapes disagree".into()));
    }
    let mut dx = vec![0.0; a.rows()];
    let ax = a.matvec(x);
    let bu = b.matvec(u);
    for i in 0..dx.len() {
        dx[i] = ax[i] + bu[i];
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_fields() {
        let z = linear_test_field(&[1.0, 2.0], &[3.0], &Matrix::zeros(2, 2), &Matrix::zeros(2, 1));
        assert_eq!(z.unwrap(), vec![0.0, 0.0]);
        let a = Matrix::from_diag(&[-1.0]);
        let b = Matrix::identity(1);
        assert_eq!(linear_test_field(&[1.0], &[1.0], &a, &b).unwrap(), vec![0.0]);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        assert!(LinearSystem::new(Matrix::zeros(2, 3), Matrix::zeros(2, 1)).is_err());
        assert!(LinearSystem::new(Matrix::zeros(2, 2), Matrix::zeros(3, 1)).is_err());
    }
}
