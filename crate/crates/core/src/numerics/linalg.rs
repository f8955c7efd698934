//! Dense decompositions: one-sided Jacobi SVD, Moore-Penrose pseudoinverse,
//! LU with partial pivoting and a 1-norm condition estimate.

use crate::error::{Error, Result};
use crate::numerics::matrix::{dot, Matrix};

/// Relative cutoff below which singular values count as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Condition-number ceiling for [`solve_linear`].
pub const DEFAULT_MAX_CONDITION: f64 = 1e10;

const MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `m = u · diag(s) · vt`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub vt: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let k = self.singular_values.len();
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for j in 0..k {
                us[(i, j)] *= self.singular_values[j];
            }
        }
        us.matmul(&self.vt)
    }

    /// Number of singular values above `rank_tol · s_max`.
    pub fn rank(&self, rank_tol: f64) -> usize {
        let cutoff = rank_tol * self.singular_values.first().copied().unwrap_or(0.0);
        self.singular_values.iter().filter(|&&s| s > cutoff && s > 0.0).count()
    }
}

pub fn svd(m: &Matrix) -> Result<Svd> {
    if m.is_empty() {
        return Err(Error::Dimension("svd of an empty matrix".into()));
    }
    if m.rows() < m.cols() {
        let t = jacobi_tall(&m.transpose())?;
        return Ok(Svd {
            u: t.vt.transpose(),
            singular_values: t.singular_values,
            vt: t.u.transpose(),
        });
    }
    jacobi_tall(m)
}

/// One-sided (Hestenes) Jacobi on a matrix with `rows >= cols`.
fn jacobi_tall(m: &Matrix) -> Result<Svd> {
    let (rows, n) = m.shape();
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let tol = f64::EPSILON * (rows as f64).max(8.0);

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::SvdNoConvergence { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = a.iter().map(|c| dot(c, c).sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let mut u = Matrix::zeros(rows, n);
    let mut vt = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        s.push(sigma);
        if sigma > 0.0 {
            for i in 0..rows {
                u[(i, k)] = a[j][i] / sigma;
            }
        }
        vt.row_mut(k).copy_from_slice(&v[j]);
    }
    Ok(Svd {
        u,
        singular_values: s,
        vt,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Pseudoinverse together with the numerical rank it was built from.
#[derive(Debug, Clone)]
pub struct Pseudoinverse {
    pub matrix: Matrix,
    pub rank: usize,
    pub singular_values: Vec<f64>,
}

impl Pseudoinverse {
    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.singular_values.len()
    }
}

pub fn pseudoinverse(m: &Matrix, rank_tol: f64) -> Result<Matrix> {
    Ok(pseudoinverse_detailed(m, rank_tol)?.matrix)
}

pub fn pseudoinverse_detailed(m: &Matrix, rank_tol: f64) -> Result<Pseudoinverse> {
    if !(rank_tol > 0.0) {
        return Err(Error::Config(format!("rank_tol must be positive, got {rank_tol}")));
    }
    let d = svd(m)?;
    let rank = d.rank(rank_tol);
    // pinv = V_r · diag(1/s) · U_rᵀ, formed as (U_r · diag(1/s) · Vt_r)ᵀ.
    let mut us = Matrix::zeros(m.rows(), rank);
    for i in 0..m.rows() {
        for k in 0..rank {
            us[(i, k)] = d.u[(i, k)] / d.singular_values[k];
        }
    }
    let vt_r = d.vt.row_range(0..rank);
    Ok(Pseudoinverse {
        matrix: us.matmul(&vt_r).transpose(),
        rank,
        singular_values: d.singular_values,
    })
}

/// LU factorization with partial pivoting, `P·A = L·U`.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
    singular: bool,
    norm1: f64,
}

impl Lu {
    pub fn new(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!(
                "LU needs a square matrix, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        let n = a.rows();
        let norm1 = (0..n)
            .map(|j| (0..n).map(|i| a[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut singular = false;
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| lu[(i, k)].abs().total_cmp(&lu[(j, k)].abs()))
                .unwrap_or(k);
            if lu[(p, k)] == 0.0 {
                singular = true;
                continue;
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        lu[(i, j)] -= f * lu[(k, j)];
                    }
                }
            }
        }
        Ok(Self {
            lu,
            perm,
            singular,
            norm1,
        })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows()
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n, "LU solve dimension mismatch");
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[(i, j)] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.lu[(i, j)] * x[j]).sum();
            x[i] = (x[i] - s) / self.lu[(i, i)];
        }
        x
    }

    pub fn solve(&self, b: &Matrix) -> Matrix {
        let cols: Vec<Vec<f64>> = (0..b.cols()).map(|j| self.solve_vec(&b.column(j))).collect();
        let mut x = Matrix::zeros(self.dim(), b.cols());
        for (j, c) in cols.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                x[(i, j)] = v;
            }
        }
        x
    }

    /// `‖A‖₁ · ‖A⁻¹‖₁`, with the inverse formed column by column. Infinite
    /// for an exactly singular factor.
    pub fn condition_1(&self) -> f64 {
        if self.singular {
            return f64::INFINITY;
        }
        let n = self.dim();
        let mut inv_norm = 0.0f64;
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve_vec(&e);
            let s: f64 = col.iter().map(|v| v.abs()).sum();
            if !s.is_finite() {
                return f64::INFINITY;
            }
            inv_norm = inv_norm.max(s);
        }
        self.norm1 * inv_norm
    }
}

/// A factorization that passed the conditioning check.
#[derive(Debug, Clone)]
pub struct CheckedLu {
    pub lu: Lu,
    pub condition: f64,
    a: Matrix,
}

impl CheckedLu {
    pub fn new(a: &Matrix, max_condition: f64) -> Result<Self> {
        let lu = Lu::new(a)?;
        let condition = lu.condition_1();
        if !(condition <= max_condition) {
            return Err(Error::NearSingular { condition });
        }
        Ok(Self {
            lu,
            condition,
            a: a.clone(),
        })
    }

    /// Solve with one step of iterative refinement.
    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let mut x = self.lu.solve_vec(b);
        let ax = self.a.matvec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let dx = self.lu.solve_vec(&r);
        x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
        x
    }
}

#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub solution: Matrix,
    pub condition: f64,
}

pub fn solve_linear(a: &Matrix, b: &Matrix) -> Result<LinearSolution> {
    solve_linear_with(a, b, DEFAULT_MAX_CONDITION)
}

/// Solves `a · x = b`, refusing systems whose 1-norm condition estimate
/// exceeds `max_condition`.
pub fn solve_linear_with(a: &Matrix, b: &Matrix, max_condition: f64) -> Result<LinearSolution> {
    if b.rows() != a.rows() {
        return Err(Error::Dimension(format!(
            "right-hand side has {} rows, system has {}",
            b.rows(),
            a.rows()
        )));
    }
    let f = CheckedLu::new(a, max_condition)?;
    let mut solution = Matrix::zeros(a.cols(), b.cols());
    for j in 0..b.cols() {
        for (i, v) in f.solve_vec(&b.column(j)).into_iter().enumerate() {
            solution[(i, j)] = v;
        }
    }
    Ok(LinearSolution {
        solution,
        condition: f.condition,
    })
}

/// Complex eigenvalues `(re, im)` of a square matrix via real Schur form.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<(f64, f64)>> {
    if !m.is_square() {
        return Err(Error::Dimension("eigenvalues of a non-square matrix".into()));
    }
    if m.rows() == 0 {
        return Ok(Vec::new());
    }
    if m.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eigenvalues of a non-finite matrix".into()));
    }
    // The unshifted-exception QR sweep can stall at machine precision on
    // nearly defective matrices; a looser deflation threshold then converges.
    for tol in [f64::EPSILON, 1e-13, 1e-11] {
        if let Some(schur) = nalgebra::linalg::Schur::try_new(m.to_nalgebra(), tol, 10_000) {
            return Ok(schur.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect());
        }
    }
    Err(Error::NonFinite(
        "Schur iteration for eigenvalues did not converge".into(),
    ))
}

/// The eigenvalue closest to 1 and its distance, if any eigenvalues exist.
pub fn closest_to_unity(eigs: &[(f64, f64)]) -> Option<((f64, f64), f64)> {
    eigs.iter()
        .map(|&(re, im)| ((re, im), (re - 1.0).hypot(im)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn svd_of_identity_and_diagonal() {
        let d = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(d.singular_values, vec![1.0, 1.0, 1.0]);
        for i in 0..3 {
            assert_eq!(d.u[(i, i)].abs(), 1.0);
            assert_eq!(d.vt[(i, i)].abs(), 1.0);
        }
        let d = svd(&Matrix::from_diag(&[3.0, 2.0, 0.0])).unwrap();
        assert_eq!(d.singular_values, vec![3.0, 2.0, 0.0]);
        let d = svd(&Matrix::from_diag(&[2.0, 0.0, 3.0])).unwrap();
        assert_eq!(d.singular_values, vec![3.0, 2.0, 0.0]);
    }

    #[test]
    fn svd_reconstructs_tall_and_wide() {
        for (r, c, seed) in [(5, 3, 1), (3, 5, 2), (40, 7, 3), (7, 400, 4), (6, 6, 5)] {
            let m = random(r, c, seed);
            let d = svd(&m).unwrap();
            assert!(rel_err(&d.reconstruct(), &m) < 1e-10, "{r}x{c}");
            assert!(d.singular_values.windows(2).all(|w| w[0] >= w[1]));
            assert!(d.singular_values.iter().all(|&s| s >= 0.0));
        }
    }

    #[test]
    fn svd_rejects_empty() {
        assert!(svd(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn pseudoinverse_examples() {
        let p = pseudoinverse(&Matrix::identity(4), DEFAULT_RANK_TOL).unwrap();
        assert!(p.sub(&Matrix::identity(4)).max_abs() < 1e-15);

        let p = pseudoinverse_detailed(&Matrix::from_diag(&[2.0, 0.0]), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(p.rank, 1);
        assert!(p.is_rank_deficient());
        assert!(p.matrix.sub(&Matrix::from_diag(&[0.5, 0.0])).max_abs() < 1e-15);

        let m = random(4, 2, 9);
        let p = pseudoinverse(&m, DEFAULT_RANK_TOL).unwrap();
        assert!(p.matmul(&m).sub(&Matrix::identity(2)).max_abs() < 1e-10);

        assert!(pseudoinverse(&m, 0.0).is_err());
    }

    #[test]
    fn moore_penrose_conditions_on_rank_deficient_input() {
        // rank 2 product of 6x2 and 2x5 factors
        let m = random(6, 2, 11).matmul(&random(2, 5, 12));
        let p = pseudoinverse_detailed(&m, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(p.rank, 2);
        let x = &p.matrix;
        assert!(m.matmul(x).matmul(&m).sub(&m).max_abs() < 1e-8);
        assert!(x.matmul(&m).matmul(x).sub(x).max_abs() < 1e-8);
        let mx = m.matmul(x);
        assert!(mx.sub(&mx.transpose()).max_abs() < 1e-8);
        let xm = x.matmul(&m);
        assert!(xm.sub(&xm.transpose()).max_abs() < 1e-8);
    }

    #[test]
    fn solve_linear_examples() {
        let b = random(3, 2, 4);
        let s = solve_linear(&Matrix::identity(3), &b).unwrap();
        assert!(s.solution.sub(&b).max_abs() < 1e-15);
        assert_eq!(s.condition, 1.0);

        let a = Matrix::from_diag(&[2.0, 4.0]);
        let b = Matrix::from_rows(&[vec![2.0], vec![8.0]]).unwrap();
        let s = solve_linear(&a, &b).unwrap();
        assert_eq!(s.solution.to_rows(), vec![vec![1.0], vec![2.0]]);
    }

    #[test]
    fn solve_linear_residual_on_random_system() {
        let a = random(6, 6, 21).add(&Matrix::identity(6).scale(3.0));
        let b = random(6, 3, 22);
        let s = solve_linear(&a, &b).unwrap();
        assert!(s.condition.is_finite() && s.condition > 1.0);
        assert!(rel_err(&a.matmul(&s.solution), &b) < 1e-9);
    }

    #[test]
    fn solve_linear_flags_near_singular() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0 + 1e-13]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert!(matches!(solve_linear(&a, &b), Err(Error::NearSingular { .. })));
        let singular = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        match solve_linear(&singular, &b) {
            Err(Error::NearSingular { condition }) => assert!(condition > 1e10),
            other => panic!("expected NearSingular, got {other:?}"),
        }
        assert!(matches!(
            solve_linear(&Matrix::zeros(2, 3), &b),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn eigenvalues_of_rotation_and_triangular() {
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let r = Matrix::from_rows(&[vec![c, -s], vec![s, c]]).unwrap().scale(0.9);
        let mut e = eigenvalues(&r).unwrap();
        e.sort_by(|a, b| a.1.total_cmp(&b.1));
        assert!((e[0].0 - 0.9 * c).abs() < 1e-12 && (e[0].1 + 0.9 * s).abs() < 1e-12);
        let t = Matrix::from_rows(&[vec![0.5, 3.0], vec![0.0, 1.0]]).unwrap();
        let ((re, _), dist) = closest_to_unity(&eigenvalues(&t).unwrap()).unwrap();
        assert!((re - 1.0).abs() < 1e-12 && dist < 1e-12);
    }
}
