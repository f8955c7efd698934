//! Monomial liftings and the mixed-term factorizations.
//!
//! Every lifting here is inclusive: the leading `base_dim` entries of a
//! lifted vector are the raw coordinates. Mixed observables are laid out
//! state-major, entry `i·m_L + j = ψ_x(x)_i · ψ_u(u)_j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// All monomials of total degree `1..=max_degree` in `base_dim` variables.
///
/// Within a degree, monomials are ordered by their largest exponent
/// (cross terms before pure powers), then lexicographically descending. For
/// two variables at degree two this gives `x1, x2, x1·x2, x1², x2²`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawDictionary")]
pub struct MonomialDictionary {
    base_dim: usize,
    max_degree: u32,
    exponents: Vec<Vec<u32>>,
}

#[derive(Deserialize)]
struct RawDictionary {
    base_dim: usize,
    max_degree: u32,
    exponents: Vec<Vec<u32>>,
}

impl TryFrom<RawDictionary> for MonomialDictionary {
    type Error = Error;

    fn try_from(raw: RawDictionary) -> Result<Self> {
        let d = Self::new(raw.base_dim, raw.max_degree)?;
        if d.exponents != raw.exponents {
            return Err(Error::Config(
                "dictionary exponent table does not match its ordering".into(),
            ));
        }
        Ok(d)
    }
}

impl MonomialDictionary {
    pub fn new(base_dim: usize, max_degree: u32) -> Result<Self> {
        if base_dim == 0 || max_degree == 0 {
            return Err(Error::Config(format!(
                "dictionary needs base_dim ≥ 1 and max_degree ≥ 1, got {base_dim} and {max_degree}"
            )));
        }
        let mut exponents = Vec::with_capacity(Self::lifted_dim_for(base_dim, max_degree));
        for degree in 1..=max_degree {
            let mut level = Vec::new();
            compositions(base_dim, degree, &mut vec![0; base_dim], 0, &mut level);
            level.sort_by(|a, b| {
                let ma = a.iter().max();
                let mb = b.iter().max();
                ma.cmp(&mb).then_with(|| b.cmp(a))
            });
            exponents.extend(level);
        }
        Ok(Self {
            base_dim,
            max_degree,
            exponents,
        })
    }

    /// Degree-one dictionary: the lifting is the identity.
    pub fn identity(base_dim: usize) -> Result<Self> {
        Self::new(base_dim, 1)
    }

    /// `C(n + d, d) − 1`.
    pub fn lifted_dim_for(base_dim: usize, max_degree: u32) -> usize {
        let d = max_degree as usize;
        let mut c: usize = 1;
        for k in 1..=d {
            c = c * (base_dim + k) / k;
        }
        c - 1
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn lifted_dim(&self) -> usize {
        self.exponents.len()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    /// Lifted values without the dimension check or wrapper.
    pub fn eval(&self, v: &[f64]) -> Vec<f64> {
        self.exponents
            .iter()
            .map(|e| {
                let mut p = 1.0;
                for (x, &k) in v.iter().zip(e) {
                    if k > 0 {
                        p *= x.powi(k as i32);
                    }
                }
                p
            })
            .collect()
    }

    /// Jacobian of the lifting at `v` (lifted_dim × base_dim).
    pub fn jacobian(&self, v: &[f64]) -> Matrix {
        Matrix::from_fn(self.lifted_dim(), self.base_dim, |r, c| {
            let e = &self.exponents[r];
            if e[c] == 0 {
                return 0.0;
            }
            let mut p = e[c] as f64 * v[c].powi(e[c] as i32 - 1);
            for (i, (x, &k)) in v.iter().zip(e).enumerate() {
                if i != c && k > 0 {
                    p *= x.powi(k as i32);
                }
            }
            p
        })
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.base_dim {
            return Err(Error::Dimension(format!(
                "dictionary over {} variables given a vector of length {}",
                self.base_dim,
                v.len()
            )));
        }
        Ok(())
    }
}

fn compositions(n: usize, remaining: u32, cur: &mut Vec<u32>, pos: usize, out: &mut Vec<Vec<u32>>) {
    if pos == n - 1 {
        cur[pos] = remaining;
        out.push(cur.clone());
        return;
    }
    for k in (0..=remaining).rev() {
        cur[pos] = k;
        compositions(n, remaining - k, cur, pos + 1, out);
    }
    cur[pos] = 0;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftSource {
    State,
    Input,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedVector {
    pub values: Vec<f64>,
    pub source: LiftSource,
}

pub fn lift(dict: &MonomialDictionary, v: &[f64], source: LiftSource) -> Result<LiftedVector> {
    dict.check(v)?;
    Ok(LiftedVector {
        values: dict.eval(v),
        source,
    })
}

/// State-major Kronecker product of two lifted vectors.
pub fn kron(psi_x: &[f64], psi_u: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(psi_x.len() * psi_u.len());
    for &a in psi_x {
        for &b in psi_u {
            out.push(a * b);
        }
    }
    out
}

pub fn lift_mixed(
    dict_x: &MonomialDictionary,
    dict_u: &MonomialDictionary,
    x: &[f64],
    u: &[f64],
) -> Result<LiftedVector> {
    dict_x.check(x)?;
    dict_u.check(u)?;
    Ok(LiftedVector {
        values: kron(&dict_x.eval(x), &dict_u.eval(u)),
        source: LiftSource::Mixed,
    })
}

/// `M_x` from an already lifted state: `n_L` stacked diagonal blocks
/// `ψ_x(x)_i · I_{m_L}`, so that `M_x · ψ_u = ψ_x ⊗ ψ_u`.
pub fn mx_from_lifted(psi_x: &[f64], m_l: usize) -> Matrix {
    let mut m = Matrix::zeros(psi_x.len() * m_l, m_l);
    for (i, &p) in psi_x.iter().enumerate() {
        for j in 0..m_l {
            m[(i * m_l + j, j)] = p;
        }
    }
    m
}

/// `M_u` from an already lifted input, arranged so that
/// `M_u · ψ_x = ψ_x ⊗ ψ_u` in the same state-major order.
pub fn mu_from_lifted(psi_u: &[f64], n_l: usize) -> Matrix {
    let m_l = psi_u.len();
    let mut m = Matrix::zeros(n_l * m_l, n_l);
    for i in 0..n_l {
        for (j, &p) in psi_u.iter().enumerate() {
            m[(i * m_l + j, i)] = p;
        }
    }
    m
}

pub fn build_mx(dict_x: &MonomialDictionary, dict_u: &MonomialDictionary, x: &[f64]) -> Result<Matrix> {
    dict_x.check(x)?;
    Ok(mx_from_lifted(&dict_x.eval(x), dict_u.lifted_dim()))
}

pub fn build_mu(dict_x: &MonomialDictionary, dict_u: &MonomialDictionary, u: &[f64]) -> Result<Matrix> {
    dict_u.check(u)?;
    Ok(mu_from_lifted(&dict_u.eval(u), dict_x.lifted_dim()))
}

/// Outcome of [`generator_separability_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub samples: usize,
    /// Largest relative gap between `Jψ(x)·W·G(u)·h(x)` and the separated
    /// form `C(x)·vec(G(u))`, where `C(x)` depends on the state only.
    pub factorization_residual: f64,
    /// Largest relative gap between the analytic generator and a central
    /// difference of `ψ_x` along the flow.
    pub generator_residual: f64,
    /// Size of the part of the generator that depends jointly on `x` and
    /// `u`. Zero means there are no mixed terms at all.
    pub interaction_magnitude: f64,
}

/// Checks, at the given `(x, u)` samples, that the time derivative of the
/// lifted state under `f(x, u) = W·G(u)·h(x)` separates into a state-only
/// matrix times a function of the input.
pub fn generator_separability_check<G, H>(
    w: &Matrix,
    g: G,
    h: H,
    dict_x: &MonomialDictionary,
    samples: &[(Vec<f64>, Vec<f64>)],
) -> Result<SeparabilityReport>
where
    G: Fn(&[f64]) -> Matrix,
    H: Fn(&[f64]) -> Vec<f64>,
{
    let Some((x_ref, u_ref)) = samples.first() else {
        return Err(Error::Config("separability check needs at least one sample".into()));
    };
    if w.rows() != dict_x.base_dim() {
        return Err(Error::Dimension(format!(
            "W has {} rows but the state has dimension {}",
            w.rows(),
            dict_x.base_dim()
        )));
    }
    let field = |x: &[f64], u: &[f64]| -> Result<Vec<f64>> {
        let gu = g(u);
        let hx = h(x);
        if gu.rows() != w.cols() || gu.cols() != hx.len() {
            return Err(Error::Dimension(format!(
                "W·G(u)·h(x) shapes disagree: {:?}, {:?}, {}",
                w.shape(),
                gu.shape(),
                hx.len()
            )));
        }
        Ok(w.matvec(&gu.matvec(&hx)))
    };
    let generator = |x: &[f64], u: &[f64]| -> Result<Vec<f64>> {
        dict_x.check(x)?;
        Ok(dict_x.jacobian(x).matvec(&field(x, u)?))
    };
    let rel = |a: &[f64], b: &[f64]| {
        let scale = b.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
        a.iter().zip(b).fold(0.0_f64, |m, (p, q)| m.max((p - q).abs())) / scale
    };

    let mut report = SeparabilityReport {
        samples: samples.len(),
        factorization_residual: 0.0,
        generator_residual: 0.0,
        interaction_magnitude: 0.0,
    };
    let base_ref_u = generator(x_ref, u_ref)?;
    for (x, u) in samples {
        let direct = generator(x, u)?;

        // C(x) has one column per entry of G; column (k, l) is (Jψ·W)_{:,k}·h_l.
        let jw = dict_x.jacobian(x).matmul(w);
        let hx = h(x);
        let gu = g(u);
        let mut separated = vec![0.0; dict_x.lifted_dim()];
        for k in 0..gu.rows() {
            for l in 0..gu.cols() {
                let coeff = gu[(k, l)];
                for (r, s) in separated.iter_mut().enumerate() {
                    *s += jw[(r, k)] * hx[l] * coeff;
                }
            }
        }
        report.factorization_residual = report.factorization_residual.max(rel(&separated, &direct));

        let f = field(x, u)?;
        let eps = 1e-5 / f.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
        let plus: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a + eps * b).collect();
        let minus: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a - eps * b).collect();
        let fd: Vec<f64> = dict_x
            .eval(&plus)
            .iter()
            .zip(dict_x.eval(&minus))
            .map(|(p, m)| (p - m) / (2.0 * eps))
            .collect();
        report.generator_residual = report.generator_residual.max(rel(&fd, &direct));

        let same_x = generator(x, u_ref)?;
        let same_u = generator(x_ref, u)?;
        for r in 0..direct.len() {
            let joint = direct[r] - same_x[r] - same_u[r] + base_ref_u[r];
            report.interaction_magnitude = report.interaction_magnitude.max(joint.abs());
        }
    }
    Ok(report)
}
