use serde::{Deserialize, Serialize};

use crate::deepdmd::net::FeedforwardNet;
use crate::dmdc::LinearModel;
use crate::error::{Error, Result};
use crate::numerics::{eigenvalues, linalg::closest_to_unity, Matrix};
use crate::observables::{kron, MonomialDictionary};

/// Eigenvalues of `K_x` closer than this to 1 are flagged.
pub const UNIT_EIGENVALUE_TOL: f64 = 1e-6;

/// An inclusive observable map `v ↦ [v; φ(v)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Lifting {
    /// Monomials of the raw coordinates; degree one is the identity.
    Monomial { dictionary: MonomialDictionary },
    /// Raw coordinates followed by the outputs of a network.
    Network { net: FeedforwardNet },
}

impl Lifting {
    pub fn identity(dim: usize) -> Result<Self> {
        Ok(Self::Monomial {
            dictionary: MonomialDictionary::identity(dim)?,
        })
    }

    pub fn base_dim(&self) -> usize {
        match self {
            Self::Monomial { dictionary } => dictionary.base_dim(),
            Self::Network { net } => net.input_dim(),
        }
    }

    pub fn lifted_dim(&self) -> usize {
        match self {
            Self::Monomial { dictionary } => dictionary.lifted_dim(),
            Self::Network { net } => net.input_dim() + net.output_dim(),
        }
    }

    pub fn net(&self) -> Option<&FeedforwardNet> {
        match self {
            Self::Network { net } => Some(net),
            Self::Monomial { .. } => None,
        }
    }

    pub(crate) fn net_mut(&mut self) -> Option<&mut FeedforwardNet> {
        match self {
            Self::Network { net } => Some(net),
            Self::Monomial { .. } => None,
        }
    }

    pub fn lift(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Self::Monomial { dictionary } => dictionary.eval(v),
            Self::Network { net } => {
                let mut out = v.to_vec();
                out.extend(net.forward(v));
                out
            }
        }
    }

    /// Lifts every column of `x`.
    pub fn lift_batch(&self, x: &Matrix) -> Matrix {
        match self {
            Self::Monomial { dictionary } => {
                let cols: Vec<Vec<f64>> = (0..x.cols()).map(|j| dictionary.eval(&x.column(j))).collect();
                Matrix::from_columns(dictionary.lifted_dim(), &cols).expect("finite monomials of finite data")
            }
            Self::Network { net } => Matrix::vstack(&[x, &net.forward_batch(x)]),
        }
    }
}

/// How mixed state-input observables are formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MixedLifting {
    /// `ψ_x(x) ⊗ ψ_u(u)`, state-major. Separable by construction.
    Dictionary,
    /// A network over the stacked `[x; u]`. Not separable.
    Learned { net: FeedforwardNet },
}

/// Training provenance stored with a model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub seed: u64,
    pub lambda_spectral: f64,
    pub lambda_sparsity: f64,
    pub loss_curve: Vec<EpochLoss>,
    pub best_epoch: usize,
    /// Eigenvalues of `K_x` as `(re, im)`.
    pub kx_eigenvalues: Vec<(f64, f64)>,
    /// Distance from 1 of the closest eigenvalue of `K_x`.
    pub unit_eigenvalue_distance: f64,
    pub near_unit_eigenvalue: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Lifted linear model
/// `ψ_x(x⁺) = K_x·ψ_x(x) + K_xu·ψ_xu(x, u) + K_u·ψ_u(u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct KoopmanModel {
    psi_x: Lifting,
    psi_u: Lifting,
    psi_xu: Option<MixedLifting>,
    k_x: Matrix,
    k_xu: Option<Matrix>,
    k_u: Matrix,
    pub metadata: ModelMetadata,
}

impl KoopmanModel {
    pub fn new(
        psi_x: Lifting,
        psi_u: Lifting,
        psi_xu: Option<MixedLifting>,
        k_x: Matrix,
        k_xu: Option<Matrix>,
        k_u: Matrix,
    ) -> Result<Self> {
        let mut m = Self {
            psi_x,
            psi_u,
            psi_xu,
            k_x,
            k_xu,
            k_u,
            metadata: ModelMetadata::default(),
        };
        m.validate()?;
        m.refresh_spectrum()?;
        Ok(m)
    }

    /// Identity observables and no mixed terms: `K_x = A`, `K_u = B`.
    pub fn from_linear(model: &LinearModel) -> Result<Self> {
        Self::new(
            Lifting::identity(model.state_dim())?,
            Lifting::identity(model.input_dim())?,
            None,
            model.a.clone(),
            None,
            model.b.clone(),
        )
    }

    fn validate(&self) -> Result<()> {
        let (n_l, m_l) = (self.n_l(), self.m_l());
        if self.k_x.shape() != (n_l, n_l) || self.k_u.shape() != (n_l, m_l) {
            return Err(Error::Dimension(format!(
                "K_x {:?} and K_u {:?} do not match n_L = {n_l}, m_L = {m_l}",
                self.k_x.shape(),
                self.k_u.shape()
            )));
        }
        match (&self.psi_xu, &self.k_xu) {
            (None, None) => {}
            (Some(mixed), Some(k)) => {
                if let MixedLifting::Learned { net } = mixed {
                    if net.input_dim() != self.state_dim() + self.input_dim() {
                        return Err(Error::Dimension("mixed network must take [x; u]".into()));
                    }
                }
                if k.shape() != (n_l, self.mixed_dim()) {
                    return Err(Error::Dimension(format!(
                        "K_xu is {:?}, expected {n_l}×{}",
                        k.shape(),
                        self.mixed_dim()
                    )));
                }
            }
            _ => {
                return Err(Error::Config(
                    "mixed observables and K_xu must be present together".into(),
                ))
            }
        }
        Ok(())
    }

    /// Recomputes the eigenvalues of `K_x` stored in the metadata.
    pub fn refresh_spectrum(&mut self) -> Result<()> {
        let eigs = eigenvalues(&self.k_x)?;
        let dist = closest_to_unity(&eigs).map_or(f64::INFINITY, |(_, d)| d);
        self.metadata.kx_eigenvalues = eigs;
        self.metadata.unit_eigenvalue_distance = dist;
        self.metadata.near_unit_eigenvalue = dist < UNIT_EIGENVALUE_TOL;
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.psi_x.base_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.psi_u.base_dim()
    }

    pub fn n_l(&self) -> usize {
        self.psi_x.lifted_dim()
    }

    pub fn m_l(&self) -> usize {
        self.psi_u.lifted_dim()
    }

    /// Number of mixed observables, 0 when absent.
    pub fn mixed_dim(&self) -> usize {
        match &self.psi_xu {
            None => 0,
            Some(MixedLifting::Dictionary) => self.n_l() * self.m_l(),
            Some(MixedLifting::Learned { net }) => net.output_dim(),
        }
    }

    pub fn psi_x(&self) -> &Lifting {
        &self.psi_x
    }

    pub fn psi_u(&self) -> &Lifting {
        &self.psi_u
    }

    pub fn psi_xu(&self) -> Option<&MixedLifting> {
        self.psi_xu.as_ref()
    }

    pub fn k_x(&self) -> &Matrix {
        &self.k_x
    }

    pub fn k_xu(&self) -> Option<&Matrix> {
        self.k_xu.as_ref()
    }

    pub fn k_u(&self) -> &Matrix {
        &self.k_u
    }

    pub fn lift_state(&self, x: &[f64]) -> Vec<f64> {
        self.psi_x.lift(x)
    }

    pub fn lift_input(&self, u: &[f64]) -> Vec<f64> {
        self.psi_u.lift(u)
    }

    pub fn lift_mixed(&self, x: &[f64], u: &[f64]) -> Option<Vec<f64>> {
        match self.psi_xu.as_ref()? {
            MixedLifting::Dictionary => Some(kron(&self.lift_state(x), &self.lift_input(u))),
            MixedLifting::Learned { net } => {
                let xu: Vec<f64> = x.iter().chain(u).copied().collect();
                Some(net.forward(&xu))
            }
        }
    }

    /// One step of the lifted model from lifted state `z`; mixed terms use
    /// the state read out of `z`.
    pub fn step_lifted(&self, z: &[f64], u: &[f64]) -> Vec<f64> {
        let psi_u = self.lift_input(u);
        let mut next = self.k_x.matvec(z);
        if let (Some(k_xu), Some(mixed)) = (&self.k_xu, self.lift_mixed(&z[..self.state_dim()], u)) {
            for (n, v) in next.iter_mut().zip(k_xu.matvec(&mixed)) {
                *n += v;
            }
        }
        for (n, v) in next.iter_mut().zip(self.k_u.matvec(&psi_u)) {
            *n += v;
        }
        next
    }

    /// `[K_x K_xu K_u]`.
    pub fn stacked_operator(&self) -> Matrix {
        match &self.k_xu {
            Some(k_xu) => Matrix::hstack(&[&self.k_x, k_xu, &self.k_u]),
            None => Matrix::hstack(&[&self.k_x, &self.k_u]),
        }
    }

    fn nets(&self) -> [Option<&FeedforwardNet>; 3] {
        let mixed = match &self.psi_xu {
            Some(MixedLifting::Learned { net }) => Some(net),
            _ => None,
        };
        [self.psi_x.net(), self.psi_u.net(), mixed]
    }

    pub(crate) fn nets_mut(&mut self) -> [Option<&mut FeedforwardNet>; 3] {
        let mixed = match &mut self.psi_xu {
            Some(MixedLifting::Learned { net }) => Some(net),
            _ => None,
        };
        [self.psi_x.net_mut(), self.psi_u.net_mut(), mixed]
    }

    pub fn n_operator_params(&self) -> usize {
        self.k_x.as_slice().len() + self.k_xu.as_ref().map_or(0, |k| k.as_slice().len()) + self.k_u.as_slice().len()
    }

    pub fn n_params(&self) -> usize {
        self.n_operator_params() + self.nets().iter().flatten().map(|n| n.n_params()).sum::<usize>()
    }

    /// Flat parameters: `K_x`, `K_xu`, `K_u` (row-major), then the state,
    /// input and mixed networks. Network parameters start at
    /// [`n_operator_params`](Self::n_operator_params).
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend_from_slice(self.k_x.as_slice());
        if let Some(k) = &self.k_xu {
            out.extend_from_slice(k.as_slice());
        }
        out.extend_from_slice(self.k_u.as_slice());
        for net in self.nets().into_iter().flatten() {
            net.write_params(&mut out);
        }
        out
    }

    /// Overwrites all parameters; the stored spectrum is not refreshed.
    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "model has {} parameters, got {}",
                self.n_params(),
                p.len()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        let mut at = 0;
        for m in [Some(&mut self.k_x), self.k_xu.as_mut(), Some(&mut self.k_u)]
            .into_iter()
            .flatten()
        {
            let len = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&p[at..at + len]);
            at += len;
        }
        for net in self.nets_mut().into_iter().flatten() {
            at += net.read_params(&p[at..]);
        }
        Ok(())
    }

    /// `Σ|θ|` over all network weights and biases.
    pub fn network_l1(&self) -> f64 {
        self.nets().iter().flatten().map(|n| n.l1_norm()).sum()
    }
}

#[derive(Serialize, Deserialize)]
enum DeepKind {
    #[serde(rename = "deepdmd")]
    DeepDmd,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    kind: DeepKind,
    n_state: usize,
    n_input: usize,
    #[serde(rename = "n_L")]
    n_l: usize,
    #[serde(rename = "m_L")]
    m_l: usize,
    #[serde(rename = "M_L")]
    mixed_l: usize,
    psi_x: Lifting,
    psi_u: Lifting,
    psi_xu: Option<MixedLifting>,
    #[serde(rename = "K_x")]
    k_x: Matrix,
    #[serde(rename = "K_xu")]
    k_xu: Option<Matrix>,
    #[serde(rename = "K_u")]
    k_u: Matrix,
    metadata: ModelMetadata,
}

impl TryFrom<ModelFile> for KoopmanModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let m = Self {
            psi_x: f.psi_x,
            psi_u: f.psi_u,
            psi_xu: f.psi_xu,
            k_x: f.k_x,
            k_xu: f.k_xu,
            k_u: f.k_u,
            metadata: f.metadata,
        };
        m.validate()?;
        let dims = (m.state_dim(), m.input_dim(), m.n_l(), m.m_l(), m.mixed_dim());
        if dims != (f.n_state, f.n_input, f.n_l, f.m_l, f.mixed_l) {
            return Err(Error::Config(format!(
                "declared dimensions {:?} disagree with the stored maps {dims:?}",
                (f.n_state, f.n_input, f.n_l, f.m_l, f.mixed_l)
            )));
        }
        Ok(m)
    }
}

impl From<KoopmanModel> for ModelFile {
    fn from(m: KoopmanModel) -> Self {
        Self {
            kind: DeepKind::DeepDmd,
            n_state: m.state_dim(),
            n_input: m.input_dim(),
            n_l: m.n_l(),
            m_l: m.m_l(),
            mixed_l: m.mixed_dim(),
            psi_x: m.psi_x,
            psi_u: m.psi_u,
            psi_xu: m.psi_xu,
            k_x: m.k_x,
            k_xu: m.k_xu,
            k_u: m.k_u,
            metadata: m.metadata,
        }
    }
}
