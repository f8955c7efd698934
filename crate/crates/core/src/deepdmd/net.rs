use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Dense network with ReLU hidden layers and a linear output layer.
///
/// Inputs pass through a fixed affine normalization `(v − shift) ⊙ scale`
/// before the first layer. The normalization is set from training data and
/// is not trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNet")]
pub struct FeedforwardNet {
    widths: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
}

#[derive(Deserialize)]
struct RawNet {
    widths: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
}

impl TryFrom<RawNet> for FeedforwardNet {
    type Error = Error;

    fn try_from(r: RawNet) -> Result<Self> {
        Self::new(r.widths, r.weights, r.biases)?.with_normalization(r.input_shift, r.input_scale)
    }
}

/// Intermediate values kept from a batched forward pass for the backward
/// pass. `inputs[l]` is the input to layer `l`, one column per sample.
pub(crate) struct NetCache {
    inputs: Vec<Matrix>,
}

impl FeedforwardNet {
    pub fn new(widths: Vec<usize>, weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if widths.len() < 2 || weights.len() != widths.len() - 1 || biases.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "{} widths need {} weight matrices and bias vectors, got {} and {}",
                widths.len(),
                widths.len().saturating_sub(1),
                weights.len(),
                biases.len()
            )));
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.shape() != (widths[l + 1], widths[l]) || b.len() != widths[l + 1] {
                return Err(Error::Dimension(format!(
                    "layer {l}: expected {}×{} weights and {} biases, got {:?} and {}",
                    widths[l + 1],
                    widths[l],
                    widths[l + 1],
                    w.shape(),
                    b.len()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("bias of layer {l}")));
            }
        }
        let d = widths[0];
        Ok(Self {
            widths,
            weights,
            biases,
            input_shift: vec![0.0; d],
            input_scale: vec![1.0; d],
        })
    }

    /// All weights and biases zero.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        let weights = widths.windows(2).map(|w| Matrix::zeros(w[1], w[0])).collect();
        let biases = widths[1..].iter().map(|&w| vec![0.0; w]).collect();
        Self::new(widths.to_vec(), weights, biases)
    }

    /// Weights and biases uniform in `±1/√fan_in`, the usual default for
    /// dense layers.
    pub fn init(widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        for (w, b) in net.weights.iter_mut().zip(&mut net.biases) {
            let bound = 1.0 / (w.cols() as f64).sqrt();
            for v in w.as_mut_slice().iter_mut().chain(b.iter_mut()) {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn with_normalization(mut self, shift: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if shift.len() != self.input_dim() || scale.len() != self.input_dim() {
            return Err(Error::Dimension(
                "normalization length differs from the input width".into(),
            ));
        }
        if shift.iter().chain(&scale).any(|v| !v.is_finite()) || scale.contains(&0.0) {
            return Err(Error::Config("normalization must be finite with nonzero scale".into()));
        }
        self.input_shift = shift;
        self.input_scale = scale;
        Ok(self)
    }

    /// Normalization mapping each row of `data` (features × samples) to zero
    /// mean and unit standard deviation; constant rows get scale 1.
    pub fn standardize_from(self, data: &Matrix) -> Result<Self> {
        let (shift, scale) = standardization(data);
        self.with_normalization(shift, scale)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Flat parameters, layer by layer: weights row-major, then biases.
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
    }

    /// Reads parameters in [`write_params`](Self::write_params) order and
    /// returns how many were consumed.
    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let nw = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&src[at..at + nw]);
            at += nw;
            let nb = b.len();
            b.copy_from_slice(&src[at..at + nb]);
            at += nb;
        }
        at
    }

    pub fn l1_norm(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| w.as_slice().iter().map(|v| v.abs()).sum::<f64>())
            .chain(self.biases.iter().map(|b| b.iter().map(|v| v.abs()).sum::<f64>()))
            .sum()
    }

    pub fn forward(&self, v: &[f64]) -> Vec<f64> {
        let mut a: Vec<f64> = v
            .iter()
            .zip(&self.input_shift)
            .zip(&self.input_scale)
            .map(|((x, s), k)| (x - s) * k)
            .collect();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.matvec(&a);
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
                if l < last && *zi <= 0.0 {
                    *zi = 0.0;
                }
            }
            a = z;
        }
        a
    }

    /// Forward pass over the columns of `x`.
    pub fn forward_batch(&self, x: &Matrix) -> Matrix {
        self.forward_cached(x).1
    }

    pub(crate) fn forward_cached(&self, x: &Matrix) -> (NetCache, Matrix) {
        let mut a = x.clone();
        for r in 0..a.rows() {
            let (s, k) = (self.input_shift[r], self.input_scale[r]);
            for v in a.row_mut(r) {
                *v = (*v - s) * k;
            }
        }
        let mut inputs = Vec::with_capacity(self.weights.len());
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.matmul(&a);
            for (r, &br) in b.iter().enumerate() {
                for v in z.row_mut(r) {
                    *v += br;
                    if l < last && *v <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            inputs.push(std::mem::replace(&mut a, z));
        }
        (NetCache { inputs }, a)
    }

    /// Accumulates parameter gradients into `grad` (in `write_params` order)
    /// given the gradient of a scalar with respect to the outputs. ReLU uses
    /// the subgradient 0 at a zero pre-activation.
    pub(crate) fn backward(&self, cache: &NetCache, d_out: &Matrix, grad: &mut [f64]) {
        let offsets: Vec<usize> = self
            .widths
            .windows(2)
            .scan(0, |acc, w| {
                let at = *acc;
                *acc += w[1] * (w[0] + 1);
                Some(at)
            })
            .collect();
        let mut dz = d_out.clone();
        for l in (0..self.weights.len()).rev() {
            let a_in = &cache.inputs[l];
            let dw = dz.matmul_t(a_in);
            let at = offsets[l];
            let nw = dw.as_slice().len();
            for (g, d) in grad[at..at + nw].iter_mut().zip(dw.as_slice()) {
                *g += d;
            }
            for r in 0..dz.rows() {
                grad[at + nw + r] += dz.row(r).iter().sum::<f64>();
            }
            if l > 0 {
                let mut da = self.weights[l].t_matmul(&dz);
                for (d, &a) in da.as_mut_slice().iter_mut().zip(a_in.as_slice()) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
                dz = da;
            }
        }
    }

    /// True where a hidden unit is active, for every layer and sample.
    pub(crate) fn activation_pattern(&self, x: &Matrix, out: &mut Vec<bool>) {
        let (cache, _) = self.forward_cached(x);
        for a in &cache.inputs[1..] {
            out.extend(a.as_slice().iter().map(|&v| v > 0.0));
        }
    }
}

/// Per-row mean and inverse standard deviation of `data`.
pub(crate) fn standardization(data: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = data.cols().max(1) as f64;
    let mut shift = Vec::with_capacity(data.rows());
    let mut scale = Vec::with_capacity(data.rows());
    for r in 0..data.rows() {
        let row = data.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        shift.push(mean);
        scale.push(if var > 1e-24 { 1.0 / var.sqrt() } else { 1.0 });
    }
    (shift, scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_outputs_zero() {
        let net = FeedforwardNet::zeros(&[3, 4, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_hidden_layer_clips_negatives() {
        let net = FeedforwardNet::new(
            vec![2, 2, 2],
            vec![Matrix::identity(2), Matrix::identity(2)],
            vec![vec![0.0; 2], vec![0.0; 2]],
        )
        .unwrap();
        assert_eq!(net.forward(&[1.0, -1.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn forward_is_deterministic_and_batch_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = FeedforwardNet::init(&[3, 8, 8, 4], &mut rng).unwrap();
        let v = [0.3, -1.1, 2.0];
        assert_eq!(net.forward(&v), net.forward(&v));
        let x = Matrix::from_columns(3, &[v.to_vec(), vec![1.0, 1.0, 1.0]]).unwrap();
        let batch = net.forward_batch(&x);
        for (a, b) in batch.column(0).iter().zip(net.forward(&v)) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = FeedforwardNet::init(&[2, 5, 3], &mut rng).unwrap();
        let mut flat = Vec::new();
        net.write_params(&mut flat);
        assert_eq!(flat.len(), net.n_params());
        let mut other = FeedforwardNet::zeros(&[2, 5, 3]).unwrap();
        assert_eq!(other.read_params(&flat), flat.len());
        assert_eq!(other, net);
    }

    #[test]
    fn rejects_inconsistent_layers() {
        assert!(FeedforwardNet::new(vec![2, 3], vec![Matrix::zeros(2, 3)], vec![vec![0.0; 3]]).is_err());
        assert!(FeedforwardNet::new(vec![2], vec![], vec![]).is_err());
    }
}
