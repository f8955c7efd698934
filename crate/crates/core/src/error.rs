use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("svd did not converge after {sweeps} sweeps")]
    SvdNoConvergence { sweeps: usize },

    /// Raised when `I - K` (or any solved system) is numerically singular.
    /// This is the runtime form of the "no unit eigenvalue" assumption.
    #[error("near-singular linear system (condition estimate {condition:.3e})")]
    NearSingular { condition: f64 },

    #[error("operator has eigenvalue {re}{im:+}i within {tolerance:e} of 1")]
    UnitEigenvalue { re: f64, im: f64, tolerance: f64 },

    #[error("integration produced a non-finite stage from state {state:?}")]
    NonFiniteState { state: Vec<f64> },

    #[error("integration failed at step {step}: non-finite stage from state {state:?}")]
    Integration { step: usize, state: Vec<f64> },

    #[error("trajectory {index}: {source}")]
    Dataset {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("snapshot set has no columns")]
    EmptySnapshots,

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last change {change:.3e})")]
    FixedPoint { iterations: usize, change: f64 },

    #[error("constraint form `{form}` unavailable: {reason}")]
    FormUnavailable { form: &'static str, reason: String },

    #[error("all {starts} optimizer starts failed; last error: {last}")]
    Unsolvable { starts: usize, last: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
