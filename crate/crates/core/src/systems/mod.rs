//! Benchmark vector fields and the data-generation protocol.

mod dataset;
mod iffl;
pub mod io;
mod linear;
mod promoter;

pub use dataset::{
    assemble_snapshots, generate_dataset, train_test_split, DatasetSpec, InputKind, InputSignal, SnapshotSet,
    SnapshotSpan, Split, UniformBox,
};
pub use iffl::{iffl_field, IfflParams, IFFL_INPUTS, IFFL_STATES};
pub use linear::{linear_test_field, LinearSystem};
pub use promoter::{comb_promoter_field, PromoterParams, PROMOTER_INPUTS, PROMOTER_STATES};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::VectorField;

/// A simulator the pipeline can drive, with its constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case")]
pub enum SystemSpec {
    Iffl(IfflParams),
    #[serde(rename = "promoter")]
    CombPromoter(PromoterParams),
    Linear(LinearSystem),
}

impl SystemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Iffl(_) => "iffl",
            Self::CombPromoter(_) => "promoter",
            Self::Linear(_) => "linear",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Iffl(p) => p.validate(),
            Self::CombPromoter(p) => p.validate(),
            Self::Linear(s) => s.validate(),
        }
    }
}

impl VectorField for SystemSpec {
    fn state_dim(&self) -> usize {
        match self {
            Self::Iffl(_) => IFFL_STATES,
            Self::CombPromoter(_) => PROMOTER_STATES,
            Self::Linear(s) => s.a.rows(),
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            Self::Iffl(_) => IFFL_INPUTS,
            Self::CombPromoter(_) => PROMOTER_INPUTS,
            Self::Linear(s) => s.b.cols(),
        }
    }

    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        match self {
            Self::Iffl(p) => p.eval(x, u, dx),
            Self::CombPromoter(p) => p.eval(x, u, dx),
            Self::Linear(s) => s.eval(x, u, dx),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_serializes_with_name_tag() {
        let s = SystemSpec::CombPromoter(PromoterParams::default());
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.starts_with(r#"{"name":"promoter","params":"#));
        let back: SystemSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        let iffl: SystemSpec = serde_json::from_str(r#"{"name":"iffl","params":{}}"#).unwrap();
        assert_eq!(iffl, SystemSpec::Iffl(IfflParams::default()));
        assert_eq!(iffl.state_dim(), 5);
    }
}
