use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected:?}, got {got:?}")]
    Dimension {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("non-finite value produced at {location}")]
    NonFinite { location: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("point z = {z:?} cannot be labelled: both discriminator outputs are below 1e-12")]
    Unlabelable { z: Vec<f64> },

    #[error("sampling plan is empty: no grid cell has positive weight")]
    EmptyPlan,

    #[error("retry budget of {attempts} attempts exhausted after accepting {accepted} of {requested} samples")]
    RetryBudgetExhausted {
        attempts: usize,
        accepted: usize,
        requested: usize,
    },

    #[error("top pair not calculable for row {row}: label has {candidates} candidate classes")]
    NotCalculable { row: usize, candidates: usize },

    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("fit failed: {0}")]
    Fit(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, expected: &[usize], got: &[usize]) -> Self {
        Error::Dimension {
            op,
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
