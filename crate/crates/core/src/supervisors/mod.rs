//! Supervisor scores. Every score is oriented so that a higher value
//! marks a more suspicious input.

use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

mod dissector;
mod softmax;
mod surprise;
mod uncertainty;

pub use dissector::{dissector_score, fit_dissector, support_value, Dissector, DissectorConfig};
pub use softmax::{deepgini, entropy, max_softmax, pcs, softmax_entropy};
pub use surprise::{
    fit_surprise, surprise_score, surprise_scores, DsaPool, LsaClass, MdsaClass, SurpriseFitState, SurpriseVariant,
    COVARIANCE_RIDGE, DSA_POOL_FRACTION, LSA_VARIANCE_FLOOR,
};
pub use uncertainty::{ensemble_scores, mc_scores, uncertainty_scores, EnsembleScores, McScores};

/// The benchmarked supervisors, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Supervisor {
    MaxSoftmax,
    Pcs,
    SoftmaxEntropy,
    DeepGini,
    McDropoutVr,
    McDropoutMs,
    McDropoutMi,
    McDropoutPe,
    EnsembleMs,
    EnsembleMi,
    EnsemblePe,
    Dissector,
    Dsa,
    Lsa,
    Mdsa,
    Autoencoder,
}

impl Supervisor {
    pub const ALL: [Supervisor; 16] = [
        Supervisor::MaxSoftmax,
        Supervisor::Pcs,
        Supervisor::SoftmaxEntropy,
        Supervisor::DeepGini,
        Supervisor::McDropoutVr,
        Supervisor::McDropoutMs,
        Supervisor::McDropoutMi,
        Supervisor::McDropoutPe,
        Supervisor::EnsembleMs,
        Supervisor::EnsembleMi,
        Supervisor::EnsemblePe,
        Supervisor::Dissector,
        Supervisor::Dsa,
        Supervisor::Lsa,
        Supervisor::Mdsa,
        Supervisor::Autoencoder,
    ];

    /// Machine identifier used in files and configs.
    pub fn id(self) -> &'static str {
        match self {
            Supervisor::MaxSoftmax => "max-softmax",
            Supervisor::Pcs => "pcs",
            Supervisor::SoftmaxEntropy => "softmax-entropy",
            Supervisor::DeepGini => "deepgini",
            Supervisor::McDropoutVr => "mc-dropout-vr",
            Supervisor::McDropoutMs => "mc-dropout-ms",
            Supervisor::McDropoutMi => "mc-dropout-mi",
            Supervisor::McDropoutPe => "mc-dropout-pe",
            Supervisor::EnsembleMs => "ensemble-ms",
            Supervisor::EnsembleMi => "ensemble-mi",
            Supervisor::EnsemblePe => "ensemble-pe",
            Supervisor::Dissector => "dissector",
            Supervisor::Dsa => "dsa",
            Supervisor::Lsa => "lsa",
            Supervisor::Mdsa => "mdsa",
            Supervisor::Autoencoder => "autoencoder",
        }
    }

    /// Human-readable name for report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Supervisor::MaxSoftmax => "Max. Softmax",
            Supervisor::Pcs => "PCS",
            Supervisor::SoftmaxEntropy => "Softmax Entropy",
            Supervisor::DeepGini => "DeepGini",
            Supervisor::McDropoutVr => "MC-Dropout (VR)",
            Supervisor::McDropoutMs => "MC-Dropout (MS)",
            Supervisor::McDropoutMi => "MC-Dropout (MI)",
            Supervisor::McDropoutPe => "MC-Dropout (PE)",
            Supervisor::EnsembleMs => "Deep Ensemble (MS)",
            Supervisor::EnsembleMi => "Deep Ensemble (MI)",
            Supervisor::EnsemblePe => "Deep Ensemble (PE)",
            Supervisor::Dissector => "Dissector",
            Supervisor::Dsa => "DSA",
            Supervisor::Lsa => "LSA",
            Supervisor::Mdsa => "MDSA",
            Supervisor::Autoencoder => "Autoencoder",
        }
    }

    pub fn is_ensemble(self) -> bool {
        matches!(self, Supervisor::EnsembleMs | Supervisor::EnsembleMi | Supervisor::EnsemblePe)
    }
}

impl FromStr for Supervisor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Supervisor::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::config(alloc::format!("unknown supervisor '{s}'")))
    }
}

/// Per-input scores of one supervisor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub supervisor: String,
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn new(supervisor: Supervisor, scores: Vec<f64>) -> crate::Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite {
                location: alloc::format!("{} score for input {i}", supervisor.id()),
            });
        }
        Ok(ScoreVector {
            supervisor: supervisor.id().into(),
            scores,
        })
    }
}

/// Mean per-pixel squared reconstruction error.
pub fn autoencoder_score(ae: &crate::models::AutoencoderModel, images: &crate::Tensor) -> crate::Result<Vec<f64>> {
    ae.reconstruction_errors(images)
}
