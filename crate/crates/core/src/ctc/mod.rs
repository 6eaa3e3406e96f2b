//! Connectionist temporal classification: loss, gradients, decoding and
//! per-frame gradient diagnostics.

pub mod decode;
pub mod diagnostics;
pub mod loss;

pub use decode::{collapse, decode_beam, decode_greedy, DEFAULT_BEAM_WIDTH};
pub use diagnostics::{spike_diagnostics, write_grad_csv, GradRow, SpikeStats, SpikeSummary};
pub use loss::{ctc_grad, ctc_grad_log_probs, ctc_grad_logits, ctc_loss, occupancy, CtcLattice};

use crate::error::{Error, Result};

/// Reserved id of the blank symbol.
pub const BLANK: usize = 0;

/// Gloss vocabulary with the blank at index 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Vocabulary {
    pub num_glosses: usize,
}

impl Vocabulary {
    pub fn new(num_glosses: usize) -> Self {
        Vocabulary { num_glosses }
    }

    /// Output classes including the blank.
    pub fn size(&self) -> usize {
        self.num_glosses + 1
    }

    pub fn check_labels(&self, labels: &[usize]) -> Result<()> {
        check_labels(labels, self.size())
    }
}

pub(crate) fn check_labels(labels: &[usize], vocab: usize) -> Result<()> {
    for &l in labels {
        if l == BLANK || l >= vocab {
            return Err(Error::config(format!("label {l} is not a gloss id in a vocabulary of {vocab}")));
        }
    }
    Ok(())
}

/// Minimum number of frames that can emit `labels`: one per label plus a
/// blank between adjacent repeats.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}
