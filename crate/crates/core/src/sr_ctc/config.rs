use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stages that may carry auxiliary supervision; stage 1 never does.
pub const SUPERVISABLE_STAGES: [usize; 3] = [2, 3, 4];

/// How the auxiliary classifiers relate to the final classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMode {
    /// One auxiliary classifier for all supervised stages, separate final classifier.
    SharedAuxOnly,
    /// As `SharedAuxOnly`, with the auxiliary classifier frozen.
    SharedFrozen,
    /// One classifier object for every supervised stage and the final output.
    AllShared,
    /// A separate classifier per stage.
    Unshared,
}

impl ClassifierMode {
    pub const ALL: [ClassifierMode; 4] =
        [ClassifierMode::SharedAuxOnly, ClassifierMode::SharedFrozen, ClassifierMode::AllShared, ClassifierMode::Unshared];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SrCtcConfig {
    pub lambda: f64,
    pub stages: Vec<usize>,
    pub classifier_mode: ClassifierMode,
    pub ltm_shared: bool,
}

impl Default for SrCtcConfig {
    fn default() -> Self {
        SrCtcConfig { lambda: 0.1, stages: SUPERVISABLE_STAGES.to_vec(), classifier_mode: ClassifierMode::AllShared, ltm_shared: true }
    }
}

impl SrCtcConfig {
    /// No auxiliary supervision.
    pub fn disabled() -> Self {
        SrCtcConfig { stages: Vec::new(), ..Self::default() }
    }

    pub fn is_active(&self) -> bool {
        !self.stages.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::config(format!("lambda must be finite and non-negative, got {}", self.lambda)));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if !SUPERVISABLE_STAGES.contains(s) {
                return Err(Error::config(format!("stage {s} cannot be supervised; choose from {SUPERVISABLE_STAGES:?}")));
            }
            if self.stages[..i].contains(s) {
                return Err(Error::config(format!("stage {s} listed twice")));
            }
        }
        Ok(())
    }

    /// Stages in ascending order.
    pub fn sorted_stages(&self) -> Vec<usize> {
        let mut s = self.stages.clone();
        s.sort_unstable();
        s
    }
}
