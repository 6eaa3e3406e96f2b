//! One JSON document describing a full experiment, with a stable digest.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pipeline::model::ModelConfig;
use crate::pipeline::train::TrainConfig;
use crate::pipeline::world::WorldConfig;
use crate::sr_ctc::{ClassifierMode, SrCtcConfig};

/// Dataset generation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub world: WorldConfig,
    pub n_train: usize,
    pub n_dev: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { world: WorldConfig::default(), n_train: 2000, n_dev: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub sr_ctc: SrCtcConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}


/// Named ablation presets accepted by [`RunConfig::preset`].
pub const PRESETS: &[&str] = &[
    "table3-none",
    "table3-L-3-3-3",
    "table3-L-3-5-7",
    "table3-L-3-7-11",
    "table3-L-5-7-9",
    "table3-L-5-9-13",
    "table3-L-13-13-13",
    "table6-mode1",
    "table6-mode2",
    "table6-mode3",
    "table6-mode4",
    "table7-none",
    "table7-stage4-only",
    "table7-stage34",
    "table7-stage234",
];

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.sr_ctc.validate()?;
        self.train.validate()?;
        self.data.world.validate()?;
        if self.data.n_train == 0 || self.data.n_dev == 0 {
            return Err(Error::config("n_train and n_dev must be positive"));
        }
        if self.model.vocab != self.data.world.num_glosses + 1 {
            return Err(Error::config(format!(
                "model vocab {} must be the world's {} glosses plus blank",
                self.model.vocab, self.data.world.num_glosses
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Compact JSON with object keys sorted, the input to [`RunConfig::config_hash`].
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Pretty JSON terminated by a newline.
    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Default configuration modified by a named preset.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let unknown = || Error::config(format!("unknown preset {name:?}; known: {}", PRESETS.join(", ")));
        if let Some(rest) = name.strip_prefix("table3-") {
            if rest == "none" {
                c.model.dcac_stages.clear();
            } else {
                let l: Vec<usize> = rest
                    .strip_prefix("L-")
                    .ok_or_else(unknown)?
                    .split('-')
                    .map(|v| v.parse().map_err(|_| unknown()))
                    .collect::<Result<_>>()?;
                c.model.temporal_rf = l.try_into().map_err(|_| unknown())?;
            }
        } else if let Some(mode) = name.strip_prefix("table6-mode") {
            let i: usize = mode.parse().map_err(|_| unknown())?;
            c.sr_ctc.classifier_mode = *ClassifierMode::ALL.get(i.wrapping_sub(1)).ok_or_else(unknown)?;
        } else if let Some(rest) = name.strip_prefix("table7-") {
            c.sr_ctc.stages = match rest {
                "none" => vec![],
                "stage4-only" => vec![4],
                "stage34" => vec![3, 4],
                "stage234" => vec![2, 3, 4],
                _ => return Err(unknown()),
            };
        } else {
            return Err(unknown());
        }
        if !PRESETS.contains(&name) {
            return Err(unknown());
        }
        c.validate()?;
        Ok(c)
    }
}
