use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::world::{Sample, Split, SyntheticGlossWorld, WorldConfig};
use crate::tensor::io::{load_tensor, save_tensor};

/// In-memory train and dev splits.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub world: WorldConfig,
    pub seed: u64,
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub split: Split,
    pub gloss_ids: Vec<usize>,
    #[serde(rename = "T")]
    pub t: usize,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub seed: u64,
    pub world: WorldConfig,
    pub samples: Vec<IndexEntry>,
}

pub const INDEX_FILE: &str = "index.json";

pub fn generate_dataset(world: &WorldConfig, seed: u64, n_train: usize, n_dev: usize) -> Result<Dataset> {
    if n_train == 0 || n_dev == 0 {
        return Err(Error::config("both splits need at least one sample"));
    }
    let w = SyntheticGlossWorld::new(world.clone())?;
    let train = (0..n_train).map(|i| w.generate(seed, Split::Train, i)).collect::<Result<_>>()?;
    let dev = (0..n_dev).map(|i| w.generate(seed, Split::Dev, i)).collect::<Result<_>>()?;
    Ok(Dataset { world: world.clone(), seed, train, dev })
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
        }
    }

    /// One tensor file per sample under `<dir>/<split>/` plus `index.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut samples = Vec::new();
        for split in [Split::Train, Split::Dev] {
            fs::create_dir_all(dir.join(split.name()))?;
            for s in self.split(split) {
                let file = format!("{}/{}.dct", split.name(), s.id);
                save_tensor(&s.frames, &dir.join(&file))?;
                samples.push(IndexEntry { id: s.id.clone(), split, gloss_ids: s.glosses.clone(), t: s.num_frames(), file });
            }
        }
        let index = DatasetIndex { seed: self.seed, world: self.world.clone(), samples };
        let mut json = serde_json::to_string_pretty(&index)?;
        json.push('\n');
        fs::write(dir.join(INDEX_FILE), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index: DatasetIndex = serde_json::from_slice(&fs::read(dir.join(INDEX_FILE))?)?;
        let (mut train, mut dev) = (Vec::new(), Vec::new());
        for e in index.samples {
            let frames: crate::tensor::Tensor<f32> = load_tensor(&dir.join(&e.file))?;
            let s = frames.shape();
            if s.len() != 4 || s[1] != e.t {
                return Err(Error::Format(format!("{}: shape {s:?} disagrees with T = {}", e.file, e.t)));
            }
            let sample = Sample { id: e.id, glosses: e.gloss_ids, frames };
            match e.split {
                Split::Train => train.push(sample),
                Split::Dev => dev.push(sample),
            }
        }
        Ok(Dataset { world: index.world, seed: index.seed, train, dev })
    }
}
