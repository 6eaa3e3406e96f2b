use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ctc::min_frames;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters of the synthetic gloss world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub num_glosses: usize,
    /// Seed of the gloss templates; fixed per world, independent of sampling.
    pub template_seed: u64,
    pub frame_hw: usize,
    /// Inclusive range of frames per gloss occurrence.
    pub duration: [usize; 2],
    /// Inclusive range of glosses per sentence.
    pub sentence_len: [usize; 2],
    pub noise_sigma: f64,
    pub stretch_prob: f64,
    pub stretch_range: [f64; 2],
    /// Maximum crop offset in pixels along each spatial axis.
    pub max_shift: usize,
    pub min_frames: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            num_glosses: 12,
            template_seed: 0x05ee_d0f9_1055,
            frame_hw: 16,
            duration: [8, 16],
            sentence_len: [2, 5],
            noise_sigma: 0.1,
            stretch_prob: 0.5,
            stretch_range: [0.8, 1.2],
            max_shift: 2,
            min_frames: 16,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.num_glosses == 0 {
            return bad("world needs at least one gloss");
        }
        if self.frame_hw < 4 {
            return bad("frames must be at least 4×4");
        }
        if self.duration[0] == 0 || self.duration[0] > self.duration[1] {
            return bad("duration range must be positive and ordered");
        }
        if self.sentence_len[0] == 0 || self.sentence_len[0] > self.sentence_len[1] {
            return bad("sentence length range must be positive and ordered");
        }
        if !(0.0..=1.0).contains(&self.stretch_prob) {
            return bad("stretch probability must lie in [0, 1]");
        }
        if !(self.stretch_range[0] > 0.0 && self.stretch_range[0] <= self.stretch_range[1]) {
            return bad("stretch range must be positive and ordered");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be finite and non-negative");
        }
        Ok(())
    }

    /// Frames needed so that two halvings leave room for every label and
    /// every blank between repeats.
    pub fn required_frames(&self, glosses: &[usize]) -> usize {
        self.min_frames.max(4 * min_frames(glosses) + 4)
    }
}

/// Appearance and motion of one gloss: a blob moving on a line and a blob
/// orbiting the frame centre.
#[derive(Clone, Debug, PartialEq)]
pub struct GlossTemplate {
    pub start: [f64; 2],
    pub travel: [f64; 2],
    pub sigma: [f64; 2],
    pub orbit_radius: f64,
    pub orbit_phase: f64,
    pub orbit_speed: f64,
    pub orbit_sigma: f64,
}

impl GlossTemplate {
    /// Blob centres and widths at phase `u ∈ [0, 1]`, in canvas coordinates.
    fn blobs(&self, u: f64, centre: f64) -> [([f64; 2], [f64; 2]); 2] {
        let lin = [self.start[0] + self.travel[0] * u, self.start[1] + self.travel[1] * u];
        let a = self.orbit_phase + self.orbit_speed * u;
        let orb = [centre + self.orbit_radius * a.cos(), centre + self.orbit_radius * a.sin()];
        [(lin, self.sigma), (orb, [self.orbit_sigma; 2])]
    }
}

/// Deterministic generator of weakly labelled gloss videos.
#[derive(Clone, Debug)]
pub struct SyntheticGlossWorld {
    pub cfg: WorldConfig,
    pub templates: Vec<GlossTemplate>,
}

/// One video `[1, T, H, W]` with its sentence-level labels (ids from 1).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub glosses: Vec<usize>,
    pub frames: Tensor<f32>,
}

impl Sample {
    pub fn num_frames(&self) -> usize {
        self.frames.shape()[1]
    }
}

impl SyntheticGlossWorld {
    pub fn new(cfg: WorldConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.template_seed);
        let c = (cfg.frame_hw + 2 * cfg.max_shift) as f64 / 2.0 - 0.5;
        let templates = (0..cfg.num_glosses)
            .map(|g| {
                let theta = 2.0 * PI * g as f64 / cfg.num_glosses as f64 + rng.gen_range(-0.2..0.2);
                let dist = rng.gen_range(0.25..0.45) * cfg.frame_hw as f64;
                let dir = [theta.cos(), theta.sin()];
                let jitter = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                GlossTemplate {
                    start: [c - dir[0] * dist / 2.0 + jitter[0], c - dir[1] * dist / 2.0 + jitter[1]],
                    travel: [dir[0] * dist, dir[1] * dist],
                    sigma: [rng.gen_range(0.8..2.2), rng.gen_range(0.8..2.2)],
                    orbit_radius: rng.gen_range(0.15..0.35) * cfg.frame_hw as f64,
                    orbit_phase: rng.gen_range(0.0..2.0 * PI),
                    orbit_speed: if rng.gen_bool(0.5) { 1.0 } else { -1.0 } * rng.gen_range(1.0..3.0),
                    orbit_sigma: rng.gen_range(0.7..1.5),
                }
            })
            .collect();
        Ok(SyntheticGlossWorld { cfg, templates })
    }

    /// Uniform i.i.d. sentence of gloss ids in `1..=num_glosses`.
    pub fn sample_sentence<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let [lo, hi] = self.cfg.sentence_len;
        let n = rng.gen_range(lo..=hi);
        (0..n).map(|_| rng.gen_range(1..=self.cfg.num_glosses)).collect()
    }

    /// Render a video of `glosses` with the configured nuisances.
    pub fn render<R: Rng + ?Sized>(&self, id: String, glosses: &[usize], rng: &mut R) -> Result<Sample> {
        let cfg = &self.cfg;
        for &g in glosses {
            if g == 0 || g > cfg.num_glosses {
                return Err(Error::config(format!("gloss id {g} outside 1..={}", cfg.num_glosses)));
            }
        }
        let stretch = if rng.gen_bool(cfg.stretch_prob) {
            rng.gen_range(cfg.stretch_range[0]..=cfg.stretch_range[1])
        } else {
            1.0
        };
        let [dlo, dhi] = cfg.duration;
        let durations: Vec<usize> = glosses
            .iter()
            .map(|_| ((rng.gen_range(dlo..=dhi) as f64 * stretch).round() as usize).max(1))
            .collect();
        let shift = [rng.gen_range(0..=2 * cfg.max_shift), rng.gen_range(0..=2 * cfg.max_shift)];
        let content: usize = durations.iter().sum();
        let t_len = content.max(cfg.required_frames(glosses));
        let hw = cfg.frame_hw;
        let centre = (hw + 2 * cfg.max_shift) as f64 / 2.0 - 0.5;
        let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).map_err(|e| Error::config(e.to_string()))?;
        let mut data = vec![0f32; t_len * hw * hw];
        let mut t = 0;
        for (&g, &d) in glosses.iter().zip(&durations) {
            let tpl = &self.templates[g - 1];
            for i in 0..d {
                let u = if d == 1 { 0.5 } else { i as f64 / (d - 1) as f64 };
                let blobs = tpl.blobs(u, centre);
                let frame = &mut data[t * hw * hw..(t + 1) * hw * hw];
                for y in 0..hw {
                    for x in 0..hw {
                        let (cy, cx) = ((y + shift[0]) as f64, (x + shift[1]) as f64);
                        let v: f64 = blobs
                            .iter()
                            .map(|(p, s)| (-0.5 * (((cy - p[0]) / s[0]).powi(2) + ((cx - p[1]) / s[1]).powi(2))).exp())
                            .sum();
                        frame[y * hw + x] = v as f32;
                    }
                }
                t += 1;
            }
        }
        if cfg.noise_sigma > 0.0 {
            for v in data.iter_mut() {
                *v += noise.sample(rng) as f32;
            }
        }
        Ok(Sample { id, glosses: glosses.to_vec(), frames: Tensor::new(vec![1, t_len, hw, hw], data)? })
    }

    /// Independent stream per `(split, index)` so any sample can be regenerated alone.
    pub fn sample_rng(seed: u64, split: Split, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((split as u64) << 40) | index as u64);
        rng
    }

    pub fn generate(&self, seed: u64, split: Split, index: usize) -> Result<Sample> {
        let mut rng = Self::sample_rng(seed, split, index);
        let glosses = self.sample_sentence(&mut rng);
        self.render(format!("{}-{index:06}", split.name()), &glosses, &mut rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train = 0,
    Dev = 1,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
        }
    }
}
