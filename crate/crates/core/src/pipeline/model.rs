use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dcac::{Dcac, DcacConfig};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv1d, Conv3d, Linear, Parameterized};
use crate::scalar::Scalar;
use crate::sr_ctc::{total_loss, LossTerms, SrCtcConfig, SrCtcHead, StageShape, StageTap};
use crate::tensor::{dedup_params, Conv3dSpec, Graph, Param, ParamRef, Tensor, Var};

/// Architecture of the toy recognizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub input_hw: usize,
    /// Channel widths of stages 1 to 4.
    pub widths: [usize; 4],
    /// Stages followed by a residual DCAC, a subset of `{2, 3, 4}`.
    pub dcac_stages: Vec<usize>,
    /// Temporal kernel sizes `[L1, L2, L3]` for stages 2, 3 and 4.
    pub temporal_rf: [usize; 3],
    pub experts: usize,
    pub reduction: usize,
    pub context_kernel: usize,
    pub rnn_hidden: usize,
    /// Width of the auxiliary spatial adapters.
    pub d_lsd: usize,
    pub lsd_grid: usize,
    /// Output classes including the blank.
    pub vocab: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 1,
            input_hw: 16,
            widths: [8, 16, 32, 64],
            dcac_stages: vec![2, 3, 4],
            temporal_rf: [3, 7, 11],
            experts: 6,
            reduction: 16,
            context_kernel: 1,
            rnn_hidden: 64,
            d_lsd: 64,
            lsd_grid: 7,
            vocab: 13,
        }
    }
}

pub const MIN_INPUT_FRAMES: usize = 16;
pub const TEMPORAL_KERNEL: usize = 5;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.widths.contains(&0) || self.rnn_hidden == 0 || self.d_lsd == 0 {
            return Err(Error::config("model widths must be positive"));
        }
        if self.vocab < 2 {
            return Err(Error::config("vocabulary needs a blank and at least one gloss"));
        }
        if !self.input_hw.is_multiple_of(16) {
            return Err(Error::config(format!("input size {} must be divisible by 16 for four halvings", self.input_hw)));
        }
        for (i, &s) in self.dcac_stages.iter().enumerate() {
            if !(2..=4).contains(&s) || self.dcac_stages[..i].contains(&s) {
                return Err(Error::config(format!("invalid DCAC stage list {:?}", self.dcac_stages)));
            }
            self.dcac_config(s).validate()?;
        }
        Ok(())
    }

    pub fn stage_hw(&self, stage: usize) -> usize {
        self.input_hw >> stage
    }

    pub fn dcac_config(&self, stage: usize) -> DcacConfig {
        let c = self.widths[stage - 1];
        DcacConfig {
            c_in: c,
            c_out: c,
            groups: c,
            kernel: [self.temporal_rf[stage - 2], 1, 1],
            experts: self.experts,
            reduction: self.reduction,
            context_kernel: self.context_kernel,
        }
    }

    /// Feature width entering the final classifier.
    pub fn d_final(&self) -> usize {
        2 * self.rnn_hidden
    }

    pub fn stage_shapes(&self) -> BTreeMap<usize, StageShape> {
        (1..=4)
            .map(|s| {
                let hw = self.stage_hw(s);
                (s, StageShape { channels: self.widths[s - 1], hw: [hw, hw] })
            })
            .collect()
    }
}

/// Output length of the two temporal halvings.
pub fn output_frames(t: usize) -> usize {
    t / 2 / 2
}

#[derive(Debug)]
pub struct ConvStage<S: Scalar> {
    pub conv: Conv3d<S>,
    pub bn: BatchNorm<S>,
}

/// Elman recurrences in both directions, outputs concatenated.
#[derive(Debug)]
pub struct BiRnnLayer<S: Scalar> {
    pub fwd_in: Linear<S>,
    pub fwd_h: ParamRef<S>,
    pub bwd_in: Linear<S>,
    pub bwd_h: ParamRef<S>,
}

fn rnn_uniform<S: Scalar, R: Rng + ?Sized>(shape: &[usize], hidden: usize, rng: &mut R) -> Tensor<S> {
    let b = 1.0 / (hidden as f64).sqrt();
    Tensor::uniform(shape, -b, b, rng)
}

impl<S: Scalar> BiRnnLayer<S> {
    fn new<R: Rng + ?Sized>(name: &str, d_in: usize, h: usize, rng: &mut R) -> Self {
        let lin = |n: &str, rng: &mut R| Linear {
            weight: Param::new(format!("{name}.{n}.in.w"), rnn_uniform(&[d_in, h], h, rng)),
            bias: Some(Param::new(format!("{name}.{n}.in.b"), rnn_uniform(&[h], h, rng))),
        };
        let fwd_in = lin("fwd", rng);
        let fwd_h = Param::new(format!("{name}.fwd.h"), rnn_uniform(&[h, h], h, rng));
        let bwd_in = lin("bwd", rng);
        let bwd_h = Param::new(format!("{name}.bwd.h"), rnn_uniform(&[h, h], h, rng));
        BiRnnLayer { fwd_in, fwd_h, bwd_in, bwd_h }
    }

    fn forward<'g>(&self, g: &'g Graph<S>, x: Var<'g, S>) -> Result<Var<'g, S>> {
        let f = self.fwd_in.forward(g, x)?.rnn_scan(g.param(&self.fwd_h), false)?;
        let b = self.bwd_in.forward(g, x)?.rnn_scan(g.param(&self.bwd_h), true)?;
        Var::concat(&[f, b], 1)
    }

    fn params(&self) -> Vec<ParamRef<S>> {
        let mut v = self.fwd_in.params();
        v.push(self.fwd_h.clone());
        v.extend(self.bwd_in.params());
        v.push(self.bwd_h.clone());
        v
    }
}

/// Four strided conv stages with optional residual DCAC, a local temporal
/// stack with two halvings, a two-layer bidirectional recurrence and a
/// classifier. Auxiliary stage supervision is attached only for training.
#[derive(Debug)]
pub struct ToyModel<S: Scalar> {
    pub cfg: ModelConfig,
    pub stages: Vec<ConvStage<S>>,
    pub dcac: BTreeMap<usize, Dcac<S>>,
    pub temporal: [Conv1d<S>; 2],
    pub rnn: Vec<BiRnnLayer<S>>,
    pub classifier: Linear<S>,
    pub sr: Option<SrCtcHead<S>>,
}

/// Forward result for one video.
#[derive(Clone, Debug)]
pub struct ModelOutput<'g, S: Scalar> {
    /// `[T', V]` per-frame log-probabilities.
    pub log_probs: Var<'g, S>,
    /// Outputs of stages 1 to 4 (after DCAC where present).
    pub taps: Vec<StageTap<'g, S>>,
}

impl<S: Scalar> ToyModel<S> {
    /// The backbone draws from one seeded stream and the auxiliary head from
    /// another, so adding or removing auxiliary supervision leaves every
    /// backbone weight unchanged.
    pub fn new(cfg: ModelConfig, sr: Option<SrCtcConfig>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let mut stages = Vec::new();
        let mut c_prev = cfg.in_channels;
        for s in 1..=4 {
            let c = cfg.widths[s - 1];
            let spec = Conv3dSpec { stride: [1, 2, 2], padding: [0, 1, 1], groups: 1 };
            stages.push(ConvStage {
                conv: Conv3d::new(&format!("stage{s}.conv"), c_prev, c, [1, 3, 3], spec, false, &mut rng),
                bn: BatchNorm::new(&format!("stage{s}.bn"), c, 0),
            });
            c_prev = c;
        }
        let mut dcac = BTreeMap::new();
        for &s in &cfg.dcac_stages {
            dcac.insert(s, Dcac::new(&format!("dcac.{s}"), cfg.dcac_config(s), &mut rng)?);
        }
        let c4 = cfg.widths[3];
        let temporal = [
            Conv1d::new("temporal.conv1", c4, c4, TEMPORAL_KERNEL, true, &mut rng),
            Conv1d::new("temporal.conv2", c4, c4, TEMPORAL_KERNEL, true, &mut rng),
        ];
        let h = cfg.rnn_hidden;
        let rnn = vec![BiRnnLayer::new("rnn.0", c4, h, &mut rng), BiRnnLayer::new("rnn.1", 2 * h, h, &mut rng)];
        let classifier = Linear::new("classifier", cfg.d_final(), cfg.vocab, true, &mut rng);

        let sr = match sr {
            Some(sc) if sc.is_active() => {
                let mut aux = ChaCha8Rng::seed_from_u64(seed);
                aux.set_stream(1);
                Some(SrCtcHead::new(sc, &cfg.stage_shapes(), cfg.d_lsd, cfg.d_final(), cfg.lsd_grid, &classifier, &mut aux)?)
            }
            Some(sc) => {
                sc.validate()?;
                None
            }
            None => None,
        };
        Ok(ToyModel { cfg, stages, dcac, temporal, rnn, classifier, sr })
    }

    fn check_video(&self, video: &Tensor<S>) -> Result<usize> {
        let s = video.shape();
        let hw = self.cfg.input_hw;
        if s.len() != 4 || s[0] != self.cfg.in_channels || s[2] != hw || s[3] != hw {
            return Err(Error::shape(format!(
                "video must be [{}, T, {hw}, {hw}], got {s:?}",
                self.cfg.in_channels
            )));
        }
        if s[1] < MIN_INPUT_FRAMES {
            return Err(Error::shape(format!("video has {} frames, need at least {MIN_INPUT_FRAMES}", s[1])));
        }
        Ok(s[1])
    }

    /// Backbone forward. Batch norms use per-video statistics in training
    /// and running statistics otherwise.
    pub fn forward<'g>(&self, g: &'g Graph<S>, video: &Tensor<S>, training: bool) -> Result<ModelOutput<'g, S>> {
        let t = self.check_video(video)?;
        let mut x = g.constant(video.clone());
        let mut taps = Vec::with_capacity(4);
        for (i, st) in self.stages.iter().enumerate() {
            let s = i + 1;
            x = st.bn.forward(g, st.conv.forward(g, x)?, training)?.relu();
            if let Some(d) = self.dcac.get(&s) {
                x = d.residual(g, x, training)?;
            }
            taps.push(StageTap { stage: s, feature: x });
        }
        let c4 = self.cfg.widths[3];
        let mut y = x.global_avg_pool(&[2, 3])?.reshape(&[c4, t])?;
        for conv in &self.temporal {
            y = conv.forward(g, y)?.relu().max_pool_time(2)?;
        }
        let mut z = y.t()?;
        for layer in &self.rnn {
            z = layer.forward(g, z)?;
        }
        let log_probs = self.classifier.forward(g, z)?.log_softmax(1)?;
        Ok(ModelOutput { log_probs, taps })
    }

    /// Training objective of one labelled video.
    pub fn loss<'g>(
        &self,
        g: &'g Graph<S>,
        video: &Tensor<S>,
        target: &[usize],
    ) -> Result<(LossTerms<'g, S>, ModelOutput<'g, S>)> {
        self.loss_in_mode(g, video, target, true)
    }

    /// Training objective with batch norms in training (per-video statistics)
    /// or inference (running statistics) mode.
    pub fn loss_in_mode<'g>(
        &self,
        g: &'g Graph<S>,
        video: &Tensor<S>,
        target: &[usize],
        training: bool,
    ) -> Result<(LossTerms<'g, S>, ModelOutput<'g, S>)> {
        let out = self.forward(g, video, training)?;
        let terms = total_loss(g, out.log_probs, self.sr.as_ref(), &out.taps, target)?;
        Ok((terms, out))
    }

    /// Parameters used at inference.
    pub fn backbone_params(&self) -> Vec<ParamRef<S>> {
        let mut v = Vec::new();
        for st in &self.stages {
            v.extend(st.conv.params());
            v.extend(st.bn.params());
        }
        for d in self.dcac.values() {
            v.extend(d.params());
        }
        for c in &self.temporal {
            v.extend(c.params());
        }
        for l in &self.rnn {
            v.extend(l.params());
        }
        v.extend(self.classifier.params());
        v
    }

    /// Every parameter object once, backbone first.
    pub fn params(&self) -> Vec<ParamRef<S>> {
        let mut v = self.backbone_params();
        if let Some(h) = &self.sr {
            v.extend(h.params());
        }
        dedup_params(v)
    }

    pub fn zero_grads(&self) {
        for p in self.params() {
            p.zero_grad();
        }
    }
}

/// Per-frame L2 norm of the gradient reaching a `[C, T, H, W]` tap.
pub fn frame_grad_norms<S: Scalar>(g: &Graph<S>, tap: &StageTap<'_, S>) -> Vec<f64> {
    let shape = tap.feature.shape();
    let (c, t, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    match g.grad(tap.feature) {
        None => vec![0.0; t],
        Some(grad) => {
            let d = grad.data();
            let mut acc = vec![0.0f64; t];
            for ci in 0..c {
                for (ti, a) in acc.iter_mut().enumerate() {
                    for v in &d[(ci * t + ti) * hw..(ci * t + ti + 1) * hw] {
                        let v = v.to_f64_lossy();
                        *a += v * v;
                    }
                }
            }
            acc.into_iter().map(f64::sqrt).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_length_and_gate_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let video = Tensor::<f64>::uniform(&[1, 64, 16, 16], 0.0, 1.0, &mut rng);
        let with = ToyModel::<f64>::new(ModelConfig::default(), None, 4).unwrap();
        let cfg = ModelConfig { dcac_stages: vec![], ..ModelConfig::default() };
        let without = ToyModel::<f64>::new(cfg, None, 4).unwrap();
        // Same backbone weights apart from the DCAC blocks, which are drawn last
        // in each stage; copy to line them up.
        for (a, b) in without.backbone_params().iter().zip(with.backbone_params().iter().filter(|p| !p.name().starts_with("dcac."))) {
            a.set_value(b.snapshot());
        }
        let g = Graph::new();
        let ya = with.forward(&g, &video, false).unwrap().log_probs;
        let yb = without.forward(&g, &video, false).unwrap().log_probs;
        assert_eq!(ya.shape(), vec![16, 13]);
        assert_eq!(*ya.value(), *yb.value());
    }
}
