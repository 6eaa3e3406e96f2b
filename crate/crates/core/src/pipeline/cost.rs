//! Whole-model FLOP and parameter accounting for the toy recognizer.
//!
//! FLOPs are multiply counts of the convolution, recurrent and linear layers;
//! normalization and activation costs are left out, matching the DCAC cost
//! model's convention.

use serde::{Deserialize, Serialize};

use crate::dcac::cost_model;
use crate::error::Result;
use crate::pipeline::model::{output_frames, ModelConfig, ToyModel, TEMPORAL_KERNEL};

/// Cost of one DCAC insertion at its stage's feature extent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InsertionCost {
    pub stage: usize,
    pub extent: [usize; 3],
    pub flops_exact: u64,
    pub flops_approx: f64,
    pub params_exact: u64,
    pub params_approx: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCost {
    pub frames: usize,
    pub insertions: Vec<InsertionCost>,
    pub backbone_flops: u64,
    pub backbone_params: u64,
    pub total_flops_exact: u64,
    pub total_flops_approx: f64,
    pub total_params_exact: u64,
    pub total_params_approx: f64,
}

/// Multiplies of the backbone outside DCAC for a `T`-frame video.
pub fn backbone_flops(cfg: &ModelConfig, t: usize) -> u64 {
    let u = |v: usize| v as u64;
    let mut flops = 0;
    let mut c_prev = cfg.in_channels;
    for s in 1..=4 {
        let c = cfg.widths[s - 1];
        let hw = cfg.stage_hw(s);
        flops += u(c_prev * c * 9 * t * hw * hw);
        c_prev = c;
    }
    let c4 = u(cfg.widths[3]);
    let k = u(TEMPORAL_KERNEL);
    flops += c4 * c4 * k * u(t) + c4 * c4 * k * u(t / 2);
    let tp = u(output_frames(t));
    let h = u(cfg.rnn_hidden);
    flops += 2 * tp * (c4 * h + h * h);
    flops += 2 * tp * (2 * h * h + h * h);
    flops += tp * 2 * h * u(cfg.vocab);
    flops
}

/// Exact and approximate cost of every DCAC insertion plus the model total.
pub fn model_cost(cfg: &ModelConfig, t: usize) -> Result<ModelCost> {
    cfg.validate()?;
    let insertions: Vec<InsertionCost> = cfg
        .dcac_stages
        .iter()
        .map(|&s| {
            let hw = cfg.stage_hw(s);
            let r = cost_model(&cfg.dcac_config(s), t, hw, hw).record();
            InsertionCost {
                stage: s,
                extent: [t, hw, hw],
                flops_exact: r.flops_exact,
                flops_approx: r.flops_approx,
                params_exact: r.params_exact,
                params_approx: r.params_approx,
            }
        })
        .collect();
    let reference = ModelConfig { dcac_stages: vec![], ..cfg.clone() };
    let plain = ToyModel::<f32>::new(reference, None, 0)?;
    let backbone_params = plain.params().iter().filter(|p| !p.is_buffer()).map(|p| p.numel() as u64).sum();
    let backbone = backbone_flops(cfg, t);
    let dcac_flops: u64 = insertions.iter().map(|i| i.flops_exact).sum();
    let dcac_params: u64 = insertions.iter().map(|i| i.params_exact).sum();
    Ok(ModelCost {
        frames: t,
        backbone_flops: backbone,
        backbone_params,
        total_flops_exact: backbone + dcac_flops,
        total_flops_approx: backbone as f64 + insertions.iter().map(|i| i.flops_approx).sum::<f64>(),
        total_params_exact: backbone_params + dcac_params,
        total_params_approx: backbone_params as f64 + insertions.iter().map(|i| i.params_approx).sum::<f64>(),
        insertions,
    })
}
