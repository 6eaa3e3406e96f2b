use crate::ctc::diagnostics::{spike_diagnostics, GradRow, SpikeStats};
use crate::error::{Error, Result};
use crate::pipeline::model::{frame_grad_norms, ToyModel};
use crate::pipeline::world::Sample;
use crate::scalar::Scalar;
use crate::tensor::Graph;

/// Stages exposing a gradient tap.
pub const TAPPED_STAGES: [usize; 4] = [1, 2, 3, 4];

/// Per-frame gradient L2 norms of the training objective at every stage tap,
/// indexed by `stage - 1`. Batch norms use running statistics so that each
/// frame's gradient reflects only the paths that actually pass through it.
pub fn stage_frame_gradients<S: Scalar>(model: &ToyModel<S>, sample: &Sample) -> Result<Vec<Vec<f64>>> {
    let frames = sample.frames.cast::<S>();
    let g = Graph::new();
    let (terms, out) = model.loss_in_mode(&g, &frames, &sample.glosses, false)?;
    g.backward(terms.total)?;
    Ok(out.taps.iter().map(|tap| frame_grad_norms(&g, tap)).collect())
}

/// CSV rows for one stage of one sample.
pub fn grad_rows<S: Scalar>(model: &ToyModel<S>, sample: &Sample, stage: usize) -> Result<Vec<GradRow>> {
    if !TAPPED_STAGES.contains(&stage) {
        return Err(Error::config(format!("unknown stage {stage}; choose from {TAPPED_STAGES:?}")));
    }
    let norms = stage_frame_gradients(model, sample)?.swap_remove(stage - 1);
    Ok(norms.into_iter().enumerate().map(|(i, v)| GradRow { frame_index: i, grad_l2: v, stage: format!("stage{stage}") }).collect())
}

/// Spike statistics per stage averaged over `samples`, indexed by `stage - 1`.
pub fn mean_spike_stats<S: Scalar>(model: &ToyModel<S>, samples: &[Sample]) -> Result<Vec<SpikeStats>> {
    if samples.is_empty() {
        return Err(Error::config("diagnostics need at least one sample"));
    }
    let mut acc = vec![SpikeStats { zero_fraction: 0.0, peak_to_median: 0.0, entropy: 0.0 }; TAPPED_STAGES.len()];
    let n = samples.len() as f64;
    for s in samples {
        for (a, norms) in acc.iter_mut().zip(stage_frame_gradients(model, s)?) {
            let st = spike_diagnostics(&norms)?;
            a.zero_fraction += st.zero_fraction / n;
            a.peak_to_median += st.peak_to_median / n;
            a.entropy += st.entropy / n;
        }
    }
    Ok(acc)
}
