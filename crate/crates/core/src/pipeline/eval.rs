use serde::{Deserialize, Serialize};

use crate::ctc::decode::{decode_beam, decode_greedy};
use crate::error::Result;
use crate::pipeline::model::ToyModel;
use crate::pipeline::wer::{wer, WerBreakdown};
use crate::pipeline::world::Sample;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};

/// Decoder used at evaluation time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "width")]
pub enum Decoder {
    Greedy,
    Beam(usize),
}

/// Decoding outcome for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub id: String,
    pub reference: Vec<usize>,
    pub hypothesis: Vec<usize>,
    pub breakdown: WerBreakdown,
}

/// Split-level error rates pooled over all samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub wer: f64,
    #[serde(rename = "del")]
    pub del_rate: f64,
    #[serde(rename = "ins")]
    pub ins_rate: f64,
    pub totals: WerBreakdown,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub samples: Vec<SampleResult>,
}

impl EvalReport {
    pub fn from_results(samples: Vec<SampleResult>) -> Self {
        let totals = WerBreakdown::aggregate(samples.iter().map(|s| &s.breakdown));
        EvalReport { wer: totals.wer, del_rate: totals.del_rate(), ins_rate: totals.ins_rate(), totals, samples }
    }

    /// Per-sample rows as CSV: `id,reference,hypothesis,sub,ins,del,ref_len,wer`.
    pub fn samples_csv(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        let mut out = String::from("id,reference,hypothesis,sub,ins,del,ref_len,wer\n");
        for s in &self.samples {
            let b = &s.breakdown;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                s.id,
                join(&s.reference),
                join(&s.hypothesis),
                b.substitutions,
                b.insertions,
                b.deletions,
                b.ref_length,
                b.wer
            ));
        }
        out
    }
}

/// Inference log-probabilities `[T', V]` for one video.
pub fn infer<S: Scalar>(model: &ToyModel<S>, frames: &Tensor<S>) -> Result<Tensor<S>> {
    let g = Graph::new();
    let out = model.forward(&g, frames, false)?;
    let lp = out.log_probs.value();
    Ok((*lp).clone())
}

pub fn decode<S: Scalar>(log_probs: &Tensor<S>, decoder: Decoder) -> Result<Vec<usize>> {
    match decoder {
        Decoder::Greedy => decode_greedy(log_probs),
        Decoder::Beam(w) => decode_beam(log_probs, w),
    }
}

/// Decode every sample and pool the edit counts over the split.
pub fn evaluate(model: &ToyModel<f32>, samples: &[Sample], decoder: Decoder) -> Result<EvalReport> {
    let mut results = Vec::with_capacity(samples.len());
    for s in samples {
        let lp = infer(model, &s.frames)?;
        let hypothesis = decode(&lp, decoder)?;
        let breakdown = wer(&s.glosses, &hypothesis)?;
        results.push(SampleResult { id: s.id.clone(), reference: s.glosses.clone(), hypothesis, breakdown });
    }
    Ok(EvalReport::from_results(results))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(id: &str, r: &[usize], h: &[usize]) -> SampleResult {
        SampleResult { id: id.into(), reference: r.to_vec(), hypothesis: h.to_vec(), breakdown: wer(r, h).unwrap() }
    }

    #[test]
    fn report_pools_counts() {
        let rep = EvalReport::from_results(vec![
            result("a", &[1, 2, 3, 4], &[1, 2, 3, 4]),
            result("b", &[1], &[2, 2]),
            result("c", &[1, 2, 3], &[1, 3]),
        ]);
        // 0 + 2 + 1 errors over 4 + 1 + 3 reference glosses.
        assert_eq!(rep.wer, 3.0 / 8.0);
        assert_eq!(rep.del_rate, 1.0 / 8.0);
        assert_eq!(rep.ins_rate, 1.0 / 8.0);
        assert_eq!(rep.samples_csv().lines().count(), 4);
    }
}
