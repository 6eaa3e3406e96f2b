use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Linear, Parameterized};
use crate::scalar::Scalar;
use crate::sr_ctc::config::{ClassifierMode, SrCtcConfig};
use crate::sr_ctc::modules::{stage_logits, Lsd, Ltm};
use crate::tensor::{dedup_params, Graph, ParamRef, Tensor, Var};

/// Output of one backbone stage, offered for auxiliary supervision.
#[derive(Clone, Copy, Debug)]
pub struct StageTap<'g, S: Scalar> {
    pub stage: usize,
    /// `[C, T, H, W]`.
    pub feature: Var<'g, S>,
}

/// Geometry of a stage output, used to size the adapters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageShape {
    pub channels: usize,
    pub hw: [usize; 2],
}

/// Training-only auxiliary branches for the supervised stages.
#[derive(Debug)]
pub struct SrCtcHead<S: Scalar> {
    pub cfg: SrCtcConfig,
    pub lsd: BTreeMap<usize, Lsd<S>>,
    /// The same `Arc` appears under every stage when the LTM is shared.
    pub ltm: BTreeMap<usize, Arc<Ltm<S>>>,
    /// Classifier per stage; sharing modes reuse the same parameter objects.
    pub classifiers: BTreeMap<usize, Linear<S>>,
}

/// Loss decomposition of one sample.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms<'g, S: Scalar> {
    pub total: Var<'g, S>,
    pub final_ctc: Var<'g, S>,
    pub sr: Var<'g, S>,
}

impl<S: Scalar> SrCtcHead<S> {
    /// `final_clf` is reused as the stage classifier in `AllShared` mode.
    pub fn new<R: Rng + ?Sized>(
        cfg: SrCtcConfig,
        shapes: &BTreeMap<usize, StageShape>,
        d_lsd: usize,
        d_ltm: usize,
        lsd_grid: usize,
        final_clf: &Linear<S>,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let vocab = final_clf.weight.value().shape()[1];
        let d_final = final_clf.weight.value().shape()[0];
        if cfg.classifier_mode == ClassifierMode::AllShared && d_final != d_ltm {
            return Err(Error::config(format!(
                "all_shared needs the final feature width {d_final} to equal the LTM width {d_ltm}"
            )));
        }
        let stages = cfg.sorted_stages();
        let mut lsd = BTreeMap::new();
        let mut ltm = BTreeMap::new();
        let mut classifiers = BTreeMap::new();
        let shared_ltm = cfg.ltm_shared.then(|| Arc::new(Ltm::new("sr.ltm", d_lsd, d_ltm, rng)));
        let shared_clf = match cfg.classifier_mode {
            ClassifierMode::SharedAuxOnly | ClassifierMode::SharedFrozen => {
                let c = Linear::new("sr.clf_shared", d_ltm, vocab, true, rng);
                if cfg.classifier_mode == ClassifierMode::SharedFrozen {
                    for p in c.params() {
                        p.set_frozen(true);
                    }
                }
                Some(c)
            }
            ClassifierMode::AllShared => Some(final_clf.clone()),
            ClassifierMode::Unshared => None,
        };
        for &s in &stages {
            let shape = shapes
                .get(&s)
                .ok_or_else(|| Error::config(format!("no stage {s} in the backbone")))?;
            lsd.insert(s, Lsd::new(&format!("sr.lsd.{s}"), shape.channels, d_lsd, shape.hw, lsd_grid, rng)?);
            let m = match &shared_ltm {
                Some(m) => m.clone(),
                None => Arc::new(Ltm::new(&format!("sr.ltm.{s}"), d_lsd, d_ltm, rng)),
            };
            ltm.insert(s, m);
            let c = match &shared_clf {
                Some(c) => c.clone(),
                None => Linear::new(&format!("sr.clf.{s}"), d_ltm, vocab, true, rng),
            };
            classifiers.insert(s, c);
        }
        Ok(SrCtcHead { cfg, lsd, ltm, classifiers })
    }

    /// Per-frame log-probabilities of one supervised stage.
    pub fn stage_log_probs<'g>(&self, g: &'g Graph<S>, tap: StageTap<'g, S>) -> Result<Var<'g, S>> {
        let lsd = self.lsd.get(&tap.stage).ok_or_else(|| Error::config(format!("stage {} is not supervised", tap.stage)))?;
        let x = lsd.forward(g, tap.feature)?;
        let x = self.ltm[&tap.stage].forward(g, x)?;
        stage_logits(g, x, &self.classifiers[&tap.stage])
    }

    /// CTC loss of one supervised stage.
    pub fn stage_loss<'g>(&self, g: &'g Graph<S>, tap: StageTap<'g, S>, target: &[usize]) -> Result<Var<'g, S>> {
        let lp = self.stage_log_probs(g, tap)?;
        lp.ctc_loss(target).map_err(|e| e.at_stage(format!("stage{}", tap.stage)))
    }

    /// Unique parameter objects, including shared classifiers once.
    pub fn params(&self) -> Vec<ParamRef<S>> {
        let mut v = Vec::new();
        for l in self.lsd.values() {
            v.extend(l.params());
        }
        for m in self.ltm.values() {
            v.extend(m.params());
        }
        for c in self.classifiers.values() {
            v.extend(c.params());
        }
        dedup_params(v)
    }
}

/// Sum of the stage CTC losses over the supervised stages; a scalar zero
/// when none are supervised.
pub fn sr_ctc_loss<'g, S: Scalar>(
    g: &'g Graph<S>,
    head: &SrCtcHead<S>,
    taps: &[StageTap<'g, S>],
    target: &[usize],
) -> Result<Var<'g, S>> {
    let mut acc: Option<Var<'g, S>> = None;
    for &s in &head.cfg.sorted_stages() {
        let tap = taps
            .iter()
            .find(|t| t.stage == s)
            .copied()
            .ok_or_else(|| Error::config(format!("missing tap for supervised stage {s}")))?;
        let l = head.stage_loss(g, tap, target)?;
        acc = Some(match acc {
            Some(a) => a.add(l)?,
            None => l,
        });
    }
    Ok(acc.unwrap_or_else(|| g.constant(Tensor::zeros(&[1]))))
}

/// `L = L_CTC(final) + λ · L_SR`. With `λ = 0` the total is the final loss node itself.
pub fn total_loss<'g, S: Scalar>(
    g: &'g Graph<S>,
    final_log_probs: Var<'g, S>,
    head: Option<&SrCtcHead<S>>,
    taps: &[StageTap<'g, S>],
    target: &[usize],
) -> Result<LossTerms<'g, S>> {
    let final_ctc = final_log_probs.ctc_loss(target).map_err(|e| e.at_stage("final"))?;
    let (sr, lambda) = match head {
        Some(h) if h.cfg.is_active() => (sr_ctc_loss(g, h, taps, target)?, h.cfg.lambda),
        _ => (g.constant(Tensor::zeros(&[1])), 0.0),
    };
    let total = if lambda == 0.0 { final_ctc } else { final_ctc.add(sr.scale(S::lit(lambda)))? };
    Ok(LossTerms { total, final_ctc, sr })
}
