use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::dataset::Dataset;
use crate::pipeline::eval::{evaluate, Decoder};
use crate::pipeline::diagnose::mean_spike_stats;
use crate::pipeline::model::ToyModel;
use crate::tensor::{Graph, ParamRef, Tensor};

/// Optimizer, schedule and evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// The learning rate is multiplied by `decay_factor` after each listed epoch.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub beam_width: usize,
    /// Leading training samples used for the per-epoch gradient diagnostics.
    pub diag_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 2,
            lr: 1e-3,
            weight_decay: 1e-3,
            decay_epochs: vec![15, 22],
            decay_factor: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            beam_width: 10,
            diag_samples: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.beam_width == 0 || self.diag_samples == 0 {
            return Err(Error::config("epochs, batch_size, beam_width and diag_samples must be positive"));
        }
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.lr) || !pos(self.eps) || !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("lr and eps must be positive, weight_decay non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if !pos(self.decay_factor) {
            return Err(Error::config("decay_factor must be positive"));
        }
        Ok(())
    }

    /// Learning rate for 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&d| epoch > d).count();
        self.lr * self.decay_factor.powi(decays as i32)
    }
}

/// Adam with L2 weight decay folded into the gradient.
pub struct Adam {
    params: Vec<ParamRef<f32>>,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: i32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    weight_decay: f32,
}

impl Adam {
    /// Tracks every non-buffer parameter; frozen ones are skipped at step time.
    pub fn new(params: Vec<ParamRef<f32>>, cfg: &TrainConfig) -> Self {
        let params: Vec<_> = params.into_iter().filter(|p| !p.is_buffer()).collect();
        let zeros = |p: &ParamRef<f32>| vec![0.0f32; p.numel()];
        Adam {
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            params,
            step: 0,
            beta1: cfg.beta1 as f32,
            beta2: cfg.beta2 as f32,
            eps: cfg.eps as f32,
            weight_decay: cfg.weight_decay as f32,
        }
    }

    /// Apply one update from accumulated gradients scaled by `grad_scale`.
    pub fn step(&mut self, lr: f64, grad_scale: f32) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = lr as f32;
        for ((p, m), v) in self.params.iter().zip(&mut self.m).zip(&mut self.v) {
            if !p.is_trainable() {
                continue;
            }
            let grad = p.grad();
            let (wd, eps) = (self.weight_decay, self.eps);
            p.update(|w: &mut Tensor<f32>| {
                for (((wi, &gi), mi), vi) in w.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                    let g = gi * grad_scale + wd * *wi;
                    *mi = b1 * *mi + (1.0 - b1) * g;
                    *vi = b2 * *vi + (1.0 - b2) * g * g;
                    *wi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                }
            });
        }
    }
}

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_final: f64,
    pub loss_sr: f64,
    pub dev_wer: f64,
    pub stage2_zero_frac: f64,
    pub stage3_zero_frac: f64,
    pub stage4_zero_frac: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,loss_final,loss_sr,dev_wer,stage2_zero_frac,stage3_zero_frac,stage4_zero_frac";

    pub fn zero_frac(&self, stage: usize) -> Option<f64> {
        match stage {
            2 => Some(self.stage2_zero_frac),
            3 => Some(self.stage3_zero_frac),
            4 => Some(self.stage4_zero_frac),
            _ => None,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.loss_final,
            self.loss_sr,
            self.dev_wer,
            self.stage2_zero_frac,
            self.stage3_zero_frac,
            self.stage4_zero_frac
        )
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from(EpochMetrics::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Hooks invoked by [`train`].
pub trait TrainObserver {
    /// After each epoch; `improved` is true when dev WER reached a new minimum.
    fn on_epoch(&mut self, _model: &ToyModel<f32>, _metrics: &EpochMetrics, _improved: bool, _seconds: f64) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Result of a completed run. The model holds the best-dev-WER parameters.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_dev_wer: f64,
}

/// Mean of `f` over metric rows with `lo <= epoch <= hi`.
pub fn epoch_mean(rows: &[EpochMetrics], lo: usize, hi: usize, f: impl Fn(&EpochMetrics) -> f64) -> f64 {
    let sel: Vec<f64> = rows.iter().filter(|r| (lo..=hi).contains(&r.epoch)).map(f).collect();
    if sel.is_empty() {
        f64::NAN
    } else {
        sel.iter().sum::<f64>() / sel.len() as f64
    }
}

/// Flushes subnormal floats to zero on this thread while alive (x86-64 only).
/// Tiny late-training gradients otherwise fall into the slow subnormal path.
struct FlushDenormals {
    #[cfg(target_arch = "x86_64")]
    saved: u32,
}

impl FlushDenormals {
    #[allow(deprecated)]
    fn new() -> Self {
        #[cfg(target_arch = "x86_64")]
        {
            use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};
            const FTZ: u32 = 1 << 15;
            const DAZ: u32 = 1 << 6;
            // SAFETY: only the flush/denormal-as-zero bits of this thread's MXCSR change.
            let saved = unsafe { _mm_getcsr() };
            unsafe { _mm_setcsr(saved | FTZ | DAZ) };
            FlushDenormals { saved }
        }
        #[cfg(not(target_arch = "x86_64"))]
        FlushDenormals {}
    }
}

impl Drop for FlushDenormals {
    #[allow(deprecated)]
    fn drop(&mut self) {
        #[cfg(target_arch = "x86_64")]
        // SAFETY: restores the value read in `new`.
        unsafe {
            std::arch::x86_64::_mm_setcsr(self.saved)
        };
    }
}

fn snapshot(params: &[ParamRef<f32>]) -> Vec<Tensor<f32>> {
    params.iter().map(|p| p.snapshot()).collect()
}

fn restore(params: &[ParamRef<f32>], values: &[Tensor<f32>]) {
    for (p, v) in params.iter().zip(values) {
        p.set_value(v.clone());
    }
}

/// Train with per-epoch shuffling, step decay and best-dev-WER selection.
///
/// On a non-finite loss the best parameters seen so far are restored and
/// [`Error::TrainingDiverged`] is returned.
pub fn train(
    model: &ToyModel<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() || data.dev.is_empty() {
        return Err(Error::config("training needs non-empty train and dev splits"));
    }
    let params = model.params();
    let mut opt = Adam::new(params.clone(), cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best = snapshot(&params);
    let (mut best_epoch, mut best_wer) = (0usize, f64::INFINITY);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut sum_final, mut sum_sr) = (0.0f64, 0.0f64);
        let flush = FlushDenormals::new();
        for batch in order.chunks(cfg.batch_size) {
            model.zero_grads();
            for &i in batch {
                let sample = &data.train[i];
                let g = Graph::new();
                let diverged = |reason: String| {
                    restore(&params, &best);
                    Err(Error::TrainingDiverged { epoch, reason: format!("{reason} on sample {}", sample.id) })
                };
                let terms = match model.loss(&g, &sample.frames, &sample.glosses) {
                    Ok((terms, _)) => terms,
                    Err(Error::Numeric(reason)) => return diverged(reason),
                    Err(e) => return Err(e),
                };
                let total = terms.total.value().item()?;
                if !total.is_finite() {
                    return diverged(format!("loss {total}"));
                }
                sum_final += terms.final_ctc.value().item()? as f64;
                sum_sr += terms.sr.value().item()? as f64;
                g.backward(terms.total)?;
            }
            opt.step(lr, 1.0 / batch.len() as f32);
        }
        drop(flush);
        let n = data.train.len() as f64;
        let dev = evaluate(model, &data.dev, Decoder::Beam(cfg.beam_width))?;
        let probe = &data.train[..cfg.diag_samples.min(data.train.len())];
        let spikes = mean_spike_stats(model, probe)?;
        let row = EpochMetrics {
            epoch,
            loss_final: sum_final / n,
            loss_sr: sum_sr / n,
            dev_wer: dev.wer,
            stage2_zero_frac: spikes[1].zero_fraction,
            stage3_zero_frac: spikes[2].zero_fraction,
            stage4_zero_frac: spikes[3].zero_fraction,
        };
        let improved = dev.wer < best_wer;
        if improved {
            best_wer = dev.wer;
            best_epoch = epoch;
            best = snapshot(&params);
        }
        observer.on_epoch(model, &row, improved, started.elapsed().as_secs_f64())?;
        metrics.push(row);
    }
    restore(&params, &best);
    Ok(TrainOutcome { metrics, best_epoch, best_dev_wer: best_wer })
}
