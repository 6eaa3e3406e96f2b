//! Train one configuration on a freshly generated dataset and print per-epoch metrics.
//!
//! Usage: `train_probe <A|B|C> [seed] [epochs] [n_train] [n_dev]`
//! where A has DCAC and auxiliary supervision, B has DCAC only and C has neither.

use dcac_core::config::RunConfig;
use dcac_core::pipeline::{generate_dataset, train, EpochMetrics, ToyModel, TrainObserver};
use dcac_core::sr_ctc::SrCtcConfig;

struct Print;

impl TrainObserver for Print {
    fn on_epoch(&mut self, _m: &ToyModel<f32>, r: &EpochMetrics, improved: bool, secs: f64) -> dcac_core::Result<()> {
        println!("{} {:.1}s{}", r.csv_row(), secs, if improved { " *" } else { "" });
        Ok(())
    }
}

fn main() -> dcac_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("B");
    let arg = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let mut cfg = RunConfig { seed: arg(2, 0) as u64, ..RunConfig::default() };
    cfg.train.epochs = arg(3, 30);
    cfg.data.n_train = arg(4, 2000);
    cfg.data.n_dev = arg(5, 200);
    match which {
        "A" => {}
        "B" => cfg.sr_ctc = SrCtcConfig::disabled(),
        _ => {
            cfg.sr_ctc = SrCtcConfig::disabled();
            cfg.model.dcac_stages.clear();
        }
    }
    let data = generate_dataset(&cfg.data.world, cfg.seed, cfg.data.n_train, cfg.data.n_dev)?;
    let model = ToyModel::<f32>::new(cfg.model.clone(), Some(cfg.sr_ctc.clone()), cfg.seed)?;
    println!("{}", EpochMetrics::CSV_HEADER);
    let out = train(&model, &data, &cfg.train, cfg.seed, &mut Print)?;
    println!("best epoch {} dev wer {}", out.best_epoch, out.best_dev_wer);
    for training in [true, false] {
        let mut z = [0.0f64; 4];
        let n = data.train.len().min(100);
        for s in &data.train[..n] {
            let g = dcac_core::tensor::Graph::new();
            let (terms, o) = model.loss_in_mode(&g, &s.frames, &s.glosses, training)?;
            g.backward(terms.total)?;
            for (k, tap) in o.taps.iter().enumerate() {
                let norms = dcac_core::pipeline::frame_grad_norms(&g, tap);
                z[k] += dcac_core::ctc::diagnostics::spike_diagnostics(&norms)?.zero_fraction / n as f64;
            }
        }
        println!("training={training} zero fracs {z:?}");
    }
    Ok(())
}
