use std::time::Instant;

use dcac_core::pipeline::{generate_dataset, ModelConfig, ToyModel, WorldConfig};
use dcac_core::sr_ctc::SrCtcConfig;
use dcac_core::tensor::Graph;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(64);
    let only = args.get(2).cloned();
    let data = generate_dataset(&WorldConfig::default(), 1, n, 1).unwrap();
    let mean_t: f64 = data.train.iter().map(|s| s.num_frames() as f64).sum::<f64>() / n as f64;
    println!("mean T {mean_t:.1}");
    for (name, dcac, sr) in [
        ("A", vec![2, 3, 4], Some(SrCtcConfig::default())),
        ("B", vec![2, 3, 4], None),
        ("C", vec![], None),
    ] {
        if only.as_deref().is_some_and(|o| o != name) {
            continue;
        }
        let cfg = ModelConfig { dcac_stages: dcac, ..ModelConfig::default() };
        let m = ToyModel::<f32>::new(cfg, sr, 0).unwrap();
        let start = Instant::now();
        for s in &data.train {
            let g = Graph::new();
            let (terms, _) = m.loss(&g, &s.frames, &s.glosses).unwrap();
            g.backward(terms.total).unwrap();
        }
        println!("{name}: {:.2} ms/sample", start.elapsed().as_secs_f64() * 1e3 / n as f64);
    }
}
