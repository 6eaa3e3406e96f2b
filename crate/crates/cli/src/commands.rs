use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use dcac_core::config::RunConfig;
use dcac_core::ctc::diagnostics::{spike_diagnostics, write_grad_csv};
use dcac_core::pipeline::{
    evaluate, generate_dataset, grad_rows, load_checkpoint, metrics_csv, model_cost, save_checkpoint, train, Dataset,
    Decoder, EpochMetrics, ModelCost, Split, ToyModel, TrainObserver,
};
use dcac_core::Error;
use serde_json::json;

use crate::{ConfigSource, Format, SplitArg};

pub const SEED_ENV: &str = "DCAC_SEED";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    fn with_context(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Shape(_) | Error::InfeasibleAlignment { .. } => 2,
            Error::Io(_) | Error::Json(_) | Error::Format(_) => 3,
            Error::TrainingDiverged { .. } | Error::Numeric(_) => 4,
            Error::Integrity(_) => 5,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

fn env_seed() -> CmdResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Failure::config(format!("{SEED_ENV}={v:?} is not a seed"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Failure::config(format!("{SEED_ENV}: {e}"))),
    }
}

/// Config file, preset or defaults, with the seed taken from `DCAC_SEED` when set.
fn resolve_config(source: &ConfigSource) -> CmdResult<RunConfig> {
    let mut cfg = match (&source.config, &source.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::from(e).with_context(path))?;
            RunConfig::from_json(&text)?
        }
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::default(),
    };
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_json(path: &Path, value: &serde_json::Value) -> CmdResult {
    fs::write(path, json_text(value)).map_err(|e| Failure::from(e).with_context(path))
}

fn json_text(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values serialize");
    s.push('\n');
    s
}

fn load_data(dir: &Path) -> CmdResult<Dataset> {
    Dataset::load(dir).map_err(|e| Failure::from(e).with_context(dir))
}

fn check_compatible(cfg: &RunConfig, data: &Dataset) -> CmdResult {
    if data.world.num_glosses + 1 != cfg.model.vocab || data.world.frame_hw != cfg.model.input_hw {
        return Err(Failure::config(format!(
            "dataset ({} glosses, {}px frames) does not fit the model (vocab {}, {}px input)",
            data.world.num_glosses, data.world.frame_hw, cfg.model.vocab, cfg.model.input_hw
        )));
    }
    Ok(())
}

pub fn gen(out: &Path, seed: Option<u64>, n_train: Option<usize>, n_dev: Option<usize>, source: &ConfigSource) -> CmdResult {
    let cfg = resolve_config(source)?;
    let seed = seed.unwrap_or(cfg.seed);
    let n_train = n_train.unwrap_or(cfg.data.n_train);
    let n_dev = n_dev.unwrap_or(cfg.data.n_dev);
    let data = generate_dataset(&cfg.data.world, seed, n_train, n_dev)?;
    data.write(out).map_err(|e| Failure::from(e).with_context(out))?;
    println!("wrote {} train and {} dev samples to {}", n_train, n_dev, out.display());
    Ok(())
}

struct TrainLog<'a> {
    out: &'a Path,
    cfg: &'a RunConfig,
    rows: Vec<EpochMetrics>,
}

impl TrainObserver for TrainLog<'_> {
    fn on_epoch(&mut self, model: &ToyModel<f32>, m: &EpochMetrics, improved: bool, seconds: f64) -> dcac_core::Result<()> {
        self.rows.push(m.clone());
        fs::write(self.out.join(METRICS_FILE), metrics_csv(&self.rows))?;
        if improved {
            save_checkpoint(&self.out.join(CHECKPOINT_DIR), model, self.cfg, m.epoch, m.dev_wer)?;
        }
        println!(
            "epoch {}/{} loss_final={:.4} loss_sr={:.4} dev_wer={:.4} stage2_zero={:.4} time={:.1}s{}",
            m.epoch,
            self.cfg.train.epochs,
            m.loss_final,
            m.loss_sr,
            m.dev_wer,
            m.stage2_zero_frac,
            seconds,
            if improved { " best" } else { "" }
        );
        std::io::stdout().flush()?;
        Ok(())
    }
}

pub fn run_training(source: &ConfigSource, data_dir: Option<&Path>, out: &Path) -> CmdResult {
    let mut cfg = resolve_config(source)?;
    let data = match data_dir {
        Some(dir) => {
            let data = load_data(dir)?;
            cfg.data.world = data.world.clone();
            cfg.data.n_train = data.train.len();
            cfg.data.n_dev = data.dev.len();
            cfg.validate()?;
            check_compatible(&cfg, &data)?;
            data
        }
        None => generate_dataset(&cfg.data.world, cfg.seed, cfg.data.n_train, cfg.data.n_dev)?,
    };
    fs::create_dir_all(out).map_err(|e| Failure::from(e).with_context(out))?;
    fs::write(out.join("config.json"), cfg.to_pretty_json())?;
    println!("config_hash {} seed {}", cfg.config_hash(), cfg.seed);
    let model = ToyModel::<f32>::new(cfg.model.clone(), Some(cfg.sr_ctc.clone()), cfg.seed)?;
    let mut log = TrainLog { out, cfg: &cfg, rows: Vec::new() };
    let outcome = train(&model, &data, &cfg.train, cfg.seed, &mut log)?;
    let summary = json!({
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "epochs": outcome.metrics.len(),
        "best_epoch": outcome.best_epoch,
        "best_dev_wer": outcome.best_dev_wer,
    });
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    println!("best epoch {} dev_wer {:.4}", outcome.best_epoch, outcome.best_dev_wer);
    Ok(())
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Dev => Split::Dev,
    }
}

pub fn eval(checkpoint: &Path, data_dir: &Path, beam: usize, split: SplitArg, per_sample: bool, out: Option<&Path>) -> CmdResult {
    if per_sample && out.is_none() {
        return Err(Failure::config("--per-sample needs --out"));
    }
    if beam == 0 {
        return Err(Failure::config("--beam must be at least 1"));
    }
    let (model, manifest, cfg) = load_checkpoint(checkpoint).map_err(|e| Failure::from(e).with_context(checkpoint))?;
    let data = load_data(data_dir)?;
    check_compatible(&cfg, &data)?;
    let split = split_of(split);
    let report = evaluate(&model, data.split(split), Decoder::Beam(beam))?;
    let summary = json!({
        "wer": report.wer,
        "del": report.del_rate,
        "ins": report.ins_rate,
        "totals": report.totals,
        "beam": beam,
        "split": split.name(),
        "samples": report.samples.len(),
        "epoch": manifest.epoch,
        "config_hash": manifest.config_hash,
    });
    print!("{}", json_text(&summary));
    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| Failure::from(e).with_context(out))?;
        write_json(&out.join("report.json"), &summary)?;
        if per_sample {
            fs::write(out.join("samples.csv"), report.samples_csv())?;
        }
    }
    Ok(())
}

const COST_COLUMNS: [&str; 6] = ["scope", "extent", "flops_exact", "flops_approx", "params_exact", "params_approx"];

/// Whitespace-aligned table carrying the same numbers as the JSON report.
pub fn cost_table(c: &ModelCost) -> String {
    let mut rows: Vec<[String; 6]> = vec![COST_COLUMNS.map(String::from)];
    let extent = |e: [usize; 3]| format!("{}x{}x{}", e[0], e[1], e[2]);
    for i in &c.insertions {
        rows.push([
            format!("stage{}", i.stage),
            extent(i.extent),
            i.flops_exact.to_string(),
            i.flops_approx.to_string(),
            i.params_exact.to_string(),
            i.params_approx.to_string(),
        ]);
    }
    rows.push([
        "backbone".into(),
        format!("{}", c.frames),
        c.backbone_flops.to_string(),
        "-".into(),
        c.backbone_params.to_string(),
        "-".into(),
    ]);
    rows.push([
        "total".into(),
        format!("{}", c.frames),
        c.total_flops_exact.to_string(),
        c.total_flops_approx.to_string(),
        c.total_params_exact.to_string(),
        c.total_params_approx.to_string(),
    ]);
    let widths: Vec<usize> = (0..6).map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in &rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(v, w)| format!("{v:<w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

pub fn cost(source: &ConfigSource, frames: usize, format: Format, out: Option<&Path>) -> CmdResult {
    if frames == 0 {
        return Err(Failure::config("--frames must be positive"));
    }
    let cfg = resolve_config(source)?;
    let c = model_cost(&cfg.model, frames)?;
    let value = serde_json::to_value(&c).expect("cost report serializes");
    let table = cost_table(&c);
    match format {
        Format::Json => print!("{}", json_text(&value)),
        Format::Table => print!("{table}"),
    }
    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| Failure::from(e).with_context(out))?;
        write_json(&out.join("cost.json"), &value)?;
        fs::write(out.join("cost.txt"), table)?;
    }
    Ok(())
}

fn parse_stage(s: &str) -> CmdResult<usize> {
    let digits = s.strip_prefix("stage").unwrap_or(s);
    digits.parse().map_err(|_| Failure::config(format!("unknown stage {s:?}; use 1 to 4")))
}

pub fn diagnose(
    checkpoint: &Path,
    data_dir: &Path,
    stage: &str,
    sample: Option<&str>,
    split: SplitArg,
    out: Option<&Path>,
) -> CmdResult {
    let stage = parse_stage(stage)?;
    let (model, _, cfg) = load_checkpoint(checkpoint).map_err(|e| Failure::from(e).with_context(checkpoint))?;
    let data = load_data(data_dir)?;
    check_compatible(&cfg, &data)?;
    let samples = data.split(split_of(split));
    let chosen = match sample {
        Some(id) => samples.iter().find(|s| s.id == id).ok_or_else(|| Failure::config(format!("no sample {id:?}")))?,
        None => samples.first().ok_or_else(|| Failure::config("split is empty"))?,
    };
    let rows = grad_rows(&model, chosen, stage)?;
    let norms: Vec<f64> = rows.iter().map(|r| r.grad_l2).collect();
    let stats = spike_diagnostics(&norms)?;
    let mut csv = Vec::new();
    write_grad_csv(&mut csv, &rows)?;
    let summary = json!({ "sample": chosen.id, "stage": format!("stage{stage}"), "frames": rows.len(), "stats": stats });
    match out {
        Some(out) => {
            fs::create_dir_all(out).map_err(|e| Failure::from(e).with_context(out))?;
            fs::write(out.join(format!("grad_stage{stage}.csv")), &csv)?;
            write_json(&out.join(format!("spike_stage{stage}.json")), &summary)?;
        }
        None => std::io::stdout().write_all(&csv)?,
    }
    eprintln!(
        "{} stage{stage}: zero_fraction={:.4} peak_to_median={:.3} entropy={:.4}",
        chosen.id, stats.zero_fraction, stats.peak_to_median, stats.entropy
    );
    Ok(())
}
