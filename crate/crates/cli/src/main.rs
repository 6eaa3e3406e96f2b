//! `dcac`: dataset generation, training, evaluation, cost reporting and
//! gradient diagnostics for the toy sign-language recognizer.
//!
//! Exit codes: 0 ok, 2 configuration or usage, 3 I/O, 4 divergence,
//! 5 integrity. Anything else unexpected exits with 1.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "dcac", version, about = "Toy continuous sign language recognition with DCAC and SR-CTC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where the run configuration comes from; defaults apply when neither is given.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigSource {
    /// JSON run configuration.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Named ablation preset, e.g. `table7-stage4-only`.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// Dataset seed; overrides `DCAC_SEED` and the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_dev: Option<usize>,
        #[command(flatten)]
        source: ConfigSource,
    },
    /// Train a model and write metrics plus the best checkpoint.
    Train {
        #[command(flatten)]
        source: ConfigSource,
        /// Dataset directory; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a split and report pooled WER with its deletion/insertion split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        beam: usize,
        #[arg(long, value_enum, default_value_t = SplitArg::Dev)]
        split: SplitArg,
        /// Also write `samples.csv` (requires --out).
        #[arg(long)]
        per_sample: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact and approximate FLOPs and parameters per DCAC insertion and in total.
    Cost {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-frame gradient norms at one stage tap as CSV.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Stage number 1 to 4, optionally written `stageN`.
        #[arg(long)]
        stage: String,
        /// Sample id; defaults to the first sample of the split.
        #[arg(long)]
        sample: Option<String>,
        #[arg(long, value_enum, default_value_t = SplitArg::Dev)]
        split: SplitArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { out, seed, n_train, n_dev, source } => commands::gen(&out, seed, n_train, n_dev, &source),
        Command::Train { source, data, out } => commands::run_training(&source, data.as_deref(), &out),
        Command::Eval { checkpoint, data, beam, split, per_sample, out } => {
            commands::eval(&checkpoint, &data, beam, split, per_sample, out.as_deref())
        }
        Command::Cost { source, frames, format, out } => commands::cost(&source, frames, format, out.as_deref()),
        Command::Diagnose { checkpoint, data, stage, sample, split, out } => {
            commands::diagnose(&checkpoint, &data, &stage, sample.as_deref(), split, out.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
