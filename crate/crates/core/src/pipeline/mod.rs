//! Toy recognizer, synthetic gloss data, training and WER evaluation.

pub mod checkpoint;
pub mod cost;
pub mod dataset;
pub mod diagnose;
pub mod eval;
pub mod model;
pub mod train;
pub mod wer;
pub mod world;

pub use checkpoint::{load_checkpoint, read_checkpoint_meta, save_checkpoint, Manifest, ParamEntry};
pub use cost::{backbone_flops, model_cost, InsertionCost, ModelCost};
pub use dataset::{generate_dataset, Dataset, DatasetIndex, IndexEntry};
pub use diagnose::{grad_rows, mean_spike_stats, stage_frame_gradients, TAPPED_STAGES};
pub use eval::{decode, evaluate, infer, Decoder, EvalReport, SampleResult};
pub use model::{frame_grad_norms, output_frames, ModelConfig, ModelOutput, ToyModel};
pub use train::{epoch_mean, metrics_csv, train, Adam, EpochMetrics, TrainConfig, TrainObserver, TrainOutcome};
pub use wer::{wer, WerBreakdown};
pub use world::{Sample, Split, SyntheticGlossWorld, WorldConfig};
