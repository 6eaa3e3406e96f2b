//! Dynamic context-aware convolution and its cost model.

pub mod config;
pub mod cost;
pub mod layer;

pub use config::DcacConfig;
pub use cost::{cost_model, flop_terms, param_terms, CostRecord, CostReport};
pub use layer::{terms, AttentionFactors, Dcac, ResidualGate};
