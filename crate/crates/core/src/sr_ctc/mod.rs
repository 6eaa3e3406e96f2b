//! Subnet-regularized CTC: auxiliary CTC supervision of intermediate stages
//! through lightweight spatial and temporal adapters.

pub mod config;
pub mod head;
pub mod modules;

pub use config::{ClassifierMode, SrCtcConfig, SUPERVISABLE_STAGES};
pub use head::{sr_ctc_loss, total_loss, LossTerms, SrCtcHead, StageShape, StageTap};
pub use modules::{stage_logits, Lsd, Ltm};
