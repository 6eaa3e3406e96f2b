//! Dense tensors and a tape-based reverse-mode differentiation engine.
//!
//! Values live in [`Tensor`]; a [`Graph`] records every op applied to
//! [`Var`] handles and replays them backwards from a scalar root. Long-lived
//! weights are [`Param`]s shared across graphs.

mod graph;
pub mod io;
pub mod kernels;
pub mod ops;
mod param;
mod value;

pub use graph::{BackwardCtx, Graph, Var};
pub use ops::conv::{conv3d_reference, Conv3dSpec};
pub use ops::elementwise::{broadcast_shape, ElementwiseKind};
pub use ops::nn::softmax_tensor;
pub use param::{dedup_params, Param, ParamRef};
pub use value::Tensor;
