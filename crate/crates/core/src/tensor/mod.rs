//! Dense tensors with reverse-mode automatic differentiation.

mod conv;
mod dense;
mod elementwise;
mod linalg;
mod norm;
mod params;
mod reduce;
mod scalar;
mod tape;

pub use conv::{conv1d_depthwise_values, conv3d_values};
pub use dense::{broadcast_shapes, Tensor};
pub use linalg::matmul_values;
pub use norm::{BatchNorm, BatchStats, BN_EPS, BN_MOMENTUM};
pub use params::{ParamId, ParamStore, Parameter};
pub use scalar::{DType, Scalar};
pub use tape::{Gradients, Tape, Var};

#[cfg(test)]
pub(crate) use elementwise::softplus;
pub(crate) use tape::{BackwardCtx, BackwardOp};
