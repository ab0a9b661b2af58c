//! Minimal reverse-mode differentiation engine.
//!
//! Provides the tensor type, a tape of differentiable operations
//! (convolution, pooling, batch norm, concatenation, residual add, linear,
//! softmax cross-entropy) and the AdamW optimizer.

mod conv;
mod optim;
mod params;
mod tape;
mod tensor;

pub use conv::{ConvGeom, PoolGeom};
pub use optim::{AdamW, AdamWConfig};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Mode, RunningStats, Tape, Var, BN_EPS, BN_MOMENTUM};
pub use tensor::{Real, Tensor};
