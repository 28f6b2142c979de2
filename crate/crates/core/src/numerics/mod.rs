//! Dense-tensor engine with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain value container. Differentiable computation runs
//! through a [`Graph`]: a tape of executed ops that yields gradients for every
//! leaf created with `requires_grad`. The engine is deliberately small — dense
//! row-major buffers, no broadcasting beyond what the model needs — and every
//! differentiable primitive is verified against central finite differences in
//! the test suite.
//!
//! Training runs in `f32`; gradient verification instantiates the same code
//! in `f64`. Debug builds assert finiteness after every forward op.

mod adam;
mod checkpoint;
mod flops;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamState, GradSet, ParamEntry, ParamId, ParamSet};
pub use checkpoint::{load_checkpoint_into, save_checkpoint, CheckpointError};
pub use flops::{credit_ledger, with_flop_ledger, FlopLedger, OpCategory};
pub use graph::{Graph, GraphError, Padding, Var};
pub use tensor::{Dtype, Real, Tensor};
