//! The downscaling model: a residual slim vision transformer.
//!
//! The forward pass runs two paths. The main path tokenizes each physical
//! variable at the *input* resolution, collapses the variable axis with one
//! cross-attention query, tags tokens with a learned resolution embedding,
//! optionally compresses the token field through a quad-tree, runs pre-norm
//! ViT blocks, and decodes back to pixels with a per-scale linear head,
//! pixel-shuffle upsampling, and two 3×3 convolutions. The residual path
//! upsamples selected input channels bilinearly and refines them with two
//! convolutions plus an identity skip; because the decoder's and the residual
//! refiner's final convolutions start at zero, a freshly initialized model is
//! exactly bilinear upsampling.
//!
//! Training minimizes a latitude-weighted squared error plus a
//! distance-weighted total-variation prior over the 8-neighborhood, smoothed
//! with a Huber transition so it stays differentiable at zero.

mod config;
mod forward;
mod loss;
mod model;
mod train;

pub use config::{CompressionCfg, ReslimConfig};
pub use forward::{
    add_resolution_embedding, aggregate_variables, count_tokens, embed_variables, reslim_forward,
    sinusoidal_posenc,
};
pub use loss::{bayesian_loss, huber, tv_penalty, weighted_mse, LatWeights, TvPrior};
pub use model::ReslimModel;
pub use train::{predict, train_step, CompressionCache, TrainStepOutput};

use thiserror::Error;

use crate::compress::CompressError;
use crate::numerics::{CheckpointError, GraphError};

#[derive(Debug, Error)]
pub enum ReslimError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown scale factor {0}; the resolution table holds {{1, 2, 4, 8}}")]
    UnknownScaleFactor(usize),
    #[error("input shape {0:?} incompatible: {1}")]
    BadInput(Vec<usize>, String),
    #[error("non-finite loss; largest activations: {diagnostics}")]
    NonFiniteLoss { diagnostics: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Compress(#[from] CompressError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
