//! Adaptive spatial compression: Canny edge density drives a quad-tree
//! partition of the (token) image into variable-size square patches; smooth
//! regions get large patches, feature-rich regions small ones. The
//! tokenize/detokenize pair maps between a patch set and transformer tokens.

mod canny;
mod quadtree;
mod token;

pub use canny::{canny, CannyParams, EdgeMap};
pub use quadtree::{compression_ratio, quadtree_partition, Patch, PatchSet};
pub use token::{detokenize, patch_pool, patch_scatter, scale_classes, tokenize};

use thiserror::Error;

use crate::numerics::GraphError;

#[derive(Debug, Error)]
pub enum CompressError {
    #[error("degenerate image dimensions {0}x{1}; need at least 3x3")]
    DegenerateDims(usize, usize),
    #[error("invalid patch sides: {0}")]
    BadSides(String),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("token count mismatch: layout has {expected} patches, got {actual} tokens")]
    CountMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("serialization error: {0}")]
    Serde(String),
}
