//! Desk-scale climate downscaling stack built around a residual slim vision
//! transformer.
//!
//! The crate is organised around the pipeline stages:
//!
//! - [`gridio`] — georeferenced raster grids, a binary on-disk format, block
//!   coarsening, and a synthetic Gaussian-random-field pair generator.
//! - [`numerics`] — a dense-tensor engine with reverse-mode automatic
//!   differentiation, the neural primitives the model needs, an Adam
//!   optimizer, and an analytic FLOP ledger.
//! - [`compress`] — Canny edge detection, quad-tree adaptive patching, and
//!   the tokenize/detokenize pair that shrinks the transformer sequence.
//! - [`reslim`] — the model itself: per-variable tokenization, cross-attention
//!   variable aggregation, resolution embeddings, ViT blocks, a convolutional
//!   residual path, and the latitude-weighted total-variation training loss.
//! - [`tiles`] — tile planning with halo padding, tile-local execution on
//!   parallel workers, stitching, and deterministic gradient averaging.
//! - [`metrics`] — R², RMSE (plain and quantile-restricted), SSIM, PSNR, the
//!   log1p transform, and radially averaged power spectra.
//!
//! The data-parallel inner loops (matrix products, attention rows, tile
//! workers) run on rayon when the default `parallel` feature is enabled and
//! fall back to sequential execution without it. Results are bit-identical
//! either way: every parallel loop writes disjoint output slices and all
//! cross-worker reductions happen in a fixed order.

pub mod compress;
pub(crate) mod fft;
pub mod gradcheck;
pub mod gridio;
pub mod metrics;
pub mod numerics;
pub mod parallel;
pub mod reslim;
pub mod tiles;
pub(crate) mod util;

pub use numerics::{FlopLedger, Graph, Real, Tensor, Var};
