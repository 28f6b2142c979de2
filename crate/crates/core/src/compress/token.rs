//! Variable-size patches ↔ transformer tokens.
//!
//! Every patch, whatever its side, is average-pooled to a
//! `min_side × min_side` cell grid, flattened channel-major, and linearly
//! embedded; a learned patch-scale embedding indexed by `log2(side/min_side)`
//! tells attention how coarse each token is. Detokenization projects each
//! token back to its pooled cells, broadcasts them nearest-neighbor over the
//! full patch extent, and smooths the seams with one 3×3 convolution.

use super::quadtree::PatchSet;
use super::CompressError;
use crate::numerics::{Graph, OpCategory, Padding, Real, Tensor, Var};

/// Patch-scale class per token: `log2(side / min_side)`.
pub fn scale_classes(ps: &PatchSet) -> Vec<usize> {
    ps.patches.iter().map(|p| (p.side / ps.min_side).trailing_zeros() as usize).collect()
}

/// Number of distinct scale classes a layout of this min/max pair can hold.
pub fn scale_class_count(min_side: usize, max_side: usize) -> usize {
    (max_side / min_side).trailing_zeros() as usize + 1
}

fn check_image(ps: &PatchSet, shape: &[usize]) -> Result<(usize, usize, usize), CompressError> {
    if shape.len() != 3 || shape[1] != ps.image_height || shape[2] != ps.image_width {
        return Err(CompressError::LayoutMismatch(format!(
            "image {shape:?} does not match layout {}x{}",
            ps.image_height, ps.image_width
        )));
    }
    Ok((shape[0], shape[1], shape[2]))
}

/// Average-pools every patch to `min_side × min_side` cells: output
/// `[n_patches, C·min_side²]`, token layout channel-major `[c][u][v]`.
pub fn patch_pool<T: Real>(
    g: &mut Graph<T>,
    image: Var,
    ps: &PatchSet,
) -> Result<Var, CompressError> {
    let (c, h, w) = check_image(ps, g.value(image).shape())?;
    let ms = ps.min_side;
    let tok = c * ms * ms;
    let n = ps.len();
    let xv = g.value(image).data();
    let mut data = vec![T::zero(); n * tok];
    for (t, p) in ps.patches.iter().enumerate() {
        let b = p.side / ms;
        let inv = T::from_f64(1.0 / (b * b) as f64);
        for ch in 0..c {
            for u in 0..ms {
                for v in 0..ms {
                    let mut acc = T::zero();
                    for dy in 0..b {
                        for dx in 0..b {
                            acc = acc
                                + xv[(ch * h + p.row + u * b + dy) * w + p.col + v * b + dx];
                        }
                    }
                    data[t * tok + (ch * ms + u) * ms + v] = acc * inv;
                }
            }
        }
    }
    let value = Tensor::from_vec(&[n, tok], data);
    let ps = ps.clone();
    Ok(g.custom_unary(
        image,
        value,
        "patch_pool",
        OpCategory::Other,
        (c * h * w) as u64,
        move |gout, input| {
            let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
            let ms = ps.min_side;
            let tok = c * ms * ms;
            let mut dx = Tensor::zeros(&[c, h, w]);
            for (t, p) in ps.patches.iter().enumerate() {
                let b = p.side / ms;
                let inv = T::from_f64(1.0 / (b * b) as f64);
                for ch in 0..c {
                    for u in 0..ms {
                        for v in 0..ms {
                            let gcell = gout.data()[t * tok + (ch * ms + u) * ms + v] * inv;
                            for dy in 0..b {
                                for dxp in 0..b {
                                    let idx =
                                        (ch * h + p.row + u * b + dy) * w + p.col + v * b + dxp;
                                    dx.data_mut()[idx] = dx.data()[idx] + gcell;
                                }
                            }
                        }
                    }
                }
            }
            dx
        },
    ))
}

/// Inverse of [`patch_pool`]'s layout: scatters per-token pooled cells
/// `[n, C·min_side²]` back to `[C, H, W]`, broadcasting each cell
/// nearest-neighbor over its block.
pub fn patch_scatter<T: Real>(
    g: &mut Graph<T>,
    tokens: Var,
    ps: &PatchSet,
    channels: usize,
) -> Result<Var, CompressError> {
    let shape = g.value(tokens).shape().to_vec();
    let ms = ps.min_side;
    let tok = channels * ms * ms;
    if shape.len() != 2 || shape[1] != tok {
        return Err(CompressError::LayoutMismatch(format!(
            "tokens {shape:?}, expected [n, {tok}]"
        )));
    }
    if shape[0] != ps.len() {
        return Err(CompressError::CountMismatch { expected: ps.len(), actual: shape[0] });
    }
    let (h, w) = (ps.image_height, ps.image_width);
    let tv = g.value(tokens).data();
    let mut data = vec![T::zero(); channels * h * w];
    for (t, p) in ps.patches.iter().enumerate() {
        let b = p.side / ms;
        for ch in 0..channels {
            for u in 0..ms {
                for v in 0..ms {
                    let val = tv[t * tok + (ch * ms + u) * ms + v];
                    for dy in 0..b {
                        for dx in 0..b {
                            data[(ch * h + p.row + u * b + dy) * w + p.col + v * b + dx] = val;
                        }
                    }
                }
            }
        }
    }
    let value = Tensor::from_vec(&[channels, h, w], data);
    let ps = ps.clone();
    Ok(g.custom_unary(
        tokens,
        value,
        "patch_scatter",
        OpCategory::Other,
        (channels * h * w) as u64,
        move |gout, input| {
            let n = input.shape()[0];
            let ms = ps.min_side;
            let tok = channels * ms * ms;
            let (h, w) = (ps.image_height, ps.image_width);
            let mut dt = Tensor::zeros(&[n, tok]);
            for (t, p) in ps.patches.iter().enumerate() {
                let b = p.side / ms;
                for ch in 0..channels {
                    for u in 0..ms {
                        for v in 0..ms {
                            let mut acc = T::zero();
                            for dy in 0..b {
                                for dx in 0..b {
                                    acc = acc
                                        + gout.data()
                                            [(ch * h + p.row + u * b + dy) * w + p.col + v * b + dx];
                                }
                            }
                            dt.data_mut()[t * tok + (ch * ms + u) * ms + v] = acc;
                        }
                    }
                }
            }
            dt
        },
    ))
}

/// Pools, embeds, and scale-tags the patches of `image`:
/// `tokens = pool(image)·embed_w + scale_table[log2(side/min)]`.
///
/// `embed_w` is `[C·min_side², dim]`; `scale_table` is `[n_scales, dim]`.
pub fn tokenize<T: Real>(
    g: &mut Graph<T>,
    image: Var,
    ps: &PatchSet,
    embed_w: Var,
    scale_table: Var,
) -> Result<Var, CompressError> {
    let pooled = patch_pool(g, image, ps)?;
    let embedded = g.matmul(pooled, embed_w)?;
    let classes = scale_classes(ps);
    Ok(g.add_rows_by_class(embedded, scale_table, &classes)?)
}

/// Projects tokens back to pooled pixels, scatters them to image space, and
/// smooths with one same-padded 3×3 convolution:
/// `image = conv3x3(scatter(tokens·proj_w))`.
///
/// `proj_w` is `[dim, C·min_side²]`; `smooth_w` is `[C, C, 3, 3]`.
pub fn detokenize<T: Real>(
    g: &mut Graph<T>,
    tokens: Var,
    ps: &PatchSet,
    channels: usize,
    proj_w: Var,
    smooth_w: Var,
) -> Result<Var, CompressError> {
    let shape = g.value(tokens).shape();
    if shape.len() != 2 || shape[0] != ps.len() {
        return Err(CompressError::CountMismatch {
            expected: ps.len(),
            actual: if shape.is_empty() { 0 } else { shape[0] },
        });
    }
    let pixels = g.matmul(tokens, proj_w)?;
    let scattered = patch_scatter(g, pixels, ps, channels)?;
    Ok(g.conv2d(scattered, smooth_w, Padding::Same)?)
}

/// Identity 3×3 smoothing kernel (a delta per channel); the smoothing conv is
/// initialized with it so an untrained decode path is exact on patch-aligned
/// content.
pub fn delta_kernel<T: Real>(channels: usize) -> Tensor<T> {
    let mut k = Tensor::zeros(&[channels, channels, 3, 3]);
    for c in 0..channels {
        let idx = ((c * channels + c) * 3 + 1) * 3 + 1;
        k.data_mut()[idx] = T::one();
    }
    k
}
