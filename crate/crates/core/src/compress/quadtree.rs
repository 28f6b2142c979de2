//! Quad-tree partitioning by edge density.

use serde::{Deserialize, Serialize};

use super::canny::EdgeMap;
use super::CompressError;

/// One square patch: top-left corner and side length, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Patch {
    pub row: usize,
    pub col: usize,
    pub side: usize,
}

/// The quad-tree result: variable-size square patches tiling the (padded)
/// image exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    /// Row-major by `(row, col)`.
    pub patches: Vec<Patch>,
    pub image_height: usize,
    pub image_width: usize,
    pub min_side: usize,
    pub max_side: usize,
    pub density_threshold: f64,
}

impl PatchSet {
    /// A degenerate quad-tree: uniform `side`-sized patches.
    pub fn uniform(
        image_height: usize,
        image_width: usize,
        side: usize,
    ) -> Result<Self, CompressError> {
        if side == 0 || image_height % side != 0 || image_width % side != 0 {
            return Err(CompressError::BadSides(format!(
                "side {side} does not tile {image_height}x{image_width}"
            )));
        }
        let mut patches = Vec::new();
        for row in (0..image_height).step_by(side) {
            for col in (0..image_width).step_by(side) {
                patches.push(Patch { row, col, side });
            }
        }
        Ok(PatchSet {
            patches,
            image_height,
            image_width,
            min_side: side,
            max_side: side,
            density_threshold: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Checks disjointness and exact coverage by rasterizing every patch.
    pub fn validate_coverage(&self) -> Result<(), CompressError> {
        let mut hits = vec![0u8; self.image_height * self.image_width];
        for p in &self.patches {
            if p.row + p.side > self.image_height || p.col + p.side > self.image_width {
                return Err(CompressError::LayoutMismatch(format!(
                    "patch {p:?} overflows {}x{}",
                    self.image_height, self.image_width
                )));
            }
            for y in p.row..p.row + p.side {
                for x in p.col..p.col + p.side {
                    hits[y * self.image_width + x] += 1;
                }
            }
        }
        if let Some(idx) = hits.iter().position(|&h| h != 1) {
            return Err(CompressError::LayoutMismatch(format!(
                "pixel ({}, {}) covered {} times",
                idx / self.image_width,
                idx % self.image_width,
                hits[idx]
            )));
        }
        Ok(())
    }

    /// JSON form used in reports: a header plus `[row, col, side]` triples.
    pub fn to_json(&self) -> String {
        let doc = PatchSetJson {
            min_side: self.min_side,
            max_side: self.max_side,
            threshold: self.density_threshold,
            image_height: self.image_height,
            image_width: self.image_width,
            patches: self.patches.iter().map(|p| [p.row, p.col, p.side]).collect(),
        };
        serde_json::to_string(&doc).expect("patch set serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CompressError> {
        let doc: PatchSetJson =
            serde_json::from_str(text).map_err(|e| CompressError::Serde(e.to_string()))?;
        Ok(PatchSet {
            patches: doc.patches.iter().map(|&[row, col, side]| Patch { row, col, side }).collect(),
            image_height: doc.image_height,
            image_width: doc.image_width,
            min_side: doc.min_side,
            max_side: doc.max_side,
            density_threshold: doc.threshold,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PatchSetJson {
    min_side: usize,
    max_side: usize,
    threshold: f64,
    image_height: usize,
    image_width: usize,
    patches: Vec<[usize; 3]>,
}

/// Recursively splits every `max_side` cell whose edge density strictly
/// exceeds `density_threshold`, stopping at `min_side`. `max_side` must be a
/// power-of-two multiple of `min_side` and the edge map must be padded to a
/// multiple of `max_side`.
pub fn quadtree_partition(
    edges: &EdgeMap,
    min_side: usize,
    max_side: usize,
    density_threshold: f64,
) -> Result<PatchSet, CompressError> {
    if min_side == 0 || max_side < min_side {
        return Err(CompressError::BadSides(format!("min {min_side}, max {max_side}")));
    }
    let ratio = max_side / min_side;
    if ratio * min_side != max_side || !ratio.is_power_of_two() {
        return Err(CompressError::BadSides(format!(
            "max_side {max_side} is not a power-of-two multiple of min_side {min_side}"
        )));
    }
    if edges.height % max_side != 0 || edges.width % max_side != 0 {
        return Err(CompressError::LayoutMismatch(format!(
            "{}x{} edge map is not a multiple of max_side {max_side}; pad first",
            edges.height, edges.width
        )));
    }

    // Summed-area table of edge counts for O(1) density queries.
    let (h, w) = (edges.height, edges.width);
    let mut sat = vec![0u64; (h + 1) * (w + 1)];
    for y in 0..h {
        for x in 0..w {
            let e = edges.at(y, x) as u64;
            sat[(y + 1) * (w + 1) + x + 1] =
                e + sat[y * (w + 1) + x + 1] + sat[(y + 1) * (w + 1) + x] - sat[y * (w + 1) + x];
        }
    }
    let count = |row: usize, col: usize, side: usize| -> u64 {
        sat[(row + side) * (w + 1) + col + side] + sat[row * (w + 1) + col]
            - sat[row * (w + 1) + col + side]
            - sat[(row + side) * (w + 1) + col]
    };

    let mut patches = Vec::new();
    let mut stack: Vec<Patch> = Vec::new();
    for row in (0..h).step_by(max_side) {
        for col in (0..w).step_by(max_side) {
            stack.push(Patch { row, col, side: max_side });
            while let Some(p) = stack.pop() {
                let density = count(p.row, p.col, p.side) as f64 / (p.side * p.side) as f64;
                if p.side > min_side && density > density_threshold {
                    let half = p.side / 2;
                    for (dy, dx) in [(0, 0), (0, half), (half, 0), (half, half)] {
                        stack.push(Patch { row: p.row + dy, col: p.col + dx, side: half });
                    }
                } else {
                    patches.push(p);
                }
            }
        }
    }
    patches.sort_by_key(|p| (p.row, p.col));
    Ok(PatchSet {
        patches,
        image_height: h,
        image_width: w,
        min_side,
        max_side,
        density_threshold,
    })
}

/// Token-count reduction relative to uniform patching at `uniform_side`
/// (normally `min_side`): `(area / uniform_side²) / patch_count`.
pub fn compression_ratio(ps: &PatchSet, uniform_side: usize) -> f64 {
    let uniform = (ps.image_height * ps.image_width) as f64 / (uniform_side * uniform_side) as f64;
    uniform / ps.patches.len() as f64
}
