//! Classical Canny edge detection: Gaussian blur, Sobel gradients,
//! non-maximum suppression along the quantized gradient direction, and
//! hysteresis thresholding relative to the peak gradient magnitude.

use super::CompressError;
use crate::numerics::{Real, Tensor};

/// Detector parameters. Thresholds are fractions of the maximum gradient
/// magnitude of the blurred image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CannyParams {
    pub gaussian_sigma: f64,
    pub low_frac: f64,
    pub high_frac: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        CannyParams { gaussian_sigma: 1.0, low_frac: 0.10, high_frac: 0.20 }
    }
}

/// Boolean edge raster with the parameters that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMap {
    pub height: usize,
    pub width: usize,
    pub edges: Vec<bool>,
    pub params: CannyParams,
}

impl EdgeMap {
    pub fn at(&self, row: usize, col: usize) -> bool {
        self.edges[row * self.width + col]
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }

    /// Builds an edge map directly from a boolean raster (tests, synthetic
    /// cases).
    pub fn from_bools(height: usize, width: usize, edges: Vec<bool>) -> Self {
        assert_eq!(edges.len(), height * width);
        EdgeMap { height, width, edges, params: CannyParams::default() }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable blur with replicated borders.
fn gaussian_blur(img: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let radius = k.len() / 2;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let xi = (x + i).saturating_sub(radius).min(w - 1);
                acc += kv * img[y * w + xi];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let yi = (y + i).saturating_sub(radius).min(h - 1);
                acc += kv * tmp[yi * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Runs the detector on a single-channel `[H, W]` tensor. Deterministic:
/// identical input and parameters give an identical edge map.
pub fn canny<T: Real>(image: &Tensor<T>, params: &CannyParams) -> Result<EdgeMap, CompressError> {
    let shape = image.shape();
    if shape.len() != 2 || shape[0] < 3 || shape[1] < 3 {
        let (h, w) = if shape.len() == 2 { (shape[0], shape[1]) } else { (0, 0) };
        return Err(CompressError::DegenerateDims(h, w));
    }
    let (h, w) = (shape[0], shape[1]);
    let img: Vec<f64> = image.data().iter().map(|v| v.as_f64()).collect();
    let blurred = gaussian_blur(&img, h, w, params.gaussian_sigma);

    // Sobel gradients on interior pixels; the 1-pixel border carries no edges.
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    let mut mag = vec![0.0; h * w];
    let mut g_max = 0.0f64;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let p = |dy: isize, dx: isize| blurred[((y as isize + dy) * w as isize + x as isize + dx) as usize];
            let sx = -p(-1, -1) + p(-1, 1) - 2.0 * p(0, -1) + 2.0 * p(0, 1) - p(1, -1) + p(1, 1);
            let sy = -p(-1, -1) - 2.0 * p(-1, 0) - p(-1, 1) + p(1, -1) + 2.0 * p(1, 0) + p(1, 1);
            gx[y * w + x] = sx;
            gy[y * w + x] = sy;
            let m = sx.hypot(sy);
            mag[y * w + x] = m;
            if m > g_max {
                g_max = m;
            }
        }
    }
    // Rounding in the Sobel sums leaves ~1e-16 noise on constant images;
    // treat gradients below a relative floor as flat.
    let scale = blurred.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if g_max <= 1e-9 * scale.max(f64::MIN_POSITIVE) {
        return Ok(EdgeMap { height: h, width: w, edges: vec![false; h * w], params: *params });
    }

    // Non-maximum suppression along the gradient, quantized to 4 directions.
    let mut thin = vec![0.0; h * w];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let m = mag[y * w + x];
            if m == 0.0 {
                continue;
            }
            let mut angle = gy[y * w + x].atan2(gx[y * w + x]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (n1, n2) = if !(22.5..157.5).contains(&angle) {
                (mag[y * w + x - 1], mag[y * w + x + 1])
            } else if angle < 67.5 {
                (mag[(y + 1) * w + x + 1], mag[(y - 1) * w + x - 1])
            } else if angle < 112.5 {
                (mag[(y - 1) * w + x], mag[(y + 1) * w + x])
            } else {
                (mag[(y - 1) * w + x + 1], mag[(y + 1) * w + x - 1])
            };
            if m >= n1 && m >= n2 {
                thin[y * w + x] = m;
            }
        }
    }

    // Hysteresis: breadth-first growth from strong pixels through weak ones.
    let low = params.low_frac * g_max;
    let high = params.high_frac * g_max;
    let mut edges = vec![false; h * w];
    let mut stack = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            if thin[y * w + x] >= high && !edges[y * w + x] {
                edges[y * w + x] = true;
                stack.push((y, x));
                while let Some((cy, cx)) = stack.pop() {
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            if dy == 0 && dx == 0 {
                                continue;
                            }
                            let ny = cy as isize + dy;
                            let nx = cx as isize + dx;
                            if ny < 1 || ny >= h as isize - 1 || nx < 1 || nx >= w as isize - 1 {
                                continue;
                            }
                            let idx = ny as usize * w + nx as usize;
                            if !edges[idx] && thin[idx] >= low {
                                edges[idx] = true;
                                stack.push((ny as usize, nx as usize));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(EdgeMap { height: h, width: w, edges, params: *params })
}
