//! Downscaling accuracy metrics and spectral diagnostics.
//!
//! Conventions, chosen once and used everywhere:
//!
//! - `r2`, `rmse`, and the quantile-restricted RMSEs pool all channels and
//!   pixels into one sample; SSIM is computed per channel and averaged.
//! - "RMSE above the q-th percentile" selects pixels whose *truth* value
//!   strictly exceeds the linear-interpolation percentile of the truth.
//! - SSIM uses the classic 11×11 Gaussian window (σ = 1.5) with stabilizers
//!   `C1 = (0.01·L)²`, `C2 = (0.03·L)²`, where `L` is the truth dynamic
//!   range, and averages over fully valid window positions.
//! - PSNR is `10·log10(L²/MSE)` and reports `+inf` when the images are
//!   identical.
//!
//! All arithmetic runs in f64 regardless of the input dtype.

use std::f64::consts::TAU;

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fft::fft2d;
use crate::gridio::Grid;
use crate::numerics::{Real, Tensor};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("truth is constant; the metric is undefined")]
    ConstantTruth,
    #[error("quantile {0} outside [0, 100)")]
    BadQuantile(f64),
    #[error("no pixels exceed the requested percentile")]
    EmptySelection,
    #[error("image {0}x{1} smaller than the {2}x{2} SSIM window")]
    WindowTooSmall(usize, usize, usize),
    #[error("log1p transform requires non-negative values, found {0}")]
    NegativeInput(f64),
    #[error("degenerate dimensions {0}x{1}; need at least 16x16")]
    DegenerateDims(usize, usize),
}

/// Value-space transform applied before computing metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    None,
    Log1p,
}

impl std::fmt::Display for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Transform::None => write!(f, "none"),
            Transform::Log1p => write!(f, "log1p"),
        }
    }
}

impl std::str::FromStr for Transform {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Transform::None),
            "log1p" => Ok(Transform::Log1p),
            other => Err(format!("unknown transform '{other}' (expected none|log1p)")),
        }
    }
}

fn to_f64_checked<T: Real>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<(Vec<f64>, Vec<f64>), MetricsError> {
    if pred.shape() != truth.shape() {
        return Err(MetricsError::ShapeMismatch(pred.shape().to_vec(), truth.shape().to_vec()));
    }
    Ok((
        pred.data().iter().map(|v| v.as_f64()).collect(),
        truth.data().iter().map(|v| v.as_f64()).collect(),
    ))
}

/// Coefficient of determination: `1 − SS_res / SS_tot` over all values.
pub fn r2<T: Real>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<f64, MetricsError> {
    let (p, t) = to_f64_checked(pred, truth)?;
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    let ss_tot: f64 = t.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::ConstantTruth);
    }
    let ss_res: f64 = p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Root-mean-square error over all values.
pub fn rmse<T: Real>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<f64, MetricsError> {
    let (p, t) = to_f64_checked(pred, truth)?;
    let mse = p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
    Ok(mse.sqrt())
}

/// Linear-interpolation percentile of `values` (NumPy's default rule).
fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    } else {
        sorted[lo]
    }
}

/// RMSE restricted to pixels whose truth strictly exceeds its `q`-th
/// percentile. An extremes-focused error measure.
pub fn rmse_quantile<T: Real>(
    pred: &Tensor<T>,
    truth: &Tensor<T>,
    q: f64,
) -> Result<f64, MetricsError> {
    if !(0.0..100.0).contains(&q) {
        return Err(MetricsError::BadQuantile(q));
    }
    let (p, t) = to_f64_checked(pred, truth)?;
    let threshold = percentile(&t, q);
    let mut acc = 0.0;
    let mut count = 0usize;
    for (a, b) in p.iter().zip(&t) {
        if *b > threshold {
            acc += (a - b) * (a - b);
            count += 1;
        }
    }
    if count == 0 {
        return Err(MetricsError::EmptySelection);
    }
    Ok((acc / count as f64).sqrt())
}

/// Elementwise `log(x + 1)`. Rejects negative inputs.
pub fn log1p_transform<T: Real>(values: &Tensor<T>) -> Result<Tensor<T>, MetricsError> {
    for &v in values.data() {
        if v < T::zero() {
            return Err(MetricsError::NegativeInput(v.as_f64()));
        }
    }
    Ok(values.map(|v| v.ln_1p()))
}

fn gaussian_window(side: usize, sigma: f64) -> Vec<f64> {
    let half = (side / 2) as f64;
    let mut w = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let dy = y as f64 - half;
            let dx = x as f64 - half;
            w.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
        }
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn ssim_plane(p: &[f64], t: &[f64], h: usize, w: usize) -> Result<f64, MetricsError> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricsError::WindowTooSmall(h, w, SSIM_WINDOW));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in t {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let mut range = hi - lo;
    if range == 0.0 {
        range = 1.0; // constant truth: fall back to a unit range
    }
    let c1 = (0.01 * range) * (0.01 * range);
    let c2 = (0.03 * range) * (0.03 * range);
    let win = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let (vh, vw) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut acc = 0.0;
    for oy in 0..vh {
        for ox in 0..vw {
            let mut mu_p = 0.0;
            let mut mu_t = 0.0;
            let mut pp = 0.0;
            let mut tt = 0.0;
            let mut pt = 0.0;
            for wy in 0..SSIM_WINDOW {
                for wx in 0..SSIM_WINDOW {
                    let wgt = win[wy * SSIM_WINDOW + wx];
                    let a = p[(oy + wy) * w + ox + wx];
                    let b = t[(oy + wy) * w + ox + wx];
                    mu_p += wgt * a;
                    mu_t += wgt * b;
                    pp += wgt * a * a;
                    tt += wgt * b * b;
                    pt += wgt * a * b;
                }
            }
            let var_p = pp - mu_p * mu_p;
            let var_t = tt - mu_t * mu_t;
            let cov = pt - mu_p * mu_t;
            let num = (2.0 * mu_p * mu_t + c1) * (2.0 * cov + c2);
            let den = (mu_p * mu_p + mu_t * mu_t + c1) * (var_p + var_t + c2);
            acc += num / den;
        }
    }
    Ok(acc / (vh * vw) as f64)
}

/// Structural similarity. Accepts `[H, W]` or `[C, H, W]`; multi-channel
/// inputs are scored per channel (each with its own truth dynamic range) and
/// averaged.
pub fn ssim<T: Real>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<f64, MetricsError> {
    if pred.shape() != truth.shape() {
        return Err(MetricsError::ShapeMismatch(pred.shape().to_vec(), truth.shape().to_vec()));
    }
    match pred.shape() {
        [h, w] => {
            let p: Vec<f64> = pred.data().iter().map(|v| v.as_f64()).collect();
            let t: Vec<f64> = truth.data().iter().map(|v| v.as_f64()).collect();
            ssim_plane(&p, &t, *h, *w)
        }
        [c, h, w] => {
            let plane = h * w;
            let mut acc = 0.0;
            for ch in 0..*c {
                let p: Vec<f64> =
                    pred.data()[ch * plane..(ch + 1) * plane].iter().map(|v| v.as_f64()).collect();
                let t: Vec<f64> =
                    truth.data()[ch * plane..(ch + 1) * plane].iter().map(|v| v.as_f64()).collect();
                acc += ssim_plane(&p, &t, *h, *w)?;
            }
            Ok(acc / *c as f64)
        }
        other => Err(MetricsError::ShapeMismatch(other.to_vec(), other.to_vec())),
    }
}

/// Peak signal-to-noise ratio in dB; `+inf` when the inputs are identical.
pub fn psnr<T: Real>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<f64, MetricsError> {
    let (p, t) = to_f64_checked(pred, truth)?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &t {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let mut range = hi - lo;
    if range == 0.0 {
        range = 1.0;
    }
    let mse = p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (range * range / mse).log10())
}

/// Radially averaged power spectrum of a 2-D field.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Spectrum {
    /// Integer radial wavenumbers, cycles per domain.
    pub k: Vec<f64>,
    /// Mean power per radial bin, normalized so that summing
    /// `power[i] * counts[i]` over bins recovers the field variance.
    pub power: Vec<f64>,
    /// Fourier modes per bin.
    pub counts: Vec<usize>,
    /// Least-squares slope of `log power` vs `log k` over the central band
    /// `k ∈ [4, min(H, W)/4]`.
    pub fit_slope: f64,
}

impl Spectrum {
    /// Total power: sum of per-mode powers. Equals the (demeaned) field
    /// variance by Parseval's identity.
    pub fn total_power(&self) -> f64 {
        self.power.iter().zip(&self.counts).map(|(p, &c)| p * c as f64).sum()
    }

    /// Plot-ready CSV with `k,power` columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,power\n");
        for (k, p) in self.k.iter().zip(&self.power) {
            out.push_str(&format!("{k},{p:e}\n"));
        }
        out
    }

    /// L2 distance between log-powers over the fit band, against another
    /// spectrum with identical binning.
    pub fn log_power_distance(&self, other: &Spectrum, k_lo: f64, k_hi: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.k.len().min(other.k.len()) {
            let k = self.k[i];
            if k < k_lo || k > k_hi || self.power[i] <= 0.0 || other.power[i] <= 0.0 {
                continue;
            }
            let d = self.power[i].ln() - other.power[i].ln();
            acc += d * d;
        }
        acc.sqrt()
    }
}

/// 2-D FFT, squared magnitudes binned by integer radial wavenumber, and a
/// log-log slope fit over the central band. The field is demeaned first.
pub fn radial_power_spectrum<T: Real>(field: &Tensor<T>) -> Result<Spectrum, MetricsError> {
    let shape = field.shape();
    if shape.len() != 2 {
        return Err(MetricsError::ShapeMismatch(shape.to_vec(), vec![0, 0]));
    }
    let (h, w) = (shape[0], shape[1]);
    if h < 16 || w < 16 {
        return Err(MetricsError::DegenerateDims(h, w));
    }
    let n = (h * w) as f64;
    let mean = field.data().iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let mut buf: Vec<Complex<f64>> =
        field.data().iter().map(|v| Complex::new(v.as_f64() - mean, 0.0)).collect();
    fft2d(&mut buf, h, w, false);

    let kmax = (((h / 2) * (h / 2) + (w / 2) * (w / 2)) as f64).sqrt().ceil() as usize;
    let mut sums = vec![0.0f64; kmax + 1];
    let mut counts = vec![0usize; kmax + 1];
    for ky in 0..h {
        let fy = ky.min(h - ky) as f64;
        for kx in 0..w {
            let fx = kx.min(w - kx) as f64;
            let bin = (fx * fx + fy * fy).sqrt().round() as usize;
            let power = buf[ky * w + kx].norm_sqr() / (n * n);
            sums[bin] += power;
            counts[bin] += 1;
        }
    }
    let k: Vec<f64> = (0..=kmax).map(|i| i as f64).collect();
    let power: Vec<f64> =
        sums.iter().zip(&counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();

    let band_hi = (h.min(w) / 4) as f64;
    let pts: Vec<(f64, f64)> = k
        .iter()
        .zip(&power)
        .filter(|(kk, pp)| **kk >= 4.0 && **kk <= band_hi && **pp > 0.0)
        .map(|(kk, pp)| (kk.ln(), pp.ln()))
        .collect();
    let fit_slope = least_squares_slope(&pts);

    Ok(Spectrum { k, power, counts, fit_slope })
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in pts {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

mod psnr_serde {
    //! PSNR can legitimately be infinite; standard JSON has no Infinity, so
    //! non-finite values are serialized as strings.
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            v.serialize(s)
        } else if *v > 0.0 {
            "inf".serialize(s)
        } else {
            "-inf".serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => other.parse::<f64>().map_err(serde::de::Error::custom),
            },
        }
    }
}

/// One row of downscaling accuracy numbers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub r2: f64,
    pub rmse: f64,
    pub rmse_q68: f64,
    pub rmse_q95: f64,
    pub rmse_q997: f64,
    pub ssim: f64,
    #[serde(with = "psnr_serde")]
    pub psnr: f64,
    pub transform: Transform,
    pub n_pixels: usize,
}

impl MetricsReport {
    /// Arithmetic mean of per-pair rows (the documented aggregation rule);
    /// `n_pixels` sums.
    pub fn mean_of(rows: &[MetricsReport]) -> MetricsReport {
        assert!(!rows.is_empty());
        let n = rows.len() as f64;
        MetricsReport {
            r2: rows.iter().map(|r| r.r2).sum::<f64>() / n,
            rmse: rows.iter().map(|r| r.rmse).sum::<f64>() / n,
            rmse_q68: rows.iter().map(|r| r.rmse_q68).sum::<f64>() / n,
            rmse_q95: rows.iter().map(|r| r.rmse_q95).sum::<f64>() / n,
            rmse_q997: rows.iter().map(|r| r.rmse_q997).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            transform: rows[0].transform,
            n_pixels: rows.iter().map(|r| r.n_pixels).sum(),
        }
    }
}

/// Computes the full report for a prediction/truth tensor pair.
///
/// With [`Transform::Log1p`] the prediction is clamped at zero before the
/// transform (negative precipitation is treated as zero); truth values must
/// be non-negative.
pub fn evaluate_fields<T: Real>(
    pred: &Tensor<T>,
    truth: &Tensor<T>,
    transform: Transform,
) -> Result<MetricsReport, MetricsError> {
    let (pred, truth) = match transform {
        Transform::None => (pred.clone(), truth.clone()),
        Transform::Log1p => {
            let clamped = pred.map(|v| if v < T::zero() { T::zero() } else { v });
            (log1p_transform(&clamped)?, log1p_transform(truth)?)
        }
    };
    Ok(MetricsReport {
        r2: r2(&pred, &truth)?,
        rmse: rmse(&pred, &truth)?,
        rmse_q68: rmse_quantile(&pred, &truth, 68.0)?,
        rmse_q95: rmse_quantile(&pred, &truth, 95.0)?,
        rmse_q997: rmse_quantile(&pred, &truth, 99.7)?,
        ssim: ssim(&pred, &truth)?,
        psnr: psnr(&pred, &truth)?,
        transform,
        n_pixels: truth.len(),
    })
}

/// Grid-level wrapper around [`evaluate_fields`]; geometries must match.
pub fn evaluate(pred: &Grid, truth: &Grid, transform: Transform) -> Result<MetricsReport, MetricsError> {
    let p: Tensor<f64> = pred.to_tensor();
    let t: Tensor<f64> = truth.to_tensor();
    evaluate_fields(&p, &t, transform)
}

/// Synthesis helper for spectrum tests: a pure sinusoid along x at integer
/// wavenumber `cycles`.
pub fn sinusoid_field(h: usize, w: usize, cycles: usize) -> Tensor<f64> {
    Tensor::from_fn(&[h, w], |i| {
        let x = (i % w) as f64;
        (TAU * cycles as f64 * x / w as f64).sin()
    })
}
