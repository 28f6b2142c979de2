//! Georeferenced raster grids, the ORBG binary format, block coarsening, and
//! a synthetic Gaussian-random-field pair generator.
//!
//! A [`Grid`] is a multi-channel north-up raster: row 0 sits at `lat_max`,
//! storage is channel-major then row-major. Values are float32 on disk and in
//! memory; verification code widens to f64 as needed.
//!
//! # ORBG format
//!
//! Little-endian throughout:
//!
//! | bytes        | content                                             |
//! |--------------|-----------------------------------------------------|
//! | 0–3          | magic `ORB2`                                        |
//! | 4–7          | u32 version = 1                                     |
//! | 8–19         | u32 height, u32 width, u32 channels                 |
//! | 20–51        | f64 lat_min, lat_max, lon_min, lon_max              |
//! | 52…          | `channels` × 32-byte channel names, UTF-8, zero-padded |
//! | next 4       | u32 CRC-32 of the payload                           |
//! | rest         | float32 payload, channel-major then row-major       |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fft::fft2d;
use crate::numerics::{Real, Tensor};
use crate::util::{crc32, fnv1a64};

const MAGIC: &[u8; 4] = b"ORB2";
const VERSION: u32 = 1;
const NAME_BYTES: usize = 32;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected \"ORB2\"")]
    BadMagic,
    #[error("unsupported grid format version {0}")]
    BadVersion(u32),
    #[error("file truncated: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("zero dimension: height, width and channels must all be >= 1")]
    ZeroDimension,
    #[error("payload checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("grid contains non-finite values")]
    NonFinite,
    #[error("data length {actual} does not match channels*height*width = {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("invalid channel name: {0}")]
    BadName(String),
    #[error("invalid latitude span: need -90 <= lat_min < lat_max <= 90, got ({0}, {1})")]
    BadLatSpan(f64, f64),
    #[error("factor {factor} does not divide {height}x{width}")]
    NonDivisible { factor: usize, height: usize, width: usize },
    #[error("dimensions must be powers of two >= 8, got {0}x{1}")]
    NotPowerOfTwo(usize, usize),
    #[error("spectral slope must be negative, got {0}")]
    BadSlope(f64),
    #[error("scale factor must be one of {{2, 4, 8}}, got {0}")]
    BadScaleFactor(usize),
    #[error("manifest error: {0}")]
    Manifest(String),
}

/// A georeferenced multi-channel raster field.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    channels: usize,
    channel_names: Vec<String>,
    lat_span: (f64, f64),
    lon_span: (f64, f64),
    data: Vec<f32>,
}

impl Grid {
    /// Validates all invariants: positive dimensions, matching buffer length,
    /// finite values, a proper latitude span, and one non-empty name per
    /// channel.
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        channel_names: Vec<String>,
        lat_span: (f64, f64),
        lon_span: (f64, f64),
        data: Vec<f32>,
    ) -> Result<Self, GridError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(GridError::ZeroDimension);
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(GridError::DataLength { expected, actual: data.len() });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(GridError::NonFinite);
        }
        if !(-90.0..=90.0).contains(&lat_span.0)
            || !(-90.0..=90.0).contains(&lat_span.1)
            || lat_span.0 >= lat_span.1
        {
            return Err(GridError::BadLatSpan(lat_span.0, lat_span.1));
        }
        if channel_names.len() != channels {
            return Err(GridError::BadName(format!(
                "{} names for {channels} channels",
                channel_names.len()
            )));
        }
        if let Some(bad) = channel_names.iter().find(|n| n.is_empty()) {
            return Err(GridError::BadName(format!("empty name: {bad:?}")));
        }
        Ok(Grid { height, width, channels, channel_names, lat_span, lon_span, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    /// `(lat_min, lat_max)` in degrees; row 0 of the raster is at `lat_max`.
    pub fn lat_span(&self) -> (f64, f64) {
        self.lat_span
    }

    pub fn lon_span(&self) -> (f64, f64) {
        self.lon_span
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[(c * self.height + row) * self.width + col]
    }

    /// `[channels, height, width]` tensor view of the data.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &[self.channels, self.height, self.width],
            self.data.iter().map(|&v| T::from_f64(v as f64)).collect(),
        )
    }

    /// Builds a grid from a `[C, H, W]` tensor, reusing this grid's names and
    /// geo spans (channel count must match).
    pub fn with_tensor<T: Real>(&self, t: &Tensor<T>) -> Result<Grid, GridError> {
        let s = t.shape();
        assert_eq!(s.len(), 3, "expected [C, H, W]");
        Grid::new(
            s[1],
            s[2],
            s[0],
            self.channel_names.clone(),
            self.lat_span,
            self.lon_span,
            t.data().iter().map(|v| v.as_f32()).collect(),
        )
    }

    /// Per-channel mean, accumulated in f64.
    pub fn channel_mean(&self, c: usize) -> f64 {
        let plane = self.channel(c);
        plane.iter().map(|&v| v as f64).sum::<f64>() / plane.len() as f64
    }
}

/// Serializes a grid in the ORBG format. `read_grid` inverts it bit-exactly.
pub fn write_grid(grid: &Grid, path: &Path) -> Result<(), GridError> {
    if !grid.data.iter().all(|v| v.is_finite()) {
        return Err(GridError::NonFinite);
    }
    for name in &grid.channel_names {
        if name.as_bytes().len() > NAME_BYTES {
            return Err(GridError::BadName(format!("name longer than {NAME_BYTES} bytes: {name}")));
        }
    }
    let mut payload = Vec::with_capacity(grid.data.len() * 4);
    for &v in &grid.data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let mut buf = Vec::with_capacity(56 + grid.channels * NAME_BYTES + payload.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(grid.height as u32).to_le_bytes());
    buf.extend_from_slice(&(grid.width as u32).to_le_bytes());
    buf.extend_from_slice(&(grid.channels as u32).to_le_bytes());
    for v in [grid.lat_span.0, grid.lat_span.1, grid.lon_span.0, grid.lon_span.1] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for name in &grid.channel_names {
        let mut field = [0u8; NAME_BYTES];
        field[..name.len()].copy_from_slice(name.as_bytes());
        buf.extend_from_slice(&field);
    }
    buf.extend_from_slice(&crc32(&payload).to_le_bytes());
    buf.extend_from_slice(&payload);
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Reads an ORBG file back into a validated [`Grid`].
pub fn read_grid(path: &Path) -> Result<Grid, GridError> {
    let buf = fs::read(path)?;
    if buf.len() < 4 {
        return Err(GridError::Truncated { expected: 4, actual: buf.len() });
    }
    if &buf[0..4] != MAGIC {
        return Err(GridError::BadMagic);
    }
    let header_len = 52;
    if buf.len() < header_len {
        return Err(GridError::Truncated { expected: header_len, actual: buf.len() });
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(GridError::BadVersion(version));
    }
    let height = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
    let channels = u32::from_le_bytes(buf[16..20].try_into().unwrap()) as usize;
    if height == 0 || width == 0 || channels == 0 {
        return Err(GridError::ZeroDimension);
    }
    let mut geo = [0.0f64; 4];
    for (i, g) in geo.iter_mut().enumerate() {
        *g = f64::from_le_bytes(buf[20 + 8 * i..28 + 8 * i].try_into().unwrap());
    }
    let expected = header_len + channels * NAME_BYTES + 4 + channels * height * width * 4;
    if buf.len() < expected {
        return Err(GridError::Truncated { expected, actual: buf.len() });
    }
    let mut names = Vec::with_capacity(channels);
    let mut off = header_len;
    for _ in 0..channels {
        let raw = &buf[off..off + NAME_BYTES];
        let end = raw.iter().position(|&b| b == 0).unwrap_or(NAME_BYTES);
        let name = std::str::from_utf8(&raw[..end])
            .map_err(|_| GridError::BadName("invalid UTF-8".into()))?;
        names.push(name.to_string());
        off += NAME_BYTES;
    }
    let stored = u32::from_le_bytes(buf[off..off + 4].try_into().unwrap());
    off += 4;
    let payload = &buf[off..off + channels * height * width * 4];
    let computed = crc32(payload);
    if stored != computed {
        return Err(GridError::ChecksumMismatch { stored, computed });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Grid::new(height, width, channels, names, (geo[0], geo[1]), (geo[2], geo[3]), data)
}

/// Block-average coarsening by an integer factor. Each output pixel is the
/// arithmetic mean (f64 accumulation) of the corresponding `factor×factor`
/// block; geo spans are preserved.
pub fn coarsen(fine: &Grid, factor: usize) -> Result<Grid, GridError> {
    if factor == 0 || fine.height % factor != 0 || fine.width % factor != 0 {
        return Err(GridError::NonDivisible {
            factor,
            height: fine.height,
            width: fine.width,
        });
    }
    let (oh, ow) = (fine.height / factor, fine.width / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut data = Vec::with_capacity(fine.channels * oh * ow);
    for c in 0..fine.channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f64;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += fine.get(c, oy * factor + dy, ox * factor + dx) as f64;
                    }
                }
                data.push((acc * inv) as f32);
            }
        }
    }
    Grid::new(oh, ow, fine.channels, fine.channel_names.clone(), fine.lat_span, fine.lon_span, data)
}

fn is_pow2_ge8(n: usize) -> bool {
    n >= 8 && n.is_power_of_two()
}

/// Synthesizes a Gaussian random field with isotropic power spectrum
/// `k^spectral_slope` via spectral synthesis: power-law amplitudes, uniform
/// random phases, Hermitian symmetry, inverse FFT. Each channel draws an
/// independent phase stream derived from `(seed, channel)`; the whole grid is
/// a pure function of its arguments. Channels are normalized to mean 0,
/// standard deviation 1.
pub fn synth_grf(
    height: usize,
    width: usize,
    channels: usize,
    spectral_slope: f64,
    seed: u64,
) -> Result<Grid, GridError> {
    if !is_pow2_ge8(height) || !is_pow2_ge8(width) {
        return Err(GridError::NotPowerOfTwo(height, width));
    }
    if channels == 0 {
        return Err(GridError::ZeroDimension);
    }
    if spectral_slope >= 0.0 {
        return Err(GridError::BadSlope(spectral_slope));
    }
    let mut data = Vec::with_capacity(channels * height * width);
    for c in 0..channels {
        let mut key = Vec::with_capacity(16);
        key.extend_from_slice(&seed.to_le_bytes());
        key.extend_from_slice(&(c as u64).to_le_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(&key));
        let field = synth_channel(height, width, spectral_slope, &mut rng);
        data.extend(field);
    }
    let names = (0..channels).map(|c| format!("var{c}")).collect();
    Grid::new(height, width, channels, names, (-45.0, 45.0), (0.0, 90.0), data)
}

fn synth_channel(h: usize, w: usize, slope: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut spec = vec![Complex::new(0.0, 0.0); h * w];
    for ky in 0..h {
        for kx in 0..w {
            let cy = (h - ky) % h;
            let cx = (w - kx) % w;
            // Visit each conjugate pair once, lexicographically.
            if (cy, cx) < (ky, kx) {
                continue;
            }
            if ky == 0 && kx == 0 {
                continue; // DC stays zero: zero-mean field
            }
            let fy = ky.min(h - ky) as f64;
            let fx = kx.min(w - kx) as f64;
            let k = (fx * fx + fy * fy).sqrt();
            let amp = k.powf(slope / 2.0);
            if (cy, cx) == (ky, kx) {
                // Self-conjugate mode: must be real.
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                spec[ky * w + kx] = Complex::new(sign * amp, 0.0);
            } else {
                let phase = rng.gen::<f64>() * std::f64::consts::TAU;
                let value = Complex::from_polar(amp, phase);
                spec[ky * w + kx] = value;
                spec[cy * w + cx] = value.conj();
            }
        }
    }
    fft2d(&mut spec, h, w, true);
    let n = (h * w) as f64;
    let vals: Vec<f64> = spec.iter().map(|z| z.re / n).collect();
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / var.sqrt();
    vals.iter().map(|v| ((v - mean) * rstd) as f32).collect()
}

/// Generator settings for [`make_pairs`]: the fine-grid geometry and the
/// target spectral slope.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub spectral_slope: f64,
    pub seed: u64,
}

/// Index of the generated training pairs.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PairManifest {
    /// `(input_path, target_path)` relative to the manifest's directory.
    pub pairs: Vec<(String, String)>,
    pub scale_factor: usize,
    pub seed: u64,
}

impl PairManifest {
    pub fn save(&self, path: &Path) -> Result<(), GridError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| GridError::Manifest(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GridError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| GridError::Manifest(e.to_string()))
    }
}

/// Writes `count` synthetic fine grids plus their block-averaged coarse
/// partners and a manifest. Regeneration with the same spec is byte-identical.
pub fn make_pairs(
    out_dir: &Path,
    count: usize,
    scale_factor: usize,
    spec: &GeneratorSpec,
) -> Result<PairManifest, GridError> {
    if ![2, 4, 8].contains(&scale_factor) {
        return Err(GridError::BadScaleFactor(scale_factor));
    }
    fs::create_dir_all(out_dir)?;
    let mut pairs = Vec::with_capacity(count);
    for i in 0..count {
        let mut key = Vec::with_capacity(16);
        key.extend_from_slice(&spec.seed.to_le_bytes());
        key.extend_from_slice(&(i as u64).to_le_bytes());
        let pair_seed = fnv1a64(&key);
        let fine = synth_grf(spec.height, spec.width, spec.channels, spec.spectral_slope, pair_seed)?;
        let coarse = coarsen(&fine, scale_factor)?;
        let input_name = format!("pair_{i:04}_input.orbg");
        let target_name = format!("pair_{i:04}_target.orbg");
        write_grid(&coarse, &out_dir.join(&input_name))?;
        write_grid(&fine, &out_dir.join(&target_name))?;
        pairs.push((input_name, target_name));
    }
    let manifest = PairManifest { pairs, scale_factor, seed: spec.seed };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Loads the `(input, target)` grids named by a manifest entry.
pub fn load_pair(dir: &Path, entry: &(String, String)) -> Result<(Grid, Grid), GridError> {
    Ok((read_grid(&dir.join(&entry.0))?, read_grid(&dir.join(&entry.1))?))
}

/// Convenience: manifest path inside a data directory.
pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_grid() -> Grid {
        Grid::new(1, 1, 1, vec!["t".into()], (0.0, 1.0), (0.0, 1.0), vec![0.0]).unwrap()
    }

    #[test]
    fn smallest_grid_round_trips_with_fixed_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.orbg");
        let g = tiny_grid();
        write_grid(&g, &path).unwrap();
        // magic + version + dims + geo + one name field + checksum + payload
        let expected = 4 + 4 + 3 * 4 + 4 * 8 + NAME_BYTES + 4 + 4;
        assert_eq!(fs::metadata(&path).unwrap().len() as usize, expected);
        assert_eq!(read_grid(&path).unwrap(), g);
    }

    #[test]
    fn nan_grid_is_rejected() {
        let err = Grid::new(1, 1, 1, vec!["t".into()], (0.0, 1.0), (0.0, 1.0), vec![f32::NAN]);
        assert!(matches!(err, Err(GridError::NonFinite)));
    }

    #[test]
    fn bad_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.orbg");
        fs::write(&path, b"XXXX0123456789").unwrap();
        assert!(matches!(read_grid(&path), Err(GridError::BadMagic)));
    }

    #[test]
    fn truncation_names_expected_and_actual_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.orbg");
        write_grid(&tiny_grid(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        match read_grid(&path) {
            Err(GridError::Truncated { expected, actual }) => {
                assert_eq!(expected, bytes.len());
                assert_eq!(actual, bytes.len() - 2);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn zero_dimension_is_rejected_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.orbg");
        write_grid(&tiny_grid(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes()); // height = 0
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_grid(&path), Err(GridError::ZeroDimension)));
    }

    #[test]
    fn coarsen_means_a_2x2_block() {
        let g = Grid::new(2, 2, 1, vec!["t".into()], (0.0, 1.0), (0.0, 1.0),
            vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let c = coarsen(&g, 2).unwrap();
        assert_eq!(c.height(), 1);
        assert_eq!(c.data(), &[4.0]);
        assert_eq!(c.lat_span(), g.lat_span());
    }

    #[test]
    fn coarsen_keeps_constants() {
        let g = Grid::new(8, 8, 2, vec!["a".into(), "b".into()], (0.0, 1.0), (0.0, 1.0),
            vec![2.5; 128]).unwrap();
        for factor in [2, 4, 8] {
            let c = coarsen(&g, factor).unwrap();
            assert!(c.data().iter().all(|&v| v == 2.5));
        }
    }

    #[test]
    fn coarsen_rejects_non_divisible() {
        let g = Grid::new(6, 6, 1, vec!["t".into()], (0.0, 1.0), (0.0, 1.0), vec![0.0; 36]).unwrap();
        assert!(matches!(coarsen(&g, 4), Err(GridError::NonDivisible { .. })));
    }

    #[test]
    fn coarsen_matches_block_mean_oracle_on_ramp() {
        // 8x8 ramp, factor 4, against independently coded block averaging.
        let data: Vec<f32> = (0..64).map(|i| (i * 3) as f32 * 0.5 - 7.0).collect();
        let g = Grid::new(8, 8, 1, vec!["t".into()], (0.0, 1.0), (0.0, 1.0), data.clone()).unwrap();
        let c = coarsen(&g, 4).unwrap();
        for oy in 0..2 {
            for ox in 0..2 {
                let mut acc = 0.0f64;
                for dy in 0..4 {
                    for dx in 0..4 {
                        acc += data[(oy * 4 + dy) * 8 + ox * 4 + dx] as f64;
                    }
                }
                let want = (acc / 16.0) as f32;
                assert_eq!(c.get(0, oy, ox), want);
            }
        }
    }

    #[test]
    fn coarsen_preserves_channel_means() {
        let g = synth_grf(32, 32, 3, -2.0, 11).unwrap();
        let c = coarsen(&g, 4).unwrap();
        for ch in 0..3 {
            let a = g.channel_mean(ch);
            let b = c.channel_mean(ch);
            let scale = a.abs().max(1.0);
            assert!((a - b).abs() / scale < 1e-6, "channel {ch}: {a} vs {b}");
        }
    }

    #[test]
    fn coarsen_composes() {
        let g = synth_grf(32, 32, 1, -2.5, 3).unwrap();
        let two_step = coarsen(&coarsen(&g, 2).unwrap(), 4).unwrap();
        let one_step = coarsen(&g, 8).unwrap();
        for (a, b) in two_step.data().iter().zip(one_step.data()) {
            assert!((a - b).abs() < 1e-6 * a.abs().max(1.0));
        }
    }

    #[test]
    fn synth_grf_is_deterministic() {
        let a = synth_grf(16, 16, 2, -3.0, 42).unwrap();
        let b = synth_grf(16, 16, 2, -3.0, 42).unwrap();
        assert_eq!(a, b);
        let c = synth_grf(16, 16, 2, -3.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_grf_channels_are_independent() {
        let g = synth_grf(16, 16, 23, -2.0, 7).unwrap();
        assert_eq!(g.channels(), 23);
        for c in 1..23 {
            assert_ne!(g.channel(0), g.channel(c), "channel {c} duplicates channel 0");
        }
    }

    #[test]
    fn synth_grf_rejects_bad_inputs() {
        assert!(matches!(synth_grf(10, 16, 1, -2.0, 0), Err(GridError::NotPowerOfTwo(..))));
        assert!(matches!(synth_grf(16, 16, 1, 1.0, 0), Err(GridError::BadSlope(_))));
    }

    #[test]
    fn make_pairs_layout_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GeneratorSpec { height: 32, width: 32, channels: 1, spectral_slope: -2.0, seed: 9 };
        let manifest = make_pairs(dir.path(), 4, 4, &spec).unwrap();
        assert_eq!(manifest.pairs.len(), 4);
        let mut hashes = Vec::new();
        for entry in &manifest.pairs {
            let (input, target) = load_pair(dir.path(), entry).unwrap();
            assert_eq!(target.height(), 4 * input.height());
            assert_eq!(target.width(), 4 * input.width());
            hashes.push(crc32(&fs::read(dir.path().join(&entry.0)).unwrap()));
            hashes.push(crc32(&fs::read(dir.path().join(&entry.1)).unwrap()));
        }
        // 8 grid files + manifest
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 9);

        let dir2 = tempfile::tempdir().unwrap();
        let manifest2 = make_pairs(dir2.path(), 4, 4, &spec).unwrap();
        assert_eq!(manifest, manifest2);
        for (i, entry) in manifest2.pairs.iter().enumerate() {
            assert_eq!(hashes[2 * i], crc32(&fs::read(dir2.path().join(&entry.0)).unwrap()));
            assert_eq!(hashes[2 * i + 1], crc32(&fs::read(dir2.path().join(&entry.1)).unwrap()));
        }
    }

    #[test]
    fn make_pairs_scale_4_shrinks_128_to_32() {
        let dir = tempfile::tempdir().unwrap();
        let spec =
            GeneratorSpec { height: 128, width: 128, channels: 1, spectral_slope: -3.0, seed: 1 };
        let manifest = make_pairs(dir.path(), 1, 4, &spec).unwrap();
        let (input, target) = load_pair(dir.path(), &manifest.pairs[0]).unwrap();
        assert_eq!((input.height(), input.width()), (32, 32));
        assert_eq!((target.height(), target.width()), (128, 128));
    }

    #[test]
    fn make_pairs_rejects_bad_scale() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GeneratorSpec { height: 16, width: 16, channels: 1, spectral_slope: -2.0, seed: 0 };
        assert!(matches!(make_pairs(dir.path(), 1, 3, &spec), Err(GridError::BadScaleFactor(3))));
    }

    #[test]
    fn payload_size_matches_dims_for_large_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.orbg");
        let g = Grid::new(
            720,
            1440,
            3,
            vec!["a".into(), "b".into(), "c".into()],
            (-90.0, 90.0),
            (0.0, 360.0),
            vec![0.25; 3 * 720 * 1440],
        )
        .unwrap();
        write_grid(&g, &path).unwrap();
        let total = fs::metadata(&path).unwrap().len() as usize;
        let overhead = 4 + 4 + 12 + 32 + 3 * NAME_BYTES + 4;
        assert_eq!(total - overhead, 3 * 720 * 1440 * 4);
    }
}
