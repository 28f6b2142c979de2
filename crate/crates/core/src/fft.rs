//! Thin 2-D FFT wrapper over rustfft. No normalization is applied; callers
//! scale as needed.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// In-place 2-D FFT of row-major `data` with `h` rows and `w` columns.
pub(crate) fn fft2d(data: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    assert_eq!(data.len(), h * w);
    let mut planner = FftPlanner::<f64>::new();
    let row_fft =
        if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    for row in data.chunks_mut(w) {
        row_fft.process(row);
    }
    let col_fft =
        if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    let mut col = vec![Complex::default(); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = data[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            data[y * w + x] = col[y];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_then_inverse_recovers_input() {
        let h = 4;
        let w = 8;
        let mut data: Vec<Complex<f64>> =
            (0..h * w).map(|i| Complex::new(i as f64 * 0.37 - 3.0, 0.0)).collect();
        let orig = data.clone();
        fft2d(&mut data, h, w, false);
        fft2d(&mut data, h, w, true);
        let n = (h * w) as f64;
        for (a, b) in data.iter().zip(&orig) {
            assert!((a.re / n - b.re).abs() < 1e-12);
            assert!((a.im / n).abs() < 1e-12);
        }
    }
}
