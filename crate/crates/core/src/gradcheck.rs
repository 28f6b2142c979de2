//! Finite-difference gradient verification.
//!
//! Central differences evaluate the forward computation only, so they are an
//! oracle independent of every backward implementation in this crate. The
//! test suites run each differentiable primitive and the full model composite
//! through [`check_gradients`] in f64.

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Result of comparing analytic against finite-difference gradients.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub worst_index: usize,
}

/// Compares gradient vectors. Relative error uses `max(1, |fd|)` in the
/// denominator so near-zero entries are judged absolutely.
pub fn compare_gradients(analytic: &[f64], fd: &[f64]) -> GradCheck {
    assert_eq!(analytic.len(), fd.len());
    let mut check = GradCheck { max_abs_err: 0.0, max_rel_err: 0.0, worst_index: 0 };
    for (i, (&a, &f)) in analytic.iter().zip(fd).enumerate() {
        let abs = (a - f).abs();
        let rel = abs / f.abs().max(1.0);
        if abs > check.max_abs_err {
            check.max_abs_err = abs;
        }
        if rel > check.max_rel_err {
            check.max_rel_err = rel;
            check.worst_index = i;
        }
    }
    check
}

/// Verifies `loss_of(x)` against its claimed analytic gradient.
///
/// `analytic` is the gradient produced by a backward pass at `x`; the
/// function recomputes it by central differences and returns the comparison.
pub fn check_gradients(
    loss_of: impl Fn(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    h: f64,
) -> GradCheck {
    let fd = finite_difference(&loss_of, x, h);
    compare_gradients(analytic, &fd)
}
