//! Central finite-difference gradient harness.

use super::tolerances::{FD_STEP, GRAD_ABS_FLOOR, GRAD_REL_TOL};

/// Numeric gradient of `f` with respect to `values`, by central differences
/// on a 64-bit copy: `(f(x+h) − f(x−h)) / 2h` per element.
pub fn fd_grad(values: &[f32], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
    (0..v.len())
        .map(|i| {
            let x0 = v[i];
            v[i] = x0 + FD_STEP;
            let fp = f(&v);
            v[i] = x0 - FD_STEP;
            let fm = f(&v);
            v[i] = x0;
            (fp - fm) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Asserts that analytic (f32 backward) and numeric (f64 central difference)
/// gradients agree elementwise to [`GRAD_REL_TOL`], treating values below
/// [`GRAD_ABS_FLOOR`] on both sides as matching zeros.
pub fn assert_grads_match(label: &str, analytic: &[f32], numeric: &[f64]) {
    assert_eq!(
        analytic.len(),
        numeric.len(),
        "{label}: gradient length mismatch"
    );
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let a = a as f64;
        let diff = (a - n).abs();
        let denom = a.abs().max(n.abs());
        if denom < GRAD_ABS_FLOOR {
            continue;
        }
        assert!(
            diff / denom < GRAD_REL_TOL || diff < GRAD_ABS_FLOOR,
            "{label}[{i}]: analytic {a:.8e} vs numeric {n:.8e} (rel {:.3e})",
            diff / denom
        );
    }
}
