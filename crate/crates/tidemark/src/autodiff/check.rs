//! Gradient verification: central finite differences against the tape, used
//! by the `grad-check` command and the test suite.

/// Central-difference gradient of `f` at `x`. `f` must be a pure function of
/// its input slice.
pub fn finite_difference<F>(mut f: F, x: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let keep = probe[i];
        probe[i] = keep + eps;
        let up = f(&probe);
        probe[i] = keep - eps;
        let down = f(&probe);
        probe[i] = keep;
        grad[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Largest absolute elementwise difference.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Largest elementwise difference relative to the larger magnitude, with an
/// absolute floor so near-zero pairs compare absolutely.
pub fn max_rel_diff(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
