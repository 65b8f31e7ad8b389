//! Finite-difference gradient oracle.
//!
//! Independent of the tape: callers supply a closure that rebuilds the
//! computation from raw values, and the oracle perturbs one coordinate at a
//! time with central differences. Double precision only — the step/roundoff
//! trade-off makes single precision useless here.

/// Central-difference gradient of `f` at `at`, one coordinate at a time.
pub fn central_diff<F>(mut f: F, at: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(at.len());
    let mut point = at.to_vec();
    for i in 0..at.len() {
        let orig = point[i];
        point[i] = orig + step;
        let plus = f(&point);
        point[i] = orig - step;
        let minus = f(&point);
        point[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    grad
}

/// Largest per-element relative error between two gradient vectors.
///
/// The denominator is floored at 1e-6 so that coordinates with (near-)zero
/// true gradient compare by absolute error instead of blowing up.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
