//! Central finite-difference utilities for verifying analytic gradients.

/// Central difference approximation of `d f / d x[k]` for every coordinate.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for k in 0..x.len() {
        probe[k] = x[k] + step;
        let plus = f(&probe);
        probe[k] = x[k] - step;
        let minus = f(&probe);
        probe[k] = x[k];
        out[k] = (plus - minus) / (2.0 * step);
    }
    out
}

/// Normalized relative error `|a - b| / max(1, |a|, |b|)`; the unit floor in
/// the denominator keeps finite-difference noise on near-zero gradients from
/// reading as a large relative error.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Largest normalized relative error across two gradient vectors.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}
