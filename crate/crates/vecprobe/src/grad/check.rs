//! Finite-difference validation of analytic gradients.

/// Compares `analytic` against central finite differences of `f` at `point`.
///
/// Each coordinate is perturbed by ±`h`; the returned value is the worst
/// relative error over coordinates, with the denominator floored at
/// `max(|analytic|, |numeric|, 1e-8)` so near-zero gradients do not blow
/// up the ratio. The caller decides what error is acceptable; points where
/// `f` is nondifferentiable (kinks, pool ties) legitimately report large
/// errors.
pub fn finite_difference_check(
    mut f: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    h: f64,
) -> f64 {
    assert!(h > 0.0, "step size must be positive");
    assert_eq!(
        point.len(),
        analytic.len(),
        "analytic gradient has wrong arity"
    );
    let mut worst = 0.0f64;
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}
