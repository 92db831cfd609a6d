//! Central finite-difference gradient oracle.

use super::Tensor;

/// Compare analytic gradients against central finite differences of a pure
/// scalar function of the parameters. Returns the maximum relative error,
/// with denominator `max(|analytic|, |numeric|, 1e-8)`.
///
/// Only meaningful at `Precision::F64`.
pub fn finite_difference_check<F>(
    params: &[Tensor],
    analytic: &[Tensor],
    eps: f64,
    f: F,
) -> f64
where
    F: Fn(&[Tensor]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        assert_eq!(params[pi].shape, grad.shape, "grad shape mismatch");
        for i in 0..params[pi].numel() {
            let orig = work[pi].data[i];
            work[pi].data[i] = orig + eps;
            let plus = f(&work);
            work[pi].data[i] = orig - eps;
            let minus = f(&work);
            work[pi].data[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}
