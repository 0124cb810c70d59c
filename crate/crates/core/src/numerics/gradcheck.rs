use super::tensor::Tensor;
use super::NumericsError;

/// Compares analytic gradients against central differences.
///
/// `f` returns the scalar value and the analytic gradient (one tensor per
/// parameter) at the given parameters. The result is the largest
/// `|a - n| / max(|a|, |n|, 1e-8)` over all coordinates.
pub fn finite_diff_check<F>(mut f: F, params: &[Tensor<f64>], h: f64) -> Result<f64, NumericsError>
where
    F: FnMut(&[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>), NumericsError>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(NumericsError::InvalidStep(h));
    }
    let (_, analytic) = f(params)?;
    if analytic.len() != params.len() {
        return Err(NumericsError::ShapeMismatch(format!(
            "{} gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for (pi, grad) in analytic.iter().enumerate() {
        params[pi].same_shape(grad)?;
        for j in 0..params[pi].len() {
            let orig = params[pi].data()[j];
            work[pi].data_mut()[j] = orig + h;
            let (plus, _) = f(&work)?;
            work[pi].data_mut()[j] = orig - h;
            let (minus, _) = f(&work)?;
            work[pi].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
