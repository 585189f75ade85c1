use crate::error::{Error, Result};

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe)?;
        probe[i] = x[i] - h;
        let fm = f(&probe)?;
        probe[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("objective at component {i} +/- {h:e}")));
        }
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

/// Largest relative disagreement between an analytic gradient and central
/// differences: `max_i |g_i - fd_i| / max(|fd_i|, 1e-8)`.
pub fn relative_error(analytic: &[f64], fd: &[f64]) -> f64 {
    analytic.iter().zip(fd).map(|(a, d)| (a - d).abs() / d.abs().max(1e-8)).fold(0.0, f64::max)
}

/// Compares `grad` against central differences of `f` at `params`.
pub fn check_gradient(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    grad: &[f64],
    params: &[f64],
    h: f64,
) -> Result<f64> {
    let fd = central_difference(f, params, h)?;
    Ok(relative_error(grad, &fd))
}
