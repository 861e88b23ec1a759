use super::params::{Gradient, ParameterVector};
use crate::{LspError, Result};

/// Compares `analytic` with central differences of `loss_fn` on the sampled
/// coordinates and returns the largest relative error
/// `|analytic - fd| / max(1e-12, |fd|)`.
///
/// `loss_fn` is evaluated twice at `params` first; if the two values are not
/// bit-identical the oracle is refused.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    analytic: &Gradient,
    params: &ParameterVector,
    step: f64,
    sample: &[usize],
) -> Result<f64>
where
    F: FnMut(&ParameterVector) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(LspError::Usage(format!("finite-difference step {step} must be positive")));
    }
    if analytic.len() != params.len() {
        return Err(LspError::Usage("gradient and parameter lengths differ".into()));
    }
    let first = loss_fn(params)?;
    let second = loss_fn(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(LspError::OracleInvalid(format!(
            "loss is not deterministic ({first} then {second})"
        )));
    }
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for &i in sample {
        if i >= params.len() {
            return Err(LspError::Usage(format!("sample index {i} out of range")));
        }
        let x = params.values()[i];
        probe.values_mut()[i] = x + step;
        let plus = loss_fn(&probe)?;
        probe.values_mut()[i] = x - step;
        let minus = loss_fn(&probe)?;
        probe.values_mut()[i] = x;
        let fd = (plus - minus) / (2.0 * step);
        let err = (analytic.values()[i] - fd).abs() / fd.abs().max(1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}
