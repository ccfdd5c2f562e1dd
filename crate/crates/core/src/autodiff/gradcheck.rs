//! Central finite-difference oracle for analytic gradients.

use super::params::ParamStore;
use super::tape::GradMap;
use crate::error::{FpbError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Entrywise: max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    pub max_rel_error: f64,
    /// Per parameter tensor, with L2 norms in place of absolute values:
    /// max ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8).
    /// Entries far below the rounding floor of the central difference
    /// (about ulp(f) / eps) cannot dominate this measure.
    pub max_tensor_rel_error: f64,
    pub worst_tensor: String,
    pub worst_param: String,
    pub worst_index: usize,
    /// Analytic and numeric values at the worst entry.
    pub worst_pair: (f64, f64),
    pub checked: usize,
}

/// Compares `analytic` against central differences of `f` around `params`.
///
/// `f` must be deterministic; it is evaluated twice at the unperturbed point
/// and any mismatch is reported as an oracle error.
pub fn finite_difference_check<F>(
    mut f: F,
    params: &ParamStore,
    analytic: &GradMap,
    eps: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let base_a = f(params)?;
    let base_b = f(params)?;
    if base_a.to_bits() != base_b.to_bits() {
        return Err(FpbError::Oracle(format!(
            "function is not deterministic: {base_a} vs {base_b}"
        )));
    }
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_tensor_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_param: String::new(),
        worst_index: 0,
        worst_pair: (0.0, 0.0),
        checked: 0,
    };
    for (id, grad) in analytic {
        let n = params.value(*id).len();
        if grad.len() != n {
            return Err(FpbError::Oracle(format!(
                "gradient for {} has {} entries, parameter has {n}",
                params.name(*id),
                grad.len()
            )));
        }
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let orig = params.value(*id).data()[i];
            work.value_mut(*id).data_mut()[i] = orig + eps;
            let up = f(&work)?;
            work.value_mut(*id).data_mut()[i] = orig - eps;
            let down = f(&work)?;
            work.value_mut(*id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grad.data()[i];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst_param = params.name(*id).to_string();
                report.worst_index = i;
                report.worst_pair = (a, numeric);
            }
        }
        let rel = diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(1e-8);
        if rel > report.max_tensor_rel_error || !rel.is_finite() {
            report.max_tensor_rel_error = rel;
            report.worst_tensor = params.name(*id).to_string();
        }
    }
    Ok(report)
}
