use serde::Serialize;

use crate::error::{Error, Result};

/// Denominator floor for relative errors, so parameters whose true gradient
/// is zero do not report huge relative noise.
pub const REL_ERR_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub per_param_errs: Vec<(String, f64)>,
}

impl GradReport {
    /// Replace the default `p{i}` labels.
    pub fn with_names(mut self, names: &[String]) -> Self {
        for ((name, _), new) in self.per_param_errs.iter_mut().zip(names) {
            name.clone_from(new);
        }
        self
    }

    /// Parameter with the worst relative error.
    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_param_errs
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compare `analytic` against central differences
/// `(f(p + h·eᵢ) − f(p − h·eᵢ)) / 2h` of `f` at `params`.
pub fn finite_diff_check<F>(mut f: F, params: &[f64], analytic: &[f64], h: f64) -> Result<GradReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(Error::Dimension(format!(
            "{} parameters but {} analytic gradients",
            params.len(),
            analytic.len()
        )));
    }
    if h.is_nan() || h <= 0.0 {
        return Err(Error::validation("h", "step must be positive"));
    }
    let mut p = params.to_vec();
    let mut report = GradReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        per_param_errs: Vec::with_capacity(params.len()),
    };
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let plus = f(&p);
        p[i] = orig - h;
        let minus = f(&p);
        p[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Evaluation(format!(
                "objective is not finite around parameter {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * h);
        let abs = (analytic[i] - numeric).abs();
        let rel = relative_error(analytic[i], numeric);
        report.max_abs_err = report.max_abs_err.max(abs);
        report.max_rel_err = report.max_rel_err.max(rel);
        report.per_param_errs.push((format!("p{i}"), rel));
    }
    Ok(report)
}
