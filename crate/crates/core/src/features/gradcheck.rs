//! Central finite-difference gradient checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step for coordinate `θ`: `1e-6 · max(1, |θ|)`.
pub fn fd_step(theta: f64) -> f64 {
    1e-6 * theta.abs().max(1.0)
}

/// Central differences of `f` at `params` for the listed coordinates.
pub fn central_difference<F>(mut f: F, params: &[f64], indices: &[usize]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut x = params.to_vec();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let x0 = x[i];
        let h = fd_step(x0);
        x[i] = x0 + h;
        let up = f(&x)?;
        x[i] = x0 - h;
        let down = f(&x)?;
        x[i] = x0;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::numerical(format!("non-finite function value at coordinate {i}")));
        }
        // divide by the realized step, not the nominal one
        out.push((up - down) / ((x0 + h) - (x0 - h)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub rel: f64,
    /// Differences below this count as agreement regardless of magnitude.
    pub abs: f64,
}

impl Tolerance {
    pub const fn new(rel: f64, abs: f64) -> Self {
        Self { rel, abs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    /// `max |a - n| / max(|a|, |n|, abs/rel)` over the checked coordinates.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub passed: bool,
    pub tolerance: Tolerance,
}

impl GradReport {
    /// Combine several reports into one worst-case report.
    pub fn merge(reports: &[GradReport]) -> Option<GradReport> {
        let mut iter = reports.iter();
        let mut acc = iter.next()?.clone();
        for r in iter {
            if r.max_rel_err > acc.max_rel_err {
                acc.max_rel_err = r.max_rel_err;
                acc.worst_index = r.worst_index;
            }
            acc.max_abs_err = acc.max_abs_err.max(r.max_abs_err);
            acc.checked += r.checked;
            acc.passed &= r.passed;
        }
        Some(acc)
    }
}

/// Compare an analytic gradient against central differences.
///
/// `analytic` holds the full gradient; only `indices` are probed (all of
/// them when `indices` is `None`).
pub fn grad_check<F>(f: F, params: &[f64], analytic: &[f64], indices: Option<&[usize]>, tol: Tolerance) -> Result<GradReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if analytic.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} gradient entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    if analytic.iter().any(|g| !g.is_finite()) {
        return Err(Error::numerical("non-finite analytic gradient"));
    }
    let all: Vec<usize>;
    let indices = match indices {
        Some(ix) => ix,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let numeric = central_difference(f, params, indices)?;
    let floor = tol.abs / tol.rel;
    let mut report = GradReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_index: None,
        checked: indices.len(),
        passed: true,
        tolerance: tol,
    };
    for (&i, n) in indices.iter().zip(&numeric) {
        let a = analytic[i];
        let diff = (a - n).abs();
        let scale = a.abs().max(n.abs());
        let rel = diff / scale.max(floor);
        if diff > tol.abs && diff > tol.rel * scale {
            report.passed = false;
        }
        report.max_abs_err = report.max_abs_err.max(diff);
        if rel > report.max_rel_err || report.worst_index.is_none() {
            report.max_rel_err = rel.max(report.max_rel_err);
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}
