//! Central finite-difference gradient verification.

use crate::error::{Error, Result};

/// Denominator floor for [`relative_error`]; below this magnitude the error is
/// effectively absolute.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate at which `max_rel_error` occurred.
    pub worst_index: usize,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Central-difference gradient `(f(p+ε) − f(p−ε)) / 2ε` at every coordinate.
pub fn numeric_gradient<F>(mut f: F, params: &[f64], epsilon: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut p = params.to_vec();
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + epsilon;
        let plus = f(&p);
        p[i] = orig - epsilon;
        let minus = f(&p);
        p[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective not finite around coordinate {i}"
            )));
        }
        out.push((plus - minus) / (2.0 * epsilon));
    }
    Ok(out)
}

/// Compares `analytic` against central differences of `f` at `params`.
///
/// Only coordinates listed in `subset` are probed when it is given.
pub fn grad_check_subset<F>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    subset: Option<&[usize]>,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(Error::dim(
            "grad_check",
            format!("{} params vs {} gradient entries", params.len(), analytic.len()),
        ));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if analytic.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("analytic gradient".into()));
    }
    let all: Vec<usize>;
    let coords = match subset {
        Some(s) => s,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut p = params.to_vec();
    let (mut worst, mut worst_index) = (0.0f64, 0usize);
    for &i in coords {
        let orig = p[i];
        p[i] = orig + epsilon;
        let plus = f(&p);
        p[i] = orig - epsilon;
        let minus = f(&p);
        p[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective not finite around coordinate {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let e = relative_error(analytic[i], numeric);
        if e > worst {
            worst = e;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        worst_index,
        checked: coords.len(),
        tolerance,
        passed: worst < tolerance,
    })
}

/// Compares `analytic` against central differences of `f` at every coordinate.
pub fn grad_check<F>(
    f: F,
    params: &[f64],
    analytic: &[f64],
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    grad_check_subset(f, params, analytic, None, epsilon, tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact() {
        let w = [0.3, -1.7, 2.25, 4.0];
        let f = |p: &[f64]| p.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let r = grad_check(f, &[1.0, 2.0, -3.0, 0.5], &w, 1e-6, 1e-4).unwrap();
        assert!(r.passed);
        assert!(r.max_rel_error < 1e-9, "{}", r.max_rel_error);
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let f = |p: &[f64]| p[0] * p[0] + p[1].sin();
        let p = [0.7f64, 0.2];
        let good = [2.0 * p[0], p[1].cos()];
        assert!(grad_check(f, &p, &good, 1e-6, 1e-4).unwrap().passed);
        let bad = [good[0] * 1.1, good[1]];
        let r = grad_check(f, &p, &bad, 1e-6, 1e-4).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_index, 0);
        assert!(r.max_rel_error > 0.05);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let f = |p: &[f64]| p[0].sqrt();
        assert!(matches!(
            grad_check(f, &[0.0], &[1.0], 1e-6, 1e-4),
            Err(Error::NonFinite(_))
        ));
        assert!(numeric_gradient(|p: &[f64]| p[0].ln(), &[0.0], 1e-6).is_err());
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(grad_check(|_| 0.0, &[1.0, 2.0], &[1.0], 1e-6, 1e-4).is_err());
    }
}
