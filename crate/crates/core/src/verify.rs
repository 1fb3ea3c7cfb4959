//! Finite-difference gradient checking.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Central-difference gradient of `f` at `point`:
/// `(f(x + eps e_k) - f(x - eps e_k)) / (2 eps)` for every coordinate `k`.
pub fn finite_diff_grad<F>(f: F, point: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grads = finite_diff_grads(|x| vec![f(x)], point, eps)?;
    Ok(grads.pop().unwrap_or_default())
}

/// Central-difference gradients of every output of a vector-valued `f`,
/// sharing the evaluations. Returns one gradient per output.
pub fn finite_diff_grads<F>(f: F, point: &[f64], eps: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(CoreError::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut x = point.to_vec();
    let mut grads: Vec<Vec<f64>> = Vec::new();
    for k in 0..point.len() {
        let orig = x[k];
        x[k] = orig + eps;
        let plus = f(&x);
        x[k] = orig - eps;
        let minus = f(&x);
        x[k] = orig;
        if plus.len() != minus.len() {
            return Err(CoreError::InvalidArgument("output length changed between evaluations".into()));
        }
        if let Some(&value) = plus.iter().chain(&minus).find(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite { index: k, value });
        }
        if grads.is_empty() {
            grads = vec![Vec::with_capacity(point.len()); plus.len()];
        }
        for (g, (p, m)) in grads.iter_mut().zip(plus.iter().zip(&minus)) {
            g.push((p - m) / (2.0 * eps));
        }
    }
    Ok(grads)
}

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps near-zero pairs from
/// reporting huge relative errors.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Outcome of comparing an analytic gradient against a numeric one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub param_name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub const DEFAULT_FLOOR: f64 = 1e-7;

    pub fn compare(param_name: impl Into<String>, analytic: &[f64], numeric: &[f64], threshold: f64) -> Self {
        assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
        let max_rel_error = analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| relative_error(a, n, Self::DEFAULT_FLOOR))
            .fold(0.0, f64::max);
        Self {
            param_name: param_name.into(),
            max_rel_error,
            passed: max_rel_error < threshold,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::smooth_l1_loop;

    #[test]
    fn shared_evaluations_match_separate_ones() {
        let f = |x: &[f64]| vec![x[0] * x[1], x[0].sin() + x[1] * x[1]];
        let both = finite_diff_grads(f, &[0.4, -1.3], 1e-5).unwrap();
        for (i, g) in both.iter().enumerate() {
            assert_eq!(g, &finite_diff_grad(|x| f(x)[i], &[0.4, -1.3], 1e-5).unwrap());
        }
    }

    #[test]
    fn sum_of_squares() {
        let g = finite_diff_grad(|x| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-4).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn smooth_l1_branches() {
        let f = |x: &[f64]| smooth_l1_loop(x, &[0.0]);
        let quad = finite_diff_grad(f, &[0.3], 1e-5).unwrap();
        assert!((quad[0] - 0.3).abs() < 1e-6);
        let lin = finite_diff_grad(f, &[2.0], 1e-5).unwrap();
        assert!((lin[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadratics_are_exact() {
        // Central differences have no truncation error up to degree 2.
        let f = |x: &[f64]| 3.0 * x[0] * x[0] - 2.0 * x[0] * x[1] + 0.5 * x[1] + 7.0;
        let g = finite_diff_grad(f, &[0.7, -1.3], 0.25).unwrap();
        assert!((g[0] - (6.0 * 0.7 + 2.6)).abs() < 1e-12);
        assert!((g[1] - (-1.4 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_eps_and_non_finite_values() {
        assert!(finite_diff_grad(|x| x[0], &[1.0], 0.0).is_err());
        let err = finite_diff_grad(|x| 1.0 / x[0], &[0.0], 1e-3);
        assert!(err.is_ok());
        let err = finite_diff_grad(|x| (x[0] - 1e-3).ln(), &[0.0], 1e-3).unwrap_err();
        assert!(matches!(err, CoreError::NonFinite { index: 0, .. }));
    }

    #[test]
    fn report_threshold() {
        let r = GradCheckReport::compare("w", &[1.0, 2.0], &[1.0, 2.001], 1e-3);
        assert!(r.passed);
        assert!(r.max_rel_error > 0.0);
        let r = GradCheckReport::compare("w", &[1.0], &[1.1], 1e-3);
        assert!(!r.passed);
    }
}
