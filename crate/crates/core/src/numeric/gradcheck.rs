//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Index of the parameter with the largest error.
    pub worst_index: usize,
    pub n_params: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Compares `analytic[k]` against `(L(θ+ε e_k) − L(θ−ε e_k)) / 2ε` with
/// `ε = eps·(1+|θ_k|)` rounded to the nearest power of two, so that the
/// perturbation and the divisor are exact.
pub fn grad_check<F>(
    mut loss: F,
    theta: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!(
            "gradcheck eps {eps} outside [1e-7, 1e-3]"
        )));
    }
    if theta.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "gradcheck: {} parameters but {} gradient entries",
            theta.len(),
            analytic.len()
        )));
    }
    let first = loss(theta);
    let second = loss(theta);
    if first.to_bits() != second.to_bits() {
        return Err(Error::Irreproducible { first, second });
    }

    let mut point = theta.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        n_params: theta.len(),
    };
    for k in 0..theta.len() {
        let step = pow2_step(eps * (1.0 + theta[k].abs()));
        point[k] = theta[k] + step;
        let plus = loss(&point);
        point[k] = theta[k] - step;
        let minus = loss(&point);
        point[k] = theta[k];
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[k], numeric);
        if err > report.max_rel_err || err.is_nan() {
            report.max_rel_err = err;
            report.worst_index = k;
        }
    }
    Ok(report)
}

fn pow2_step(raw: f64) -> f64 {
    2f64.powi(raw.log2().round() as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let r = grad_check(|t| t[0] * t[0], &[3.0], &[6.0], 1e-5).unwrap();
        assert!(r.max_rel_err <= 1e-12, "{}", r.max_rel_err);
    }

    #[test]
    fn doubled_gradient_reports_one_third() {
        let loss = |t: &[f64]| t[0] * t[0] + 3.0 * t[1];
        let r = grad_check(loss, &[1.5, 2.0], &[3.0, 6.0], 1e-5).unwrap();
        assert!((r.max_rel_err - 1.0 / 3.0).abs() < 1e-6);
        assert_eq!(r.worst_index, 1);
    }

    #[test]
    fn detects_nondeterministic_loss() {
        let mut calls = 0.0;
        let loss = move |t: &[f64]| {
            calls += 1.0;
            t[0] + calls
        };
        assert!(matches!(
            grad_check(loss, &[1.0], &[1.0], 1e-5),
            Err(Error::Irreproducible { .. })
        ));
    }

    #[test]
    fn rejects_out_of_range_eps() {
        assert!(grad_check(|t| t[0], &[1.0], &[1.0], 1e-2).is_err());
    }
}
