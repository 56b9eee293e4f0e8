//! Central-difference gradient checking against analytic gradients.

use crate::error::{PgibError, Result};
use crate::params::ParameterSet;

pub const DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Worst per-group error `||a - n|| / max(||a||, ||n||, 1e-12)`.
    pub max_rel_error: f64,
    /// Group attaining `max_rel_error`.
    pub param: String,
    /// Coordinate of that group with the largest absolute discrepancy.
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

/// Compares the analytic gradient returned by `loss_fn` at `params` with
/// `(f(x + h) - f(x - h)) / 2h` for every coordinate. Errors are measured
/// per parameter group in the Euclidean norm, so coordinates whose true
/// gradient is near zero do not turn round-off into spurious failures.
///
/// `loss_fn` must be deterministic: any stochastic draws have to be frozen
/// by the caller.
pub fn finite_difference_check<F>(loss_fn: F, params: &ParameterSet, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParameterSet) -> Result<(f64, ParameterSet)>,
{
    if !(h > 0.0) {
        return Err(PgibError::Argument(format!("step h must be positive, got {h}")));
    }
    let (loss, grads) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(PgibError::NonFinite(format!("loss {loss} at the base point")));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        param: String::new(),
        index: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut probe = params.clone();
    for (name, base) in params.iter() {
        let zero;
        let grad = match grads.get(name) {
            Some(g) => g,
            None => {
                zero = ndarray::Array2::zeros(base.dim());
                &zero
            }
        };
        let (mut diff_sq, mut a_sq, mut n_sq) = (0.0, 0.0, 0.0);
        let mut worst = ((0, 0), 0.0, 0.0, -1.0);
        for ((i, j), &x) in base.indexed_iter() {
            probe.expect_mut(name)[[i, j]] = x + h;
            let (plus, _) = loss_fn(&probe)?;
            probe.expect_mut(name)[[i, j]] = x - h;
            let (minus, _) = loss_fn(&probe)?;
            probe.expect_mut(name)[[i, j]] = x;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(PgibError::NonFinite(format!("loss while perturbing {name}[{i},{j}]")));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grad[[i, j]];
            let gap = (analytic - numeric).abs();
            diff_sq += gap * gap;
            a_sq += analytic * analytic;
            n_sq += numeric * numeric;
            if gap > worst.3 {
                worst = ((i, j), analytic, numeric, gap);
            }
            report.coordinates += 1;
        }
        let err = diff_sq.sqrt() / a_sq.sqrt().max(n_sq.sqrt()).max(DENOMINATOR_FLOOR);
        if err > report.max_rel_error || report.param.is_empty() {
            report.max_rel_error = err;
            report.param = name.to_string();
            report.index = worst.0;
            report.analytic = worst.1;
            report.numeric = worst.2;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn half_square(p: &ParameterSet) -> Result<(f64, ParameterSet)> {
        let mut loss = 0.0;
        let mut grads = ParameterSet::new();
        for (name, v) in p.iter() {
            loss += 0.5 * v.iter().map(|x| x * x).sum::<f64>();
            grads.insert(name, v.clone())?;
        }
        Ok((loss, grads))
    }

    #[test]
    fn quadratic_is_exact() {
        let mut p = ParameterSet::new();
        p.insert("a", array![[1.5, -2.0], [0.25, 3.0]]).unwrap();
        p.insert("b", array![[0.7]]).unwrap();
        let r = finite_difference_check(half_square, &p, 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-9, "{r:?}");
        assert_eq!(r.coordinates, 5);
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut p = ParameterSet::new();
        p.insert("a", array![[1.0, 2.0]]).unwrap();
        let wrong = |p: &ParameterSet| -> Result<(f64, ParameterSet)> {
            let (l, mut g) = half_square(p)?;
            g.expect_mut("a")[[0, 1]] *= 2.0;
            Ok((l, g))
        };
        let r = finite_difference_check(wrong, &p, 1e-5).unwrap();
        assert!(r.max_rel_error > 0.4);
        assert_eq!((r.param.as_str(), r.index), ("a", (0, 1)));
    }

    #[test]
    fn non_finite_loss_errors() {
        let mut p = ParameterSet::new();
        p.insert("a", Array2::zeros((1, 1))).unwrap();
        let bad = |p: &ParameterSet| -> Result<(f64, ParameterSet)> { Ok((f64::NAN, p.clone())) };
        assert!(finite_difference_check(bad, &p, 1e-5).is_err());
        assert!(finite_difference_check(half_square, &p, 0.0).is_err());
    }
}
