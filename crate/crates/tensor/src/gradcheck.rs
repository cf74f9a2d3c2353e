//! Central finite-difference checks of tape gradients.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Perturbation size.
    pub eps: f64,
    /// Maximum tolerated relative error.
    pub tol: f64,
    /// Magnitude below which errors are measured absolutely.
    pub floor: f64,
    /// Check at most this many coordinates per input, evenly spaced.
    pub max_coords: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            tol: 1e-3,
            floor: 1e-6,
            max_coords: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// `(input, coordinate)` where the relative error peaked.
    pub worst: Option<(usize, usize)>,
    pub coords_checked: usize,
    pub passed: bool,
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backward gradients of the scalar `f(x)` against central
/// differences `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), cfg)
}

/// [`grad_check`] for functions of several inputs.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    drop(tape);

    let mut report = GradCheckReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        worst: None,
        coords_checked: 0,
        passed: true,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let count = cfg.max_coords.map_or(n, |m| m.min(n));
        for j in 0..count {
            let i = if count == n { j } else { j * n / count };
            let orig = input.data()[i];
            probe[which].data_mut()[i] = orig + cfg.eps;
            let plus = eval(&probe)?;
            probe[which].data_mut()[i] = orig - cfg.eps;
            let minus = eval(&probe)?;
            probe[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = analytic[which][i];
            let abs = (a - numeric).abs();
            let rel = relative_error(a, numeric, cfg.floor);
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = Some((which, i));
            }
            report.coords_checked += 1;
        }
    }
    report.passed = report.max_rel_err < cfg.tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_zero_error() {
        // dyadic step and inputs keep the differences exact
        let x = Tensor::from_fn([3, 2], |i| i as f64 - 2.5);
        let cfg = GradCheckConfig {
            eps: 2f64.powi(-13),
            ..Default::default()
        };
        let r = grad_check(|t, v| Ok(t.sum(v)), &x, cfg).unwrap();
        assert_eq!(r.max_rel_err, 0.0);
        assert!(r.passed);
        assert_eq!(r.coords_checked, 6);
    }

    #[test]
    fn wrong_gradient_is_reported() {
        // masked_fill with keep=false cuts the gradient but the numeric
        // derivative of a constant is also zero; use max_axis at a tie instead
        let x = Tensor::new([2], vec![1.0, 1.0]).unwrap();
        let r = grad_check(|t, v| t.max_axis(v, 0), &x, GradCheckConfig::default()).unwrap();
        assert!(!r.passed, "{r:?}");
    }

    #[test]
    fn subsampling_limits_coordinates() {
        let x = Tensor::from_fn([100], |i| i as f64);
        let cfg = GradCheckConfig {
            max_coords: Some(7),
            ..Default::default()
        };
        let r = grad_check(|t, v| Ok(t.sum(v)), &x, cfg).unwrap();
        assert_eq!(r.coords_checked, 7);
    }
}
