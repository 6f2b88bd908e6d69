//! Central finite-difference gradient checking.

use crate::numerics::ParamSet;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error, so entries whose true
    /// gradient is ~0 are judged on an absolute scale.
    pub abs_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_entry: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    /// Some perturbed evaluation returned NaN or infinity.
    pub non_finite: bool,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradients currently stored in `params` against
/// central differences of `f`, entry by entry, over every trainable parameter.
///
/// The caller is responsible for having filled the `grad` slots at the current
/// parameter values before calling this.
pub fn check_gradient<P, F>(params: &mut P, mut f: F, opts: GradCheckOptions) -> GradCheckReport
where
    P: ParamSet + ?Sized,
    F: FnMut(&P) -> f64,
{
    assert!(opts.step > 0.0, "finite-difference step must be positive");
    let count = params.params().len();
    let mut checks = Vec::with_capacity(count);
    for idx in 0..count {
        let (name, trainable, analytic) = {
            let p = &params.params()[idx];
            (p.name.clone(), p.trainable, p.grad.as_slice().to_vec())
        };
        if !trainable {
            continue;
        }
        let mut check = ParamCheck {
            name,
            entries: analytic.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_entry: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
            non_finite: false,
            passed: true,
        };
        for (e, &a) in analytic.iter().enumerate() {
            let original = params.params()[idx].value.as_slice()[e];
            params.params_mut()[idx].value.as_mut_slice()[e] = original + opts.step;
            let plus = f(params);
            params.params_mut()[idx].value.as_mut_slice()[e] = original - opts.step;
            let minus = f(params);
            params.params_mut()[idx].value.as_mut_slice()[e] = original;

            if !plus.is_finite() || !minus.is_finite() {
                check.non_finite = true;
                check.passed = false;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let rel = relative_error(a, numeric, opts.abs_floor);
            check.max_abs_error = check.max_abs_error.max((a - numeric).abs());
            if e == 0 || rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst_entry = e;
                check.analytic_at_worst = a;
                check.numeric_at_worst = numeric;
            }
        }
        check.passed &= check.max_rel_error <= opts.tolerance;
        checks.push(check);
    }
    let max_rel_error = checks.iter().fold(0.0, |m: f64, c| m.max(c.max_rel_error));
    let passed = checks.iter().all(|c| c.passed);
    GradCheckReport {
        params: checks,
        max_rel_error,
        passed,
    }
}

/// Central-difference gradient of `f` at `point`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], step: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + step;
            let plus = f(&x);
            x[i] = point[i] - step;
            let minus = f(&x);
            x[i] = point[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}
