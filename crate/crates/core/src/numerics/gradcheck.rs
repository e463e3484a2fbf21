/// Magnitude below which gradient components are compared absolutely.
const ABS_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares the analytic gradient returned by `loss_fn` at `params` with
/// central differences `(f(θ+ε) − f(θ−ε)) / 2ε`, coordinate by coordinate.
///
/// The error of a component is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check<F>(loss_fn: F, params: &[f64], epsilon: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    grad_check_with_floor(loss_fn, params, epsilon, ABS_FLOOR)
}

/// [`grad_check`] with an explicit magnitude floor: components are compared
/// relative to `max(|a|, |n|, floor)`. Central differences of a loss `L`
/// carry an absolute rounding error of roughly `1e-16 * |L| / epsilon`, so
/// losses summing many terms need a floor above that noise level.
pub fn grad_check_with_floor<F>(mut loss_fn: F, params: &[f64], epsilon: f64, floor: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss_fn(params);
    assert_eq!(analytic.len(), params.len(), "gradient length");
    let mut theta = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + epsilon;
        let plus = loss_fn(&theta).0;
        theta[i] = orig - epsilon;
        let minus = loss_fn(&theta).0;
        theta[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        if err > report.max_rel_error || err.is_nan() {
            report = GradCheckReport {
                max_rel_error: err,
                worst_index: i,
                analytic: a,
                numeric,
            };
        }
    }
    report
}
