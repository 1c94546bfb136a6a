use alloc::vec::Vec;

use super::Tensor;

/// Worst disagreement between analytic and finite-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (tensor index, element index) of the worst relative error.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Central differences of `loss` around `params`, compared element-wise
/// with `analytic`.
///
/// Relative error is `|a − f| / max(|a|, |f|, floor)`; the floor keeps
/// gradients that are zero up to rounding from dominating the report.
pub fn check_gradients<F>(
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    step: f64,
    floor: f64,
    mut loss: F,
) -> GradCheckReport
where
    F: FnMut(&[Tensor<f64>]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "one analytic gradient per parameter");
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, worst: (0, 0), checked: 0 };
    for t in 0..work.len() {
        assert_eq!(work[t].shape(), analytic[t].shape());
        for i in 0..work[t].len() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + step;
            let up = loss(&work);
            work[t].data_mut()[i] = orig - step;
            let down = loss(&work);
            work[t].data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * step);
            let a = analytic[t].data()[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (t, i);
            }
        }
    }
    report
}
