//! Error metrics.

/// Median of a nonempty slice (mean of the middle two for even lengths).
/// NaN-free input is assumed.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Geometric mean of positive values; `None` if any value is not positive.
pub fn geometric_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let log_mean = values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64;
    Some(log_mean.exp())
}

/// Root mean squared error of one estimate per segment: in a single trial
/// this is the absolute error. Segments whose true value is undefined are
/// skipped.
pub fn segment_errors(estimates: &[f64], truth: &[Option<f64>]) -> Vec<Option<f64>> {
    estimates
        .iter()
        .zip(truth)
        .map(|(e, t)| t.map(|t| (e - t).abs()))
        .collect()
}

/// Median over segments of the per-segment RMSE.
pub fn median_segment_rmse(estimates: &[f64], truth: &[Option<f64>]) -> Option<f64> {
    let errs: Vec<f64> = segment_errors(estimates, truth).into_iter().flatten().collect();
    median(&errs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert!((geometric_mean(&[4.0, 9.0]).unwrap() - 6.0).abs() < 1e-12);
        assert_eq!(geometric_mean(&[1.0, 0.0]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        let truth = [Some(1.0), Some(2.0), None];
        assert_eq!(median_segment_rmse(&[1.0, 2.0, 7.0], &truth), Some(0.0));
        assert_eq!(median_segment_rmse(&[0.0, 5.0, 0.0], &truth), Some(2.0));
    }
}
