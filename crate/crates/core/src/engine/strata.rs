use crate::types::Stratification;

use super::smoothing::EwmaState;

/// Equal-frequency boundaries by nearest rank: boundary `k` is the smallest
/// score `v` such that at least `k / K` of the scores are `<= v`.
///
/// Empty input yields a single stratum. Scores must already lie in [0, 1].
pub fn stratify_by_quantile(scores: &[f64], k: usize) -> Stratification {
    let n = scores.len();
    if n == 0 || k <= 1 {
        return Stratification::single();
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let boundaries = (1..k)
        .map(|i| {
            let rank = (i * n).div_ceil(k).max(1);
            sorted[rank - 1].clamp(0.0, 1.0)
        })
        .collect();
    Stratification::new(boundaries).expect("boundaries clamped to [0, 1]")
}

/// Blends the previous segment's quantile boundaries into the smoothed
/// stratification. Without scores the smoothed boundaries are left alone.
pub fn get_strata(state: &mut EwmaState, prev_scores: &[f64], k: usize) -> Stratification {
    if !prev_scores.is_empty() {
        let observed = stratify_by_quantile(prev_scores, k);
        state.update(observed.boundaries());
    }
    match state.current() {
        Some(b) => Stratification::new(b.iter().map(|x| x.clamp(0.0, 1.0)).collect())
            .expect("boundaries clamped to [0, 1]"),
        None => Stratification::equal_width(k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_boundary() {
        let s = stratify_by_quantile(&[0.0, 0.1, 0.2, 0.3, 0.4, 0.5], 2);
        assert_eq!(s.boundaries(), &[0.2]);
        let s = stratify_by_quantile(&[0.5, 0.4, 0.3, 0.2, 0.1, 0.0], 3);
        assert_eq!(s.boundaries(), &[0.1, 0.3]);
        assert_eq!(stratify_by_quantile(&[0.3, 0.2], 1).k(), 1);
        assert_eq!(stratify_by_quantile(&[], 3).k(), 1);
    }

    #[test]
    fn constant_scores_collapse_boundaries() {
        let s = stratify_by_quantile(&[0.7; 10], 3);
        assert_eq!(s.boundaries(), &[0.7, 0.7]);
        // Everything routes to the top stratum, the lower two are empty.
        assert_eq!(s.route(0.7).unwrap(), 2);
    }

    #[test]
    fn more_strata_than_scores() {
        let s = stratify_by_quantile(&[0.9], 4);
        assert_eq!(s.boundaries(), &[0.9, 0.9, 0.9]);
    }

    #[test]
    fn strata_smoothing_extremes() {
        let first: Vec<f64> = (0..100).map(|i| i as f64 / 200.0).collect();
        let second: Vec<f64> = (0..100).map(|i| 0.5 + i as f64 / 200.0).collect();

        let mut latest = EwmaState::ewma(1.0);
        get_strata(&mut latest, &first, 2);
        let s = get_strata(&mut latest, &second, 2);
        assert_eq!(s, stratify_by_quantile(&second, 2));

        let mut frozen = EwmaState::ewma(0.0);
        let pilot = get_strata(&mut frozen, &first, 2);
        assert_eq!(get_strata(&mut frozen, &second, 2), pilot);
    }
}
