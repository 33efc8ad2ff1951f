//! Closed-form allocation formulas, per-stratum statistics and the estimator.
//!
//! Notation used in this module: for stratum `k` of a segment, `D_k` is the
//! number of records routed to it, `p_k` the predicate-positive rate and
//! `sigma_k` the standard deviation of the statistic over matching records.
//! The per-segment budget `N` splits into `N1` defensive calls (`N1 / K` per
//! stratum) and `N2` dynamic calls distributed by an allocation `a`.

use crate::error::{Error, Result};
use crate::types::{Aggregate, Allocation, BudgetPlan, OracleOutcome, SegmentStats, StratumStats};

fn check_lengths(counts: &[u64], p: &[f64], sigma: &[f64], k: usize) -> Result<()> {
    if counts.len() != k || p.len() != k || sigma.len() != k {
        return Err(Error::invalid(format!(
            "expected {k} strata, got counts={} p={} sigma={}",
            counts.len(),
            p.len(),
            sigma.len()
        )));
    }
    Ok(())
}

/// MSE-optimal split of the dynamic budget given true stratum parameters.
///
/// Without binding constraints every stratum receives `N * v_k / sum(v)` calls
/// in total, where `v_k = D_k * sqrt(p_k) * sigma_k`, which after subtracting
/// the `N1 / K` defensive calls gives
/// `a_k = v_k / ((N2 / N) * sum(v)) - N1 / (N2 * K)`.
///
/// When the defensive floor alone already over-covers a stratum that formula
/// goes negative. Such strata are clamped to zero and the remaining dynamic
/// budget is re-solved over the others (water-filling), which is the exact
/// minimizer of [`expected_mse`] over the simplex.
pub fn optimal_alloc(counts: &[u64], p: &[f64], sigma: &[f64], plan: &BudgetPlan) -> Result<Allocation> {
    let k = plan.k;
    check_lengths(counts, p, sigma, k)?;
    if k == 1 {
        return Ok(Allocation::uniform(1));
    }
    let n2 = plan.dynamic() as f64;
    if n2 <= 0.0 {
        return Err(Error::invalid("optimal allocation needs a positive dynamic budget"));
    }
    let v: Vec<f64> = (0..k)
        .map(|i| counts[i] as f64 * p[i].max(0.0).sqrt() * sigma[i].max(0.0))
        .collect();
    if !v.iter().any(|&x| x > 0.0) {
        return Err(Error::DegenerateStream);
    }

    let floor = plan.defensive as f64 / k as f64;
    let mut active: Vec<bool> = v.iter().map(|&x| x > 0.0).collect();
    // Per-stratum total calls are `scale * v_k` on the active set.
    let scale = loop {
        let n_active = active.iter().filter(|&&a| a).count() as f64;
        let v_active: f64 = (0..k).filter(|&i| active[i]).map(|i| v[i]).sum();
        let scale = (n2 + n_active * floor) / v_active;
        let mut changed = false;
        for i in 0..k {
            if active[i] && scale * v[i] < floor {
                active[i] = false;
                changed = true;
            }
        }
        if !changed {
            break scale;
        }
    };

    let raw: Vec<f64> = (0..k)
        .map(|i| if active[i] { ((scale * v[i] - floor) / n2).max(0.0) } else { 0.0 })
        .collect();
    Allocation::from_weights(&raw)
}

/// Expected squared error of the per-segment stratified estimator when
/// stratum `k` receives `p_k * (N1 / K + N2 * a_k)` matching samples:
/// `sum_k w_k^2 sigma_k^2 / (p_k (N1 / K + N2 a_k))` with
/// `w_k = D_k p_k / sum_j D_j p_j`.
pub fn expected_mse(
    counts: &[u64],
    p: &[f64],
    sigma: &[f64],
    alloc: &Allocation,
    plan: &BudgetPlan,
) -> Result<f64> {
    let k = plan.k;
    check_lengths(counts, p, sigma, k)?;
    if alloc.k() != k {
        return Err(Error::invalid("allocation length does not match the stratum count"));
    }
    let p_all: f64 = (0..k).map(|i| counts[i] as f64 * p[i]).sum();
    if !(p_all > 0.0) {
        return Err(Error::DegenerateStream);
    }
    let floor = plan.defensive as f64 / k as f64;
    let n2 = plan.dynamic() as f64;
    let mut mse = 0.0;
    for (i, &a) in alloc.fractions().iter().enumerate() {
        let w = counts[i] as f64 * p[i] / p_all;
        let numerator = w * w * sigma[i] * sigma[i];
        if numerator == 0.0 {
            continue;
        }
        let effective = p[i] * (floor + n2 * a);
        if !(effective > 0.0) {
            return Err(Error::ZeroEffectiveSamples { stratum: i });
        }
        mse += numerator / effective;
    }
    Ok(mse)
}

/// The closed form of [`expected_mse`] at the unconstrained optimum:
/// `(1 / (N p_all^2)) * (sum_k v_k)^2` with `v_k = D_k sqrt(p_k) sigma_k`.
pub fn optimal_mse_closed_form(counts: &[u64], p: &[f64], sigma: &[f64], plan: &BudgetPlan) -> Result<f64> {
    check_lengths(counts, p, sigma, plan.k)?;
    let p_all: f64 = counts.iter().zip(p).map(|(&c, &p)| c as f64 * p).sum();
    if !(p_all > 0.0) {
        return Err(Error::DegenerateStream);
    }
    let v: f64 = (0..plan.k).map(|i| counts[i] as f64 * p[i].sqrt() * sigma[i]).sum();
    Ok(v * v / (plan.total as f64 * p_all * p_all))
}

/// Per-stratum statistics of one segment.
///
/// `samples` pairs each resolved record's zero-based stratum with its oracle
/// outcome; `counts` holds the number of records routed to every stratum.
/// The variance uses the unbiased `n - 1` divisor and is zero with fewer than
/// two matching samples; the mean is zero without matching samples.
///
/// # Panics
///
/// If a sample names a stratum outside `counts`.
pub fn segment_stats(samples: &[(usize, OracleOutcome)], counts: &[u64]) -> SegmentStats {
    let k = counts.len();
    let mut strata: Vec<StratumStats> = counts
        .iter()
        .map(|&count| StratumStats { count, ..Default::default() })
        .collect();
    for &(s, outcome) in samples {
        let cell = &mut strata[s];
        cell.sampled += 1;
        if outcome.matches {
            cell.matched += 1;
            cell.stat_sum += outcome.stat;
        }
    }
    let mut sq_dev = vec![0.0; k];
    for cell in strata.iter_mut() {
        if cell.matched > 0 {
            cell.mu_hat = cell.stat_sum / cell.matched as f64;
        }
    }
    for &(s, outcome) in samples {
        if outcome.matches {
            let d = outcome.stat - strata[s].mu_hat;
            sq_dev[s] += d * d;
        }
    }
    let total: u64 = counts.iter().sum();
    for (cell, sq) in strata.iter_mut().zip(sq_dev) {
        if cell.sampled > 0 {
            cell.p_hat = cell.matched as f64 / cell.sampled as f64;
        }
        if cell.matched > 1 {
            cell.sigma_hat = (sq / (cell.matched - 1) as f64).sqrt();
        }
        if total > 0 {
            cell.w_hat = cell.p_hat.sqrt() * cell.count as f64 / total as f64;
        }
    }
    SegmentStats { strata }
}

/// Weighted average of stratum means over all segments and strata, each
/// cell weighted by its estimated matching population `p_hat * count`.
pub fn get_prediction(history: &[SegmentStats]) -> Result<f64> {
    let (num, den) = history
        .iter()
        .flat_map(|s| s.strata.iter())
        .fold((0.0, 0.0), |(num, den), c| {
            let weight = c.p_hat * c.count as f64;
            (num + c.mu_hat * weight, den + weight)
        });
    if !(den > 0.0) {
        return Err(Error::NoMatchingSamples);
    }
    Ok(num / den)
}

/// Estimated number of predicate-matching records, `sum p_hat * count`.
pub fn matching_population(history: &[SegmentStats]) -> f64 {
    history
        .iter()
        .flat_map(|s| s.strata.iter())
        .map(|c| c.p_hat * c.count as f64)
        .sum()
}

/// Query answer for an aggregate: AVG is [`get_prediction`], COUNT the
/// estimated matching population and SUM their product.
pub fn aggregate_estimate(agg: Aggregate, history: &[SegmentStats]) -> Result<f64> {
    match agg {
        Aggregate::Avg => get_prediction(history),
        Aggregate::Count => Ok(matching_population(history)),
        Aggregate::Sum => {
            let count = matching_population(history);
            if count == 0.0 {
                Ok(0.0)
            } else {
                Ok(get_prediction(history)? * count)
            }
        }
    }
}
