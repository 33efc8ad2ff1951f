//! Percentile bootstrap confidence intervals for the stratified estimator.
//!
//! Resampling happens with replacement inside every (segment, stratum) cell,
//! so each resample keeps the stratified design: cell sizes are fixed and
//! only the oracle outcomes vary.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{aggregate_estimate, segment_stats};
use crate::rng::rng_for;
use crate::types::{Aggregate, OracleOutcome, SegmentStats, StratumStats};

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;

/// One resolved sample and the cell it was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSample {
    pub segment: usize,
    pub stratum: usize,
    pub outcome: OracleOutcome,
}

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be ascending and nonempty.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn group_cells(samples: &[CellSample], counts: &[Vec<u64>]) -> Result<Vec<Vec<Vec<OracleOutcome>>>> {
    let mut cells: Vec<Vec<Vec<OracleOutcome>>> = counts.iter().map(|c| vec![Vec::new(); c.len()]).collect();
    for s in samples {
        let slot = cells
            .get_mut(s.segment)
            .and_then(|seg| seg.get_mut(s.stratum))
            .ok_or_else(|| Error::invalid(format!("sample cell ({}, {}) has no count", s.segment, s.stratum)))?;
        slot.push(s.outcome);
    }
    Ok(cells)
}

fn point_estimate(agg: Aggregate, cells: &[Vec<Vec<OracleOutcome>>], counts: &[Vec<u64>]) -> Result<f64> {
    let history: Vec<SegmentStats> = cells
        .iter()
        .zip(counts)
        .map(|(seg, c)| {
            let flat: Vec<(usize, OracleOutcome)> = seg
                .iter()
                .enumerate()
                .flat_map(|(k, v)| v.iter().map(move |&o| (k, o)))
                .collect();
            segment_stats(&flat, c)
        })
        .collect();
    aggregate_estimate(agg, &history)
}

/// Percentile bootstrap interval for the AVG estimator.
pub fn bootstrap_ci(
    samples: &[CellSample],
    counts: &[Vec<u64>],
    confidence: f64,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    bootstrap_ci_for(Aggregate::Avg, samples, counts, confidence, resamples, seed)
}

/// Percentile bootstrap interval for any aggregate.
///
/// `counts[t][k]` is the number of records routed to stratum `k` of segment
/// `t`. The returned interval always contains the full-sample estimate.
pub fn bootstrap_ci_for(
    agg: Aggregate,
    samples: &[CellSample],
    counts: &[Vec<u64>],
    confidence: f64,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::invalid("confidence must lie in (0, 1)"));
    }
    if resamples == 0 {
        return Err(Error::invalid("bootstrap needs at least one resample"));
    }
    let cells = group_cells(samples, counts)?;
    if agg == Aggregate::Avg && !samples.iter().any(|s| s.outcome.matches) {
        return Err(Error::NoMatchingSamples);
    }
    let point = point_estimate(agg, &cells, counts)?;

    let mut rng = rng_for(seed);
    let mut history: Vec<SegmentStats> = counts
        .iter()
        .map(|c| SegmentStats {
            strata: c.iter().map(|&count| StratumStats { count, ..Default::default() }).collect(),
        })
        .collect();
    let mut estimates = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        for (seg, stats) in cells.iter().zip(history.iter_mut()) {
            for (cell, st) in seg.iter().zip(stats.strata.iter_mut()) {
                let n = cell.len();
                let (mut matched, mut sum) = (0u64, 0.0);
                for _ in 0..n {
                    let o = cell[rng.random_range(0..n)];
                    if o.matches {
                        matched += 1;
                        sum += o.stat;
                    }
                }
                st.sampled = n as u64;
                st.matched = matched;
                st.p_hat = if n > 0 { matched as f64 / n as f64 } else { 0.0 };
                st.mu_hat = if matched > 0 { sum / matched as f64 } else { 0.0 };
            }
        }
        // A resample can lose every matching record; it carries no estimate.
        if let Ok(e) = aggregate_estimate(agg, &history) {
            estimates.push(e);
        }
    }
    if estimates.is_empty() {
        return Err(Error::NoMatchingSamples);
    }
    estimates.sort_by(f64::total_cmp);
    let tail = (1.0 - confidence) / 2.0;
    let low = quantile_sorted(&estimates, tail).min(point);
    let high = quantile_sorted(&estimates, 1.0 - tail).max(point);
    Ok((low, high))
}
