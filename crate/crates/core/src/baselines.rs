//! Reference samplers the engine is compared against.
//!
//! * [`uniform_baseline`] draws one uniform sample of the whole query's
//!   budget across every segment, with no proxy.
//! * [`fixed_stratified_baseline`] stratifies every segment with fixed proxy
//!   boundaries and splits each segment's budget evenly over the strata.
//!
//! Both consume the stream once and only buffer their reservoirs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{aggregate_estimate, segment_stats};
use crate::oracle::{BudgetedOracle, Oracle, OracleError};
use crate::rng::{derive_seed, label, rng_for};
use crate::sampling::{capacities, Reservoir};
use crate::types::{Aggregate, Allocation, BudgetPlan, OracleOutcome, QueryEstimate, Record, SegmentStats, Stratification};

/// Boundaries used by the fixed-stratified baseline unless told otherwise.
pub const DEFAULT_FIXED_BOUNDARIES: [f64; 2] = [0.33, 0.67];

/// Outcome of a baseline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRun {
    pub estimate: QueryEstimate,
    /// Per segment, the estimate from that segment's samples, falling back
    /// to the overall estimate when the segment saw no matching sample.
    pub segment_estimates: Vec<f64>,
    pub history: Vec<SegmentStats>,
    pub calls_per_segment: Vec<u64>,
}

fn resolve_all<'a, O, I>(oracle: &mut BudgetedOracle<O>, items: I) -> Result<Vec<(usize, OracleOutcome)>>
where
    O: Oracle,
    I: IntoIterator<Item = (usize, &'a Record)>,
{
    let mut out = Vec::new();
    for (cell, record) in items {
        match oracle.resolve(record) {
            Ok(outcome) => out.push((cell, outcome)),
            Err(e @ OracleError::BudgetExceeded { .. }) => return Err(e.into()),
            Err(e @ OracleError::Failed { .. }) => log::warn!("{e}; dropping the record from the sample"),
        }
    }
    Ok(out)
}

fn check_segment_len(segment_len: u64) -> Result<()> {
    if segment_len == 0 {
        return Err(Error::invalid("segment length must be at least 1"));
    }
    Ok(())
}

/// Uniform sampling over the whole query: a single reservoir of
/// `total_budget` records spans all segments, so the oracle is called
/// `min(total_budget, stream length)` times in total.
pub fn uniform_baseline<I, O>(
    stream: I,
    segment_len: u64,
    total_budget: u64,
    agg: Aggregate,
    oracle: O,
    seed: u64,
) -> Result<BaselineRun>
where
    I: IntoIterator<Item = Result<Record>>,
    O: Oracle,
{
    check_segment_len(segment_len)?;
    let mut rng = rng_for(derive_seed(seed, label::UNIFORM));
    let mut reservoir: Reservoir<(usize, Record)> = Reservoir::new(total_budget as usize);
    let mut counts: Vec<u64> = Vec::new();
    for (i, record) in stream.into_iter().enumerate() {
        let record = record?;
        let t = (i as u64 / segment_len) as usize;
        if t == counts.len() {
            counts.push(0);
        }
        counts[t] += 1;
        reservoir.offer((t, record), &mut rng);
    }
    if counts.is_empty() {
        return Err(Error::EmptyPilot);
    }

    let mut oracle = BudgetedOracle::new(oracle, total_budget);
    oracle.start_segment();
    let held = reservoir.into_held();
    let resolved = resolve_all(&mut oracle, held.iter().map(|(t, r)| (*t, r)))?;

    let total: u64 = counts.iter().sum();
    let overall = segment_stats(
        &resolved.iter().map(|&(_, o)| (0, o)).collect::<Vec<_>>(),
        &[total],
    );
    let mu_hat = aggregate_estimate(agg, std::slice::from_ref(&overall))?;

    let mut per_segment_samples: Vec<Vec<(usize, OracleOutcome)>> = vec![Vec::new(); counts.len()];
    let mut calls_per_segment = vec![0u64; counts.len()];
    for (t, _) in &held {
        calls_per_segment[*t] += 1;
    }
    for &(t, o) in &resolved {
        per_segment_samples[t].push((0, o));
    }
    let history: Vec<SegmentStats> = per_segment_samples
        .iter()
        .zip(&counts)
        .map(|(s, &c)| segment_stats(s, &[c]))
        .collect();
    let per_segment: Vec<(usize, f64)> = history
        .iter()
        .enumerate()
        .filter_map(|(t, s)| aggregate_estimate(agg, std::slice::from_ref(s)).ok().map(|e| (t, e)))
        .collect();
    let segment_estimates = fill_segments(&per_segment, counts.len(), mu_hat);
    Ok(BaselineRun {
        estimate: QueryEstimate { mu_hat, ci_low: mu_hat, ci_high: mu_hat, per_segment, oracle_calls: oracle.total_calls() },
        segment_estimates,
        history,
        calls_per_segment,
    })
}

fn fill_segments(per_segment: &[(usize, f64)], n: usize, fallback: f64) -> Vec<f64> {
    let mut out = vec![fallback; n];
    for &(t, e) in per_segment {
        out[t] = e;
    }
    out
}

/// Fixed proxy boundaries with the per-segment budget split evenly
/// (defensive floor included) over the strata. Every segment draws its
/// reservoirs from the same per-segment random stream the engine uses, so
/// from the second segment on it coincides with the engine run with frozen
/// strata and a frozen uniform allocation.
pub fn fixed_stratified_baseline<I, O>(
    stream: I,
    segment_len: u64,
    plan: &BudgetPlan,
    strata: &Stratification,
    agg: Aggregate,
    oracle: O,
    seed: u64,
) -> Result<BaselineRun>
where
    I: IntoIterator<Item = Result<Record>>,
    O: Oracle,
{
    check_segment_len(segment_len)?;
    if strata.k() != plan.k {
        return Err(Error::invalid("strata do not match the stratum count"));
    }
    let caps = capacities(&Allocation::uniform(plan.k), plan);
    let mut oracle = BudgetedOracle::new(oracle, plan.total);
    let mut history: Vec<SegmentStats> = Vec::new();
    let mut per_segment = Vec::new();

    let mut stream = stream.into_iter().peekable();
    while stream.peek().is_some() {
        let t = history.len();
        let mut rng = rng_for(derive_seed(seed, label::segment(t)));
        let mut reservoirs: Vec<Reservoir> = caps.iter().map(|&c| Reservoir::new(c as usize)).collect();
        let mut counts = vec![0u64; plan.k];
        for record in stream.by_ref().take(segment_len as usize) {
            let record = record?;
            let k = strata.route(record.proxy)?;
            counts[k] += 1;
            reservoirs[k].offer(record, &mut rng);
        }
        oracle.start_segment();
        let samples = resolve_all(
            &mut oracle,
            reservoirs.iter().enumerate().flat_map(|(k, r)| r.held().iter().map(move |rec| (k, rec))),
        )?;
        let stats = segment_stats(&samples, &counts);
        if let Ok(e) = aggregate_estimate(agg, std::slice::from_ref(&stats)) {
            per_segment.push((t, e));
        }
        history.push(stats);
    }
    if history.is_empty() {
        return Err(Error::EmptyPilot);
    }
    let mu_hat = aggregate_estimate(agg, &history)?;
    let segment_estimates = fill_segments(&per_segment, history.len(), mu_hat);
    Ok(BaselineRun {
        estimate: QueryEstimate {
            mu_hat,
            ci_low: mu_hat,
            ci_high: mu_hat,
            per_segment,
            oracle_calls: oracle.total_calls(),
        },
        segment_estimates,
        calls_per_segment: oracle.calls_per_segment().to_vec(),
        history,
    })
}
