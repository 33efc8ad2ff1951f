//! The segment loop.
//!
//! The first segment is a pilot: a uniform sample of the whole per-segment
//! budget, used to fit an initial quantile stratification and allocation.
//! Every later segment is split into strata by the smoothed boundaries, each
//! stratum is reservoir-sampled with a capacity taken from the smoothed
//! allocation, and the survivors are resolved by the oracle when the segment
//! closes. The segment's proxy quantiles and sample statistics then update the
//! smoothed state used for the next segment.

mod alloc;
mod query;
mod smoothing;
mod strata;

pub use alloc::{compose_defensive, get_alloc, raw_allocation};
pub use query::{run_query, QueryRun, RunOptions};
pub use smoothing::{EwmaState, Smoothing};
pub use strata::{get_strata, stratify_by_quantile};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_ci_for, CellSample};
use crate::error::{Error, Result};
use crate::estimator::{aggregate_estimate, segment_stats};
use crate::oracle::{Oracle, OracleError};
use crate::rng::{derive_seed, label, rng_for};
use crate::sampling::{capacities, Reservoir};
use crate::types::{Aggregate, Allocation, BudgetPlan, OracleOutcome, QueryEstimate, Record, SegmentStats, Stratification};

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub plan: BudgetPlan,
    pub aggregate: Aggregate,
    /// Replace the EWMA with an unweighted average over all past segments.
    pub history_average: bool,
    /// Freeze the strata at these boundaries instead of fitting quantiles.
    pub fixed_strata: Option<Stratification>,
    /// Freeze the dynamic split instead of re-estimating it.
    pub fixed_alloc: Option<Allocation>,
    pub seed: u64,
}

impl EngineConfig {
    pub fn new(plan: BudgetPlan, seed: u64) -> Self {
        Self {
            plan,
            aggregate: Aggregate::Avg,
            history_average: false,
            fixed_strata: None,
            fixed_alloc: None,
            seed,
        }
    }

    /// Lesion variant with the strata frozen at `boundaries`.
    pub fn with_fixed_strata(mut self, boundaries: Vec<f64>) -> Result<Self> {
        self.fixed_strata = Some(Stratification::new(boundaries)?);
        Ok(self)
    }

    /// Lesion variant with the dynamic budget split evenly forever.
    pub fn with_fixed_uniform_alloc(mut self) -> Self {
        self.fixed_alloc = Some(Allocation::uniform(self.plan.k));
        self
    }

    fn smoothing(&self) -> Smoothing {
        if self.history_average {
            Smoothing::HistoryAverage
        } else {
            Smoothing::Ewma { alpha: self.plan.alpha }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.plan.total == 0 {
            return Err(Error::invalid("per-segment budget must be at least 1"));
        }
        if let Some(s) = &self.fixed_strata {
            if s.k() != self.plan.k {
                return Err(Error::invalid("fixed strata do not match the stratum count"));
            }
        }
        if let Some(a) = &self.fixed_alloc {
            if a.k() != self.plan.k {
                return Err(Error::invalid("fixed allocation does not match the stratum count"));
            }
        }
        Ok(())
    }
}

/// What happened in one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    /// Zero-based; segment 0 is the pilot.
    pub segment: usize,
    pub stats: SegmentStats,
    pub stratification: Stratification,
    pub capacities: Vec<u64>,
    pub oracle_calls: u64,
    pub failed_calls: u64,
    /// Budget left unused because strata held fewer records than capacity.
    pub unspent: u64,
    /// Estimate from this segment's samples alone.
    pub segment_estimate: Option<f64>,
    /// Estimate from all segments so far.
    pub running_estimate: Option<f64>,
}

/// One query's sampling state.
#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    strata_state: EwmaState,
    alloc_state: EwmaState,
    stratification: Stratification,
    history: Vec<SegmentStats>,
    counts: Vec<Vec<u64>>,
    samples: Vec<CellSample>,
    per_segment: Vec<(usize, f64)>,
    oracle_calls: u64,
    proxy_buffer: Vec<f64>,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let smoothing = config.smoothing();
        let k = config.plan.k;
        Ok(Self {
            stratification: config.fixed_strata.clone().unwrap_or_else(|| Stratification::equal_width(k)),
            config,
            strata_state: EwmaState::new(smoothing),
            alloc_state: EwmaState::new(smoothing),
            history: Vec::new(),
            counts: Vec::new(),
            samples: Vec::new(),
            per_segment: Vec::new(),
            oracle_calls: 0,
            proxy_buffer: Vec::new(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn is_initialized(&self) -> bool {
        !self.history.is_empty()
    }

    /// Stratification the next segment will use.
    pub fn stratification(&self) -> &Stratification {
        &self.stratification
    }

    /// Smoothed split of the dynamic budget, before the defensive floor.
    pub fn dynamic_allocation(&self) -> Allocation {
        match &self.config.fixed_alloc {
            Some(a) => a.clone(),
            None => alloc::smoothed_dynamic(&self.alloc_state, self.config.plan.k),
        }
    }

    /// Allocation the next segment will use, defensive floor included.
    pub fn allocation(&self) -> Allocation {
        compose_defensive(&self.dynamic_allocation(), &self.config.plan)
    }

    pub fn history(&self) -> &[SegmentStats] {
        &self.history
    }

    pub fn samples(&self) -> &[CellSample] {
        &self.samples
    }

    /// Records routed to each stratum, per segment.
    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn oracle_calls(&self) -> u64 {
        self.oracle_calls
    }

    pub fn segments(&self) -> usize {
        self.history.len()
    }

    /// Runs the pilot on the first segment and every later segment through
    /// [`Engine::run_segment`].
    pub fn process_segment<I, O>(&mut self, segment: I, oracle: &mut O) -> Result<SegmentReport>
    where
        I: IntoIterator<Item = Record>,
        O: Oracle + ?Sized,
    {
        if self.is_initialized() {
            self.run_segment(segment, oracle)
        } else {
            self.pilot(segment, oracle)
        }
    }

    /// Uniformly samples the full budget from the first segment, fits the
    /// initial quantile strata on its proxy scores and routes the pilot
    /// samples through them to seed the allocation.
    pub fn pilot<I, O>(&mut self, segment: I, oracle: &mut O) -> Result<SegmentReport>
    where
        I: IntoIterator<Item = Record>,
        O: Oracle + ?Sized,
    {
        if self.is_initialized() {
            return Err(Error::invalid("pilot already ran"));
        }
        let plan = self.config.plan;
        oracle.start_segment();
        let mut rng = rng_for(derive_seed(self.config.seed, label::segment(0)));
        let mut reservoir = Reservoir::new(plan.total as usize);
        self.proxy_buffer.clear();
        for record in segment {
            if !(0.0..=1.0).contains(&record.proxy) {
                return Err(Error::ProxyOutOfRange(record.proxy));
            }
            self.proxy_buffer.push(record.proxy);
            reservoir.offer(record, &mut rng);
        }
        if self.proxy_buffer.is_empty() {
            return Err(Error::EmptyPilot);
        }

        let strata = match &self.config.fixed_strata {
            Some(s) => s.clone(),
            None => stratify_by_quantile(&self.proxy_buffer, plan.k),
        };
        let mut counts = vec![0u64; plan.k];
        for &p in &self.proxy_buffer {
            counts[strata.route(p)?] += 1;
        }
        self.proxy_buffer.clear();

        let held = reservoir.into_held();
        let (samples, failed) = resolve(held.iter().map(|r| (strata.route(r.proxy), r)), oracle)?;
        let calls = held.len() as u64;
        let report = self.close_segment(strata.clone(), vec![plan.total], counts, samples, calls, failed);

        self.strata_state.update(strata.boundaries());
        self.stratification = strata;
        if self.config.fixed_alloc.is_none() {
            self.alloc_state.update(raw_allocation(&report.stats).fractions());
        }
        Ok(report)
    }

    /// Stratified reservoir sampling of one segment with the current strata
    /// and allocation, followed by the state update for the next segment.
    pub fn run_segment<I, O>(&mut self, segment: I, oracle: &mut O) -> Result<SegmentReport>
    where
        I: IntoIterator<Item = Record>,
        O: Oracle + ?Sized,
    {
        if !self.is_initialized() {
            return Err(Error::invalid("run the pilot before regular segments"));
        }
        let plan = self.config.plan;
        let t = self.history.len();
        oracle.start_segment();
        let mut rng = rng_for(derive_seed(self.config.seed, label::segment(t)));
        let strata = self.stratification.clone();
        let caps = capacities(&self.allocation(), &plan);
        let mut reservoirs: Vec<Reservoir> = caps.iter().map(|&c| Reservoir::new(c as usize)).collect();
        let mut counts = vec![0u64; plan.k];
        let track_scores = self.config.fixed_strata.is_none();
        self.proxy_buffer.clear();
        for record in segment {
            let k = strata.route(record.proxy)?;
            counts[k] += 1;
            if track_scores {
                self.proxy_buffer.push(record.proxy);
            }
            reservoirs[k].offer(record, &mut rng);
        }

        let calls: u64 = reservoirs.iter().map(|r| r.held().len() as u64).sum();
        let (samples, failed) = resolve(
            reservoirs.iter().enumerate().flat_map(|(k, r)| r.held().iter().map(move |rec| (Ok(k), rec))),
            oracle,
        )?;
        let report = self.close_segment(strata, caps, counts, samples, calls, failed);

        if report.stats.total_count() > 0 {
            if track_scores {
                self.stratification = get_strata(&mut self.strata_state, &self.proxy_buffer, plan.k);
            }
            if self.config.fixed_alloc.is_none() {
                get_alloc(&mut self.alloc_state, &report.stats, &plan);
            }
        }
        self.proxy_buffer.clear();
        Ok(report)
    }

    fn close_segment(
        &mut self,
        strata: Stratification,
        caps: Vec<u64>,
        counts: Vec<u64>,
        samples: Vec<(usize, OracleOutcome)>,
        calls: u64,
        failed: u64,
    ) -> SegmentReport {
        let t = self.history.len();
        let stats = segment_stats(&samples, &counts);
        self.samples
            .extend(samples.iter().map(|&(stratum, outcome)| CellSample { segment: t, stratum, outcome }));
        self.history.push(stats.clone());
        self.counts.push(counts);
        self.oracle_calls += calls;

        let agg = self.config.aggregate;
        let segment_estimate = aggregate_estimate(agg, std::slice::from_ref(&stats)).ok();
        let running_estimate = aggregate_estimate(agg, &self.history).ok();
        if let Some(e) = segment_estimate {
            self.per_segment.push((t, e));
        }
        SegmentReport {
            segment: t,
            stats,
            stratification: strata,
            unspent: self.config.plan.total.saturating_sub(calls),
            capacities: caps,
            oracle_calls: calls,
            failed_calls: failed,
            segment_estimate,
            running_estimate,
        }
    }

    /// Current answer. With `bootstrap = Some((confidence, resamples))` the
    /// interval is a percentile bootstrap; otherwise it collapses to the
    /// point estimate.
    pub fn estimate(&self, bootstrap: Option<(f64, usize)>) -> Result<QueryEstimate> {
        let agg = self.config.aggregate;
        let mu_hat = aggregate_estimate(agg, &self.history)?;
        let (ci_low, ci_high) = match bootstrap {
            Some((confidence, resamples)) => bootstrap_ci_for(
                agg,
                &self.samples,
                &self.counts,
                confidence,
                resamples,
                derive_seed(self.config.seed, label::BOOTSTRAP),
            )?,
            None => (mu_hat, mu_hat),
        };
        Ok(QueryEstimate {
            mu_hat,
            ci_low,
            ci_high,
            per_segment: self.per_segment.clone(),
            oracle_calls: self.oracle_calls,
        })
    }
}

/// Resolves buffered records. Failed calls drop the record; an exceeded
/// budget aborts.
fn resolve<'a, O, I>(held: I, oracle: &mut O) -> Result<(Vec<(usize, OracleOutcome)>, u64)>
where
    O: Oracle + ?Sized,
    I: Iterator<Item = (Result<usize>, &'a Record)>,
{
    let mut samples = Vec::new();
    let mut failed = 0;
    for (stratum, record) in held {
        let stratum = stratum?;
        match oracle.resolve(record) {
            Ok(outcome) => samples.push((stratum, outcome)),
            Err(e @ OracleError::BudgetExceeded { .. }) => return Err(e.into()),
            Err(e @ OracleError::Failed { .. }) => {
                warn!("{e}; dropping the record from the sample");
                failed += 1;
            }
        }
    }
    Ok((samples, failed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{BudgetedOracle, ColumnOracle};

    fn stream(n: u64, offset: u64) -> Vec<Record> {
        (0..n)
            .map(|i| {
                let proxy = ((i * 37) % 100) as f64 / 99.0;
                Record::labeled(offset + i, proxy, OracleOutcome::new(i % 3 != 0, proxy * 10.0 + (i % 7) as f64))
            })
            .collect()
    }

    fn exact_mean(records: &[Record], predicate: bool) -> f64 {
        let m: Vec<f64> = records
            .iter()
            .filter(|r| !predicate || r.label.unwrap().matches)
            .map(|r| r.label.unwrap().stat)
            .collect();
        m.iter().sum::<f64>() / m.len() as f64
    }

    #[test]
    fn exhaustive_budget_gives_exact_segment_means() {
        let plan = BudgetPlan::new(1000, 100, 3, 0.8).unwrap();
        let mut engine = Engine::new(EngineConfig::new(plan, 1)).unwrap();
        let mut oracle = BudgetedOracle::new(ColumnOracle::new(true), plan.total);
        for t in 0..4 {
            let seg = stream(300, t * 300);
            let report = engine.process_segment(seg.clone(), &mut oracle).unwrap();
            let exact = exact_mean(&seg, true);
            assert!((report.segment_estimate.unwrap() - exact).abs() < 1e-9);
            assert_eq!(report.oracle_calls, 300);
            assert_eq!(report.unspent, 700);
        }
        assert_eq!(oracle.total_calls(), 1200);
    }

    #[test]
    fn empty_pilot_is_an_error() {
        let plan = BudgetPlan::new(10, 1, 3, 0.8).unwrap();
        let mut engine = Engine::new(EngineConfig::new(plan, 1)).unwrap();
        let r = engine.process_segment(Vec::new(), &mut ColumnOracle::new(false));
        assert!(matches!(r, Err(Error::EmptyPilot)));
        assert!(engine.run_segment(stream(5, 0), &mut ColumnOracle::new(false)).is_err());
    }

    #[test]
    fn empty_segment_leaves_state_alone() {
        let plan = BudgetPlan::new(30, 3, 3, 0.8).unwrap();
        let mut engine = Engine::new(EngineConfig::new(plan, 5)).unwrap();
        let mut oracle = ColumnOracle::new(false);
        engine.process_segment(stream(200, 0), &mut oracle).unwrap();
        let (s, a) = (engine.stratification().clone(), engine.allocation());
        let report = engine.process_segment(Vec::new(), &mut oracle).unwrap();
        assert_eq!(report.stats.total_count(), 0);
        assert_eq!(report.oracle_calls, 0);
        assert_eq!((engine.stratification(), engine.allocation()), (&s, a));
        assert_eq!(engine.segments(), 2);
    }

    #[test]
    fn constant_proxies_use_one_stratum() {
        let plan = BudgetPlan::new(30, 6, 3, 0.8).unwrap();
        let mut engine = Engine::new(EngineConfig::new(plan, 2)).unwrap();
        let mut oracle = BudgetedOracle::new(ColumnOracle::new(false), plan.total);
        let flat: Vec<Record> = (0..100).map(|i| Record::labeled(i, 0.4, OracleOutcome::new(true, i as f64))).collect();
        engine.process_segment(flat.clone(), &mut oracle).unwrap();
        assert_eq!(engine.stratification().boundaries(), &[0.4, 0.4]);
        let next: Vec<Record> = flat.iter().map(|r| Record { index: r.index + 100, ..*r }).collect();
        let report = engine.process_segment(next, &mut oracle).unwrap();
        assert_eq!(report.stats.strata[0].count, 0);
        assert_eq!(report.stats.strata[1].count, 0);
        assert_eq!(report.stats.strata[2].count, 100);
        // The empty strata's defensive calls go unused.
        assert_eq!(report.oracle_calls, report.capacities[2]);
        assert_eq!(report.unspent, report.capacities[0] + report.capacities[1]);
    }

    #[test]
    fn stationary_exhaustive_allocation_is_stable() {
        // Floor of 333 calls per stratum exceeds every stratum's 200 records.
        let plan = BudgetPlan::new(10_000, 1000, 3, 1.0).unwrap();
        let mut engine = Engine::new(EngineConfig::new(plan, 9)).unwrap();
        let mut oracle = ColumnOracle::new(true);
        engine.process_segment(stream(600, 0), &mut oracle).unwrap();
        let after_pilot = engine.allocation();
        engine.process_segment(stream(600, 0), &mut oracle).unwrap();
        let after_repeat = engine.allocation();
        for (a, b) in after_pilot.fractions().iter().zip(after_repeat.fractions()) {
            assert!((a - b).abs() < 1e-12, "{after_pilot:?} vs {after_repeat:?}");
        }
    }

    #[test]
    fn out_of_range_proxy_is_rejected() {
        let plan = BudgetPlan::new(10, 1, 2, 0.8).unwrap();
        let mut engine = Engine::new(EngineConfig::new(plan, 1)).unwrap();
        let bad = vec![Record::new(0, 1.5)];
        assert!(matches!(
            engine.process_segment(bad, &mut ColumnOracle::new(false)),
            Err(Error::ProxyOutOfRange(_))
        ));
    }

    #[test]
    fn oracle_failures_drop_records_but_count() {
        struct Flaky;
        impl Oracle for Flaky {
            fn resolve(&mut self, r: &Record) -> Result<OracleOutcome, OracleError> {
                if r.index % 2 == 0 {
                    Err(OracleError::Failed { index: r.index, reason: "timeout".into() })
                } else {
                    Ok(OracleOutcome::new(true, 1.0))
                }
            }
        }
        let plan = BudgetPlan::new(50, 5, 2, 0.8).unwrap();
        let mut engine = Engine::new(EngineConfig::new(plan, 3)).unwrap();
        let mut oracle = BudgetedOracle::new(Flaky, plan.total);
        let report = engine.process_segment(stream(40, 0), &mut oracle).unwrap();
        assert_eq!(report.oracle_calls, 40);
        assert_eq!(report.failed_calls, 20);
        assert_eq!(report.stats.total_sampled(), 20);
        assert_eq!(oracle.total_calls(), 40);
    }

    #[test]
    fn budget_guard_aborts_runaway_engine() {
        let plan = BudgetPlan::new(50, 5, 2, 0.8).unwrap();
        let mut engine = Engine::new(EngineConfig::new(plan, 3)).unwrap();
        let mut oracle = BudgetedOracle::new(ColumnOracle::new(false), 10);
        let r = engine.process_segment(stream(40, 0), &mut oracle);
        assert!(matches!(r, Err(Error::BudgetExceeded { limit: 10, .. })));
    }

    #[test]
    fn fixed_lesions_freeze_state() {
        let plan = BudgetPlan::new(60, 6, 3, 0.8).unwrap();
        let config = EngineConfig::new(plan, 4).with_fixed_strata(vec![0.33, 0.67]).unwrap().with_fixed_uniform_alloc();
        let mut engine = Engine::new(config).unwrap();
        let mut oracle = ColumnOracle::new(true);
        for t in 0..3 {
            engine.process_segment(stream(500, t * 500), &mut oracle).unwrap();
            assert_eq!(engine.stratification().boundaries(), &[0.33, 0.67]);
            assert_eq!(engine.allocation(), Allocation::uniform(3));
        }
    }

    #[test]
    fn estimate_interval_contains_point() {
        let plan = BudgetPlan::new(60, 6, 3, 0.8).unwrap();
        let mut engine = Engine::new(EngineConfig::new(plan, 4)).unwrap();
        let mut oracle = ColumnOracle::new(true);
        for t in 0..3 {
            engine.process_segment(stream(500, t * 500), &mut oracle).unwrap();
        }
        let e = engine.estimate(Some((0.95, 200))).unwrap();
        assert!(e.ci_low <= e.mu_hat && e.mu_hat <= e.ci_high);
        assert_eq!(e.per_segment.len(), 3);
        assert_eq!(e.oracle_calls, 180);
    }
}
