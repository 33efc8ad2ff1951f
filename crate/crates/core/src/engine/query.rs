use std::iter::Peekable;

use crate::error::{Error, Result};
use crate::oracle::{BudgetedOracle, Oracle};
use crate::querylang::QuerySpec;
use crate::types::{Aggregate, BudgetPlan, QueryEstimate, Record};

use super::{Engine, EngineConfig, SegmentReport};

/// Execution parameters for a query over a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub plan: BudgetPlan,
    pub aggregate: Aggregate,
    /// Records per segment.
    pub segment_len: u64,
    /// Stop after this many records.
    pub duration: Option<u64>,
    pub history_average: bool,
    pub fixed_strata: Option<Vec<f64>>,
    pub fixed_alloc: bool,
    pub seed: u64,
    /// `(confidence, resamples)` used by [`QueryRun::estimate`].
    pub bootstrap: Option<(f64, usize)>,
}

impl RunOptions {
    pub fn new(plan: BudgetPlan, segment_len: u64, seed: u64) -> Self {
        Self {
            plan,
            aggregate: Aggregate::Avg,
            segment_len,
            duration: None,
            history_average: false,
            fixed_strata: None,
            fixed_alloc: false,
            seed,
            bootstrap: None,
        }
    }

    /// Options taken from a parsed query with the default stratum count,
    /// smoothing and defensive share. `rate` (records per second) converts
    /// time-based intervals.
    pub fn from_spec(spec: &QuerySpec, rate: Option<f64>, seed: u64) -> Result<Self> {
        let plan = BudgetPlan::with_defensive_fraction(
            spec.oracle_limit,
            BudgetPlan::DEFAULT_DEFENSIVE_FRACTION,
            BudgetPlan::DEFAULT_K,
            BudgetPlan::DEFAULT_ALPHA,
        )?;
        let mut opts = Self::new(plan, spec.tumble.interval.to_records(rate)?, seed);
        opts.aggregate = spec.agg;
        opts.duration = spec.duration.map(|d| d.to_records(rate)).transpose()?;
        Ok(opts)
    }

    fn engine_config(&self) -> Result<EngineConfig> {
        let mut config = EngineConfig::new(self.plan, self.seed);
        config.aggregate = self.aggregate;
        config.history_average = self.history_average;
        if let Some(b) = &self.fixed_strata {
            config = config.with_fixed_strata(b.clone())?;
        }
        if self.fixed_alloc {
            config = config.with_fixed_uniform_alloc();
        }
        Ok(config)
    }
}

/// Runs a query lazily: each call to `next` consumes one segment of the
/// stream and yields its report. Records are never buffered beyond the
/// per-stratum reservoirs.
pub fn run_query<I, O>(stream: I, opts: RunOptions, oracle: O) -> Result<QueryRun<I::IntoIter, O>>
where
    I: IntoIterator<Item = Result<Record>>,
    O: Oracle,
{
    if opts.segment_len == 0 {
        return Err(Error::invalid("segment length must be at least 1"));
    }
    let engine = Engine::new(opts.engine_config()?)?;
    let oracle = BudgetedOracle::new(oracle, opts.plan.total);
    Ok(QueryRun { stream: stream.into_iter().peekable(), engine, oracle, opts, consumed: 0, done: false })
}

pub struct QueryRun<I: Iterator<Item = Result<Record>>, O> {
    stream: Peekable<I>,
    engine: Engine,
    oracle: BudgetedOracle<O>,
    opts: RunOptions,
    consumed: u64,
    done: bool,
}

impl<I, O> QueryRun<I, O>
where
    I: Iterator<Item = Result<Record>>,
    O: Oracle,
{
    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn oracle(&self) -> &BudgetedOracle<O> {
        &self.oracle
    }

    pub fn records_consumed(&self) -> u64 {
        self.consumed
    }

    /// Answer from every segment processed so far.
    pub fn estimate(&self) -> Result<QueryEstimate> {
        self.engine.estimate(self.opts.bootstrap)
    }

    /// Drives the query to the end of the stream (or its duration) and
    /// returns the final answer.
    pub fn finish(mut self) -> Result<QueryEstimate> {
        for report in self.by_ref() {
            report?;
        }
        self.estimate()
    }

    fn step(&mut self) -> Option<Result<SegmentReport>> {
        let remaining = match self.opts.duration {
            Some(d) => d.saturating_sub(self.consumed),
            None => u64::MAX,
        };
        let len = self.opts.segment_len.min(remaining);
        if len == 0 || self.stream.peek().is_none() {
            if self.engine.is_initialized() {
                return None;
            }
            return Some(Err(Error::EmptyPilot));
        }
        let mut failure = None;
        let mut taken = 0u64;
        let segment = SegmentIter { stream: &mut self.stream, left: len, failure: &mut failure, taken: &mut taken };
        let report = self.engine.process_segment(segment, &mut self.oracle);
        self.consumed += taken;
        if let Some(e) = failure {
            return Some(Err(e));
        }
        Some(report)
    }
}

impl<I, O> Iterator for QueryRun<I, O>
where
    I: Iterator<Item = Result<Record>>,
    O: Oracle,
{
    type Item = Result<SegmentReport>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = self.step();
        if !matches!(item, Some(Ok(_))) {
            self.done = true;
        }
        item
    }
}

/// At most `left` records from the stream; the first error ends the
/// segment and is kept for the caller.
struct SegmentIter<'a, I: Iterator<Item = Result<Record>>> {
    stream: &'a mut Peekable<I>,
    left: u64,
    failure: &'a mut Option<Error>,
    taken: &'a mut u64,
}

impl<I: Iterator<Item = Result<Record>>> Iterator for SegmentIter<'_, I> {
    type Item = Record;

    fn next(&mut self) -> Option<Record> {
        if self.left == 0 || self.failure.is_some() {
            return None;
        }
        match self.stream.next()? {
            Ok(record) => {
                self.left -= 1;
                *self.taken += 1;
                Some(record)
            }
            Err(e) => {
                *self.failure = Some(e);
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ColumnOracle;
    use crate::querylang::parse_query;
    use crate::types::OracleOutcome;

    fn records(n: u64) -> impl Iterator<Item = Result<Record>> {
        (0..n).map(|i| Ok(Record::labeled(i, (i % 10) as f64 / 9.0, OracleOutcome::new(true, (i % 10) as f64))))
    }

    #[test]
    fn segments_follow_tumble_and_duration() {
        let spec = parse_query(
            "SELECT AVG(x) FROM s TUMBLE(i, 1,000 RECORDS) ORACLE LIMIT 100 DURATION 3500 RECORDS USING p(x)",
        )
        .unwrap();
        let opts = RunOptions::from_spec(&spec, None, 7).unwrap();
        assert_eq!(opts.plan.total, 100);
        let mut run = run_query(records(10_000), opts, ColumnOracle::new(false)).unwrap();
        let reports: Vec<_> = run.by_ref().collect::<Result<_>>().unwrap();
        assert_eq!(reports.len(), 4);
        assert_eq!(reports[3].stats.total_count(), 500);
        assert_eq!(run.records_consumed(), 3500);
        assert!(run.oracle().max_segment_calls() <= 100);
        let est = run.estimate().unwrap();
        assert!((est.mu_hat - 4.5).abs() < 1.0);
    }

    #[test]
    fn empty_stream_is_an_error() {
        let opts = RunOptions::new(BudgetPlan::new(10, 0, 3, 0.8).unwrap(), 5, 1);
        let mut run = run_query(records(0), opts, ColumnOracle::new(false)).unwrap();
        assert!(matches!(run.next(), Some(Err(Error::EmptyPilot))));
        assert!(run.next().is_none());
    }

    #[test]
    fn stream_errors_stop_the_run() {
        let stream = records(30).chain(std::iter::once(Err(Error::invalid("bad row")))).chain(records(30));
        let opts = RunOptions::new(BudgetPlan::new(10, 0, 3, 0.8).unwrap(), 20, 1);
        let run = run_query(stream, opts, ColumnOracle::new(false)).unwrap();
        let items: Vec<_> = run.collect();
        assert_eq!(items.len(), 2);
        assert!(items[0].is_ok());
        assert!(items[1].is_err());
    }
}
