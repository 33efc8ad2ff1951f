//! Approximate aggregation queries over unstructured streams.
//!
//! A query (AVG, SUM or COUNT, optionally filtered by a predicate) is answered
//! by spending a fixed per-segment budget of expensive oracle invocations. A
//! cheap proxy score is available for every record; it is used to split each
//! tumbling-window segment into strata, and the oracle budget is allocated
//! across strata with a defensive floor plus a dynamic Neyman-style share that
//! is re-estimated from the previous segments.
//!
//! Module map:
//!
//! * [`types`] and [`estimator`]: domain types, the closed-form optimal
//!   allocation and its expected MSE, per-stratum statistics and the final
//!   estimator. [`bootstrap`] adds percentile confidence intervals.
//! * [`sampling`]: reservoir sampling, routing and capacity rounding.
//! * [`engine`]: the segment loop (pilot, restratification, reallocation).
//! * [`querylang`]: parser and renderer for the query language.
//! * [`baselines`]: uniform and fixed-strata stratified sampling.
//! * [`synth`]: synthetic stream and proxy generation.
//! * [`oracle`] and [`harness`]: oracle adapters with budget accounting,
//!   dataset files, metrics and the multi-trial experiment runner.

pub mod baselines;
pub mod bootstrap;
pub mod engine;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod oracle;
pub mod querylang;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    Aggregate, Allocation, BudgetPlan, OracleOutcome, QueryEstimate, Record, SegmentStats,
    Stratification, StratumStats,
};
