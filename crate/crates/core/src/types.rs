//! Domain types shared by the engine, the baselines and the harness.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// What the oracle says about one record: the predicate flag and the
/// statistic the query aggregates. For queries without a predicate the oracle
/// reports `matches = true` for every record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcome {
    pub matches: bool,
    pub stat: f64,
}

impl OracleOutcome {
    pub fn new(matches: bool, stat: f64) -> Self {
        Self { matches, stat }
    }
}

/// One stream element.
///
/// `label` is the ground truth carried alongside the row by column-backed
/// datasets. The engine never reads it; only a column oracle does, and only
/// when it is invoked. `oracle` is the outcome once the oracle has resolved
/// the record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub index: u64,
    pub proxy: f64,
    pub label: Option<OracleOutcome>,
    pub oracle: Option<OracleOutcome>,
}

impl Record {
    pub fn new(index: u64, proxy: f64) -> Self {
        Self { index, proxy, label: None, oracle: None }
    }

    pub fn labeled(index: u64, proxy: f64, label: OracleOutcome) -> Self {
        Self { index, proxy, label: Some(label), oracle: None }
    }
}

/// K proxy-score intervals partitioning [0, 1]. Stratum `k` (zero-based)
/// covers `[b_k, b_{k+1})` with implicit `b_0 = 0` and `b_K = 1`; the last
/// stratum is closed at 1. Coincident boundaries are allowed and produce
/// empty strata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratification {
    boundaries: Vec<f64>,
}

impl Stratification {
    pub fn new(mut boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::invalid("stratum boundaries must lie in [0, 1]"));
        }
        boundaries.sort_by(f64::total_cmp);
        Ok(Self { boundaries })
    }

    /// A single stratum covering [0, 1].
    pub fn single() -> Self {
        Self { boundaries: Vec::new() }
    }

    /// K equal-width strata.
    pub fn equal_width(k: usize) -> Self {
        let k = k.max(1);
        Self { boundaries: (1..k).map(|i| i as f64 / k as f64).collect() }
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn k(&self) -> usize {
        self.boundaries.len() + 1
    }

    /// Zero-based stratum of a proxy score.
    pub fn route(&self, proxy: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&proxy) {
            return Err(Error::ProxyOutOfRange(proxy));
        }
        Ok(self.boundaries.partition_point(|&b| b <= proxy).min(self.k() - 1))
    }
}

/// Nonnegative per-stratum fractions summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    fractions: Vec<f64>,
}

impl Allocation {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(fractions: Vec<f64>) -> Result<Self> {
        if fractions.is_empty() {
            return Err(Error::invalid("allocation needs at least one stratum"));
        }
        if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::invalid("allocation fractions must be finite and nonnegative"));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::invalid(format!("allocation sums to {sum}, not 1")));
        }
        Ok(Self { fractions })
    }

    /// Normalizes nonnegative weights. Fails if they are all zero.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::DegenerateStream);
        }
        Ok(Self { fractions: weights.iter().map(|w| w / sum).collect() })
    }

    pub fn uniform(k: usize) -> Self {
        let k = k.max(1);
        Self { fractions: vec![1.0 / k as f64; k] }
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn k(&self) -> usize {
        self.fractions.len()
    }
}

/// Per-segment oracle budget split into a defensive part, spread evenly
/// across strata, and a dynamic part allocated by estimated optimality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub total: u64,
    pub defensive: u64,
    pub k: usize,
    pub alpha: f64,
}

impl BudgetPlan {
    pub const DEFAULT_K: usize = 3;
    pub const DEFAULT_ALPHA: f64 = 0.8;
    pub const DEFAULT_DEFENSIVE_FRACTION: f64 = 0.1;

    pub fn new(total: u64, defensive: u64, k: usize, alpha: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("stratum count must be at least 1"));
        }
        if defensive > total {
            return Err(Error::invalid("defensive budget exceeds the total budget"));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid("smoothing alpha must lie in [0, 1]"));
        }
        Ok(Self { total, defensive, k, alpha })
    }

    /// Plan whose defensive budget is `fraction` of `total`, rounded to a
    /// whole number of oracle calls.
    pub fn with_defensive_fraction(total: u64, fraction: f64, k: usize, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::invalid("defensive fraction must lie in [0, 1]"));
        }
        Self::new(total, (fraction * total as f64).round() as u64, k, alpha)
    }

    pub fn dynamic(&self) -> u64 {
        self.total - self.defensive
    }

    /// Oracle calls reserved for every stratum in every segment.
    pub fn defensive_floor(&self) -> u64 {
        let per = (self.defensive as f64 / self.k as f64).round() as u64;
        per.min(self.total / self.k as u64)
    }
}

/// Statistics of one (segment, stratum) cell.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StratumStats {
    /// Records routed to the stratum.
    pub count: u64,
    /// Records the oracle resolved.
    pub sampled: u64,
    /// Resolved records satisfying the predicate.
    pub matched: u64,
    pub p_hat: f64,
    pub mu_hat: f64,
    pub sigma_hat: f64,
    pub w_hat: f64,
    /// Sum of the statistic over matching samples.
    pub stat_sum: f64,
}

/// Statistics of one segment, one entry per stratum.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SegmentStats {
    pub strata: Vec<StratumStats>,
}

impl SegmentStats {
    pub fn k(&self) -> usize {
        self.strata.len()
    }

    pub fn total_count(&self) -> u64 {
        self.strata.iter().map(|s| s.count).sum()
    }

    pub fn total_sampled(&self) -> u64 {
        self.strata.iter().map(|s| s.sampled).sum()
    }
}

/// Aggregation applied to the statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Avg,
    Sum,
    Count,
}

impl Aggregate {
    pub fn keyword(self) -> &'static str {
        match self {
            Aggregate::Avg => "AVG",
            Aggregate::Sum => "SUM",
            Aggregate::Count => "COUNT",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        match word.to_ascii_uppercase().as_str() {
            "AVG" => Some(Aggregate::Avg),
            "SUM" => Some(Aggregate::Sum),
            "COUNT" => Some(Aggregate::Count),
            _ => None,
        }
    }
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

impl std::str::FromStr for Aggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_keyword(s).ok_or_else(|| Error::invalid(format!("unknown aggregate {s:?}")))
    }
}

/// Answer to a query after some number of segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEstimate {
    pub mu_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// (zero-based segment id, estimate for that segment alone).
    pub per_segment: Vec<(usize, f64)>,
    pub oracle_calls: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn route_half_open_intervals() {
        let s = Stratification::new(vec![0.33, 0.67]).unwrap();
        assert_eq!(s.route(0.0).unwrap(), 0);
        assert_eq!(s.route(0.5).unwrap(), 1);
        assert_eq!(s.route(1.0).unwrap(), 2);
        assert_eq!(s.route(0.33).unwrap(), 1);
        assert!(s.route(1.01).is_err());
        assert!(s.route(f64::NAN).is_err());
        assert_eq!(Stratification::single().route(0.7).unwrap(), 0);
    }

    #[test]
    fn coincident_boundaries_leave_empty_stratum() {
        let s = Stratification::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(s.route(0.49).unwrap(), 0);
        assert_eq!(s.route(0.5).unwrap(), 2);
        let top = Stratification::new(vec![0.2, 1.0]).unwrap();
        assert_eq!(top.route(1.0).unwrap(), 2);
    }

    #[test]
    fn allocation_validation() {
        assert!(Allocation::new(vec![0.5, 0.5]).is_ok());
        assert!(Allocation::new(vec![0.5, 0.6]).is_err());
        assert!(Allocation::new(vec![-0.1, 1.1]).is_err());
        assert!(matches!(Allocation::from_weights(&[0.0, 0.0]), Err(Error::DegenerateStream)));
    }

    #[test]
    fn plan_defaults() {
        let plan = BudgetPlan::with_defensive_fraction(500, 0.1, 3, 0.8).unwrap();
        assert_eq!(plan.defensive, 50);
        assert_eq!(plan.dynamic(), 450);
        assert_eq!(plan.defensive_floor(), 17);
        assert!(BudgetPlan::new(10, 11, 3, 0.8).is_err());
        assert!(BudgetPlan::new(10, 1, 0, 0.8).is_err());
    }
}
