//! Seeded multi-trial experiments.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{compute_truth, DatasetReader, Truth};
use super::metrics::{geometric_mean, median_segment_rmse, segment_errors};
use crate::baselines::{fixed_stratified_baseline, uniform_baseline, DEFAULT_FIXED_BOUNDARIES};
use crate::engine::{run_query, RunOptions};
use crate::error::{Error, Result};
use crate::oracle::{ColumnOracle, Oracle};
use crate::rng::derive_seed_path;
use crate::synth::generate_stream;
use crate::types::{Aggregate, BudgetPlan, Record, Stratification};

/// Sampling method under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    /// The adaptive engine.
    Inquest,
    /// Engine with strata frozen at fixed boundaries.
    InquestFixedStrata,
    /// Engine with the dynamic allocation frozen at uniform.
    InquestFixedAlloc,
    Uniform,
    FixedStratified,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Inquest,
        Method::InquestFixedStrata,
        Method::InquestFixedAlloc,
        Method::Uniform,
        Method::FixedStratified,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Inquest => "inquest",
            Method::InquestFixedStrata => "inquest-fixed-strata",
            Method::InquestFixedAlloc => "inquest-fixed-alloc",
            Method::Uniform => "uniform",
            Method::FixedStratified => "fixed-stratified",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::invalid(format!("unknown method {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name().to_string()
    }
}

/// Parameters shared by every method in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSettings {
    /// Number of segments `T`; a budget `NT` gives `NT / T` calls per segment.
    pub segments: u64,
    pub k: usize,
    pub alpha: f64,
    pub defensive_frac: f64,
    pub aggregate: Aggregate,
    pub use_predicate: bool,
    pub history_average: bool,
    /// Boundaries for the fixed-strata variants.
    pub fixed_boundaries: Vec<f64>,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self {
            segments: 5,
            k: BudgetPlan::DEFAULT_K,
            alpha: BudgetPlan::DEFAULT_ALPHA,
            defensive_frac: BudgetPlan::DEFAULT_DEFENSIVE_FRACTION,
            aggregate: Aggregate::Avg,
            use_predicate: true,
            history_average: false,
            fixed_boundaries: DEFAULT_FIXED_BOUNDARIES.to_vec(),
        }
    }
}

impl MethodSettings {
    pub fn plan(&self, total_budget: u64) -> Result<BudgetPlan> {
        if self.segments == 0 {
            return Err(Error::invalid("need at least one segment"));
        }
        let per_segment = total_budget / self.segments;
        if per_segment == 0 {
            return Err(Error::invalid("budget is smaller than the number of segments"));
        }
        BudgetPlan::with_defensive_fraction(per_segment, self.defensive_frac, self.k, self.alpha)
    }

    fn fixed_boundaries_for_k(&self) -> Result<Vec<f64>> {
        if self.fixed_boundaries.len() + 1 == self.k {
            Ok(self.fixed_boundaries.clone())
        } else {
            Ok(Stratification::equal_width(self.k).boundaries().to_vec())
        }
    }
}

/// One method's answers over a stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutput {
    pub segment_estimates: Vec<f64>,
    pub final_estimate: f64,
    pub oracle_calls: u64,
    pub calls_per_segment: Vec<u64>,
}

/// Runs `method` over `stream` with a total budget of `total_budget` oracle
/// calls spread over `settings.segments` segments of `segment_len` records.
///
/// A segment without a matching sample reports the engine's running
/// estimate, or the final estimate if there is none yet.
pub fn run_method<I, O>(
    method: Method,
    stream: I,
    segment_len: u64,
    total_budget: u64,
    settings: &MethodSettings,
    oracle: O,
    seed: u64,
) -> Result<MethodOutput>
where
    I: IntoIterator<Item = Result<Record>>,
    O: Oracle,
{
    let plan = settings.plan(total_budget)?;
    match method {
        Method::Uniform => {
            let run =
                uniform_baseline(stream, segment_len, plan.total * settings.segments, settings.aggregate, oracle, seed)?;
            Ok(MethodOutput {
                segment_estimates: run.segment_estimates,
                final_estimate: run.estimate.mu_hat,
                oracle_calls: run.estimate.oracle_calls,
                calls_per_segment: run.calls_per_segment,
            })
        }
        Method::FixedStratified => {
            let strata = Stratification::new(settings.fixed_boundaries_for_k()?)?;
            let run =
                fixed_stratified_baseline(stream, segment_len, &plan, &strata, settings.aggregate, oracle, seed)?;
            Ok(MethodOutput {
                segment_estimates: run.segment_estimates,
                final_estimate: run.estimate.mu_hat,
                oracle_calls: run.estimate.oracle_calls,
                calls_per_segment: run.calls_per_segment,
            })
        }
        Method::Inquest | Method::InquestFixedStrata | Method::InquestFixedAlloc => {
            let mut opts = RunOptions::new(plan, segment_len, seed);
            opts.aggregate = settings.aggregate;
            opts.history_average = settings.history_average;
            if method == Method::InquestFixedStrata {
                opts.fixed_strata = Some(settings.fixed_boundaries_for_k()?);
            }
            opts.fixed_alloc = method == Method::InquestFixedAlloc;
            let mut run = run_query(stream, opts, oracle)?;
            let mut per_segment = Vec::new();
            for report in run.by_ref() {
                let report = report?;
                per_segment.push(report.segment_estimate.or(report.running_estimate));
            }
            let estimate = run.estimate()?;
            Ok(MethodOutput {
                segment_estimates: per_segment.into_iter().map(|e| e.unwrap_or(estimate.mu_hat)).collect(),
                final_estimate: estimate.mu_hat,
                oracle_calls: estimate.oracle_calls,
                calls_per_segment: run.oracle().calls_per_segment().to_vec(),
            })
        }
    }
}

/// Synthetic dataset recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub shifts: usize,
    pub length: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub seed: u64,
}

fn default_k() -> usize {
    BudgetPlan::DEFAULT_K
}

fn default_beta() -> f64 {
    crate::synth::DEFAULT_BETA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: String,
    pub path: Option<PathBuf>,
    pub synth: Option<SynthSpec>,
}

/// Benchmark configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    pub datasets: Vec<DatasetEntry>,
    /// Total oracle budgets `NT` for the whole query.
    pub budgets: Vec<u64>,
    pub trials: u64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_segments")]
    pub segments: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_defensive")]
    pub defensive_frac: f64,
    #[serde(default = "default_aggregate")]
    pub aggregate: Aggregate,
    #[serde(default = "default_true")]
    pub predicate: bool,
    #[serde(default)]
    pub history_average: bool,
    pub fixed_boundaries: Option<Vec<f64>>,
}

fn default_segments() -> u64 {
    5
}

fn default_alpha() -> f64 {
    BudgetPlan::DEFAULT_ALPHA
}

fn default_defensive() -> f64 {
    BudgetPlan::DEFAULT_DEFENSIVE_FRACTION
}

fn default_aggregate() -> Aggregate {
    Aggregate::Avg
}

fn default_true() -> bool {
    true
}

impl BenchConfig {
    pub fn settings(&self) -> MethodSettings {
        MethodSettings {
            segments: self.segments,
            k: self.k,
            alpha: self.alpha,
            defensive_frac: self.defensive_frac,
            aggregate: self.aggregate,
            use_predicate: self.predicate,
            history_average: self.history_average,
            fixed_boundaries: self.fixed_boundaries.clone().unwrap_or_else(|| DEFAULT_FIXED_BOUNDARIES.to_vec()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.methods.is_empty() {
            return bad("no methods");
        }
        if self.datasets.is_empty() {
            return bad("no datasets");
        }
        if self.budgets.is_empty() {
            return bad("no budgets");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.segments == 0 {
            return bad("segments must be at least 1");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.defensive_frac) {
            return bad("defensive_frac must lie in [0, 1]");
        }
        if let Some(&b) = self.budgets.iter().find(|&&b| b < self.segments) {
            return Err(Error::Config(format!("budget {b} is smaller than the number of segments")));
        }
        if let Some(b) = &self.fixed_boundaries {
            Stratification::new(b.clone()).map_err(|e| Error::Config(format!("fixed_boundaries: {e}")))?;
        }
        for d in &self.datasets {
            match (&d.path, &d.synth) {
                (Some(_), None) => {}
                (None, Some(s)) => {
                    if !(0.0..=1.0).contains(&s.beta) || s.k == 0 || s.length < s.k as u64 || s.shifts as u64 >= s.length
                    {
                        return Err(Error::Config(format!("dataset {:?}: invalid synth parameters", d.name)));
                    }
                }
                _ => return Err(Error::Config(format!("dataset {:?} needs exactly one of path or synth", d.name))),
            }
        }
        Ok(())
    }
}

/// Parses and validates a TOML benchmark configuration.
pub fn parse_bench_config(text: &str) -> Result<BenchConfig> {
    let config: BenchConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// A dataset ready for repeated passes.
#[derive(Debug, Clone)]
pub enum LoadedDataset {
    Memory(Arc<Vec<Record>>),
    File(PathBuf),
}

impl LoadedDataset {
    pub fn load(entry: &DatasetEntry, base_dir: Option<&Path>) -> Result<Self> {
        match (&entry.path, &entry.synth) {
            (Some(p), _) => {
                let path = match base_dir {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.clone(),
                };
                Ok(LoadedDataset::File(path))
            }
            (None, Some(s)) => {
                Ok(LoadedDataset::Memory(Arc::new(generate_stream(s.shifts, s.length, s.k, s.beta, s.seed)?.records)))
            }
            (None, None) => Err(Error::Config(format!("dataset {:?} has no source", entry.name))),
        }
    }

    pub fn stream(&self) -> Result<Box<dyn Iterator<Item = Result<Record>> + Send + '_>> {
        Ok(match self {
            LoadedDataset::Memory(records) => Box::new(records.iter().copied().map(Ok)),
            LoadedDataset::File(path) => Box::new(DatasetReader::open(path)?),
        })
    }

    pub fn len(&self) -> Result<u64> {
        match self {
            LoadedDataset::Memory(records) => Ok(records.len() as u64),
            LoadedDataset::File(_) => {
                let mut n = 0;
                for r in self.stream()? {
                    r?;
                    n += 1;
                }
                Ok(n)
            }
        }
    }

    pub fn is_empty(&self) -> Result<bool> {
        Ok(self.len()? == 0)
    }
}

/// Records per segment so that `len` records form `segments` segments.
pub fn segment_len_for(len: u64, segments: u64) -> u64 {
    len.div_ceil(segments.max(1)).max(1)
}

/// Result of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub method: Method,
    pub dataset: String,
    /// Total oracle budget `NT`.
    pub budget: u64,
    pub trial: u64,
    pub seed: u64,
    pub segment_estimates: Vec<f64>,
    pub segment_truth: Vec<Option<f64>>,
    pub segment_errors: Vec<Option<f64>>,
    pub median_segment_rmse: Option<f64>,
    pub full_query_rmse: Option<f64>,
    pub final_estimate: Option<f64>,
    pub oracle_calls: u64,
    pub max_segment_calls: u64,
    pub error: Option<String>,
}

impl TrialReport {
    pub fn is_ok(&self) -> bool {
        self.error.is_none() && self.median_segment_rmse.is_some()
    }
}

/// Runs one trial and records the outcome, including failures.
#[allow(clippy::too_many_arguments)]
pub fn run_trial(
    method: Method,
    dataset_name: &str,
    dataset: &LoadedDataset,
    truth: &Truth,
    budget: u64,
    trial: u64,
    seed: u64,
    settings: &MethodSettings,
) -> TrialReport {
    let segment_len = segment_len_for(truth.records, settings.segments);
    let mut report = TrialReport {
        method,
        dataset: dataset_name.to_string(),
        budget,
        trial,
        seed,
        segment_estimates: Vec::new(),
        segment_truth: truth.per_segment.clone(),
        segment_errors: Vec::new(),
        median_segment_rmse: None,
        full_query_rmse: None,
        final_estimate: None,
        oracle_calls: 0,
        max_segment_calls: 0,
        error: None,
    };
    let outcome = dataset.stream().and_then(|stream| {
        run_method(method, stream, segment_len, budget, settings, ColumnOracle::new(settings.use_predicate), seed)
    });
    match outcome {
        Ok(out) => {
            report.segment_errors = segment_errors(&out.segment_estimates, &truth.per_segment);
            report.median_segment_rmse = median_segment_rmse(&out.segment_estimates, &truth.per_segment);
            report.full_query_rmse = truth.full.map(|t| (out.final_estimate - t).abs());
            report.final_estimate = Some(out.final_estimate);
            report.max_segment_calls = out.calls_per_segment.iter().copied().max().unwrap_or(0);
            report.oracle_calls = out.oracle_calls;
            report.segment_estimates = out.segment_estimates;
        }
        Err(e) => report.error = Some(e.to_string()),
    }
    report
}

/// Runs every (dataset, budget, method, trial) combination in parallel.
/// Trial seeds depend on the dataset, budget and trial number but not on
/// the method, so methods are compared on common random numbers.
pub fn run_trials(config: &BenchConfig, base_dir: Option<&Path>) -> Result<BenchResults> {
    config.validate()?;
    let settings = config.settings();
    let mut loaded = Vec::new();
    for entry in &config.datasets {
        let data = LoadedDataset::load(entry, base_dir)?;
        let len = data.len()?;
        if len == 0 {
            return Err(Error::Config(format!("dataset {:?} is empty", entry.name)));
        }
        let truth = compute_truth(
            data.stream()?,
            segment_len_for(len, settings.segments),
            settings.aggregate,
            settings.use_predicate,
        )?;
        loaded.push((entry.name.clone(), data, truth));
    }

    let mut tasks = Vec::new();
    for (d, _) in loaded.iter().enumerate() {
        for &budget in &config.budgets {
            for &method in &config.methods {
                for trial in 0..config.trials {
                    tasks.push((d, budget, method, trial));
                }
            }
        }
    }
    let reports: Vec<TrialReport> = tasks
        .par_iter()
        .map(|&(d, budget, method, trial)| {
            let (name, data, truth) = &loaded[d];
            let seed = derive_seed_path(config.base_seed, &[d as u64, budget, trial]);
            run_trial(method, name, data, truth, budget, trial, seed, &settings)
        })
        .collect();
    let aggregates = aggregate(&reports);
    Ok(BenchResults { reports, aggregates })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResults {
    pub reports: Vec<TrialReport>,
    pub aggregates: Aggregates,
}

/// Averages per (method, dataset, budget).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub dataset: String,
    pub budget: u64,
    pub trials: u64,
    pub failed: u64,
    pub mean_median_segment_rmse: Option<f64>,
    pub mean_full_query_rmse: Option<f64>,
}

/// Cross-dataset geometric mean of the per-dataset averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoMeanRow {
    pub method: Method,
    pub budget: u64,
    pub datasets: u64,
    pub geo_mean_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub rows: Vec<AggregateRow>,
    pub geo_means: Vec<GeoMeanRow>,
    pub failed_trials: u64,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Pure function of the reports: input order does not matter.
pub fn aggregate(reports: &[TrialReport]) -> Aggregates {
    let mut sorted: Vec<&TrialReport> = reports.iter().collect();
    sorted.sort_by(|a, b| {
        (a.method, &a.dataset, a.budget, a.trial, a.seed).cmp(&(b.method, &b.dataset, b.budget, b.trial, b.seed))
    });
    let mut groups: BTreeMap<(Method, String, u64), Vec<&TrialReport>> = BTreeMap::new();
    for r in sorted {
        groups.entry((r.method, r.dataset.clone(), r.budget)).or_default().push(r);
    }
    let mut rows = Vec::new();
    let mut per_method_budget: BTreeMap<(Method, u64), Vec<Option<f64>>> = BTreeMap::new();
    let mut failed_trials = 0;
    for ((method, dataset, budget), group) in groups {
        let ok: Vec<&&TrialReport> = group.iter().filter(|r| r.is_ok()).collect();
        let failed = (group.len() - ok.len()) as u64;
        failed_trials += failed;
        let medians: Vec<f64> = ok.iter().filter_map(|r| r.median_segment_rmse).collect();
        let fulls: Vec<f64> = ok.iter().filter_map(|r| r.full_query_rmse).collect();
        let row = AggregateRow {
            method,
            dataset,
            budget,
            trials: ok.len() as u64,
            failed,
            mean_median_segment_rmse: mean(&medians),
            mean_full_query_rmse: mean(&fulls),
        };
        per_method_budget.entry((method, budget)).or_default().push(row.mean_median_segment_rmse);
        rows.push(row);
    }
    let geo_means = per_method_budget
        .into_iter()
        .map(|((method, budget), values)| {
            let present: Option<Vec<f64>> = values.iter().copied().collect();
            GeoMeanRow {
                method,
                budget,
                datasets: values.len() as u64,
                geo_mean_rmse: present.and_then(|v| geometric_mean(&v)),
            }
        })
        .collect();
    Aggregates { rows, geo_means, failed_trials }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

/// Tab-separated tables: per-dataset rows, then geometric means.
pub fn render_tables(agg: &Aggregates) -> String {
    let mut out = String::from("method\tdataset\tbudget\ttrials\tfailed\tmean_median_segment_rmse\tmean_full_query_rmse\n");
    for r in &agg.rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.method,
            r.dataset,
            r.budget,
            r.trials,
            r.failed,
            fmt_opt(r.mean_median_segment_rmse),
            fmt_opt(r.mean_full_query_rmse)
        );
    }
    out.push_str("\nmethod\tbudget\tdatasets\tgeo_mean_rmse\n");
    for g in &agg.geo_means {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", g.method, g.budget, g.datasets, fmt_opt(g.geo_mean_rmse));
    }
    let _ = writeln!(out, "\nfailed_trials\t{}", agg.failed_trials);
    out
}

/// One JSON object per line.
pub fn reports_to_jsonl(reports: &[TrialReport]) -> Result<String> {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::invalid(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn reports_from_jsonl(text: &str) -> Result<Vec<TrialReport>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::invalid(format!("report line {}: {e}", i + 1))))
        .collect()
}
