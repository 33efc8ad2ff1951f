use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use streamq::baselines::{fixed_stratified_baseline, uniform_baseline, DEFAULT_FIXED_BOUNDARIES};
use streamq::bootstrap::{DEFAULT_CONFIDENCE, DEFAULT_RESAMPLES};
use streamq::engine::{run_query, RunOptions};
use streamq::harness::{
    parse_bench_config, render_tables, reports_to_jsonl, run_trials, write_dataset, DatasetReader, Method,
};
use streamq::oracle::{ColumnOracle, Oracle, ProcessOracle};
use streamq::querylang::{parse_query, QuerySpec};
use streamq::synth::{generate_stream, SynthGenerator, DEFAULT_BETA};
use streamq::types::{BudgetPlan, Stratification};

const GRAMMAR: &str = "\
query grammar:
  SELECT {AVG|SUM|COUNT}(expr) FROM source
  [WHERE expr [op number]]
  TUMBLE(column, [INTERVAL] magnitude unit)
  ORACLE LIMIT n
  [DURATION [INTERVAL] magnitude unit]
  USING expr
units: RECORDS, FRAMES, SECONDS, MINUTES, HOURS";

#[derive(Parser)]
#[command(name = "streamq", version, about = "Approximate aggregation over streams with a limited oracle budget")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one query against a dataset file and print per-segment estimates.
    Run(RunArgs),
    /// Run a benchmark described by a TOML config.
    Bench(BenchArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Check a query and print its canonical form.
    Parse(ParseArgs),
}

#[derive(Args)]
struct QuerySource {
    /// Query text.
    #[arg(long, conflicts_with = "query_file")]
    query: Option<String>,
    /// File holding the query text.
    #[arg(long)]
    query_file: Option<PathBuf>,
}

impl QuerySource {
    fn text(&self) -> Result<String> {
        match (&self.query, &self.query_file) {
            (Some(q), _) => Ok(q.clone()),
            (None, Some(p)) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
            (None, None) => bail!("give the query with --query or --query-file"),
        }
    }

    fn parse(&self) -> Result<QuerySpec> {
        let text = self.text()?;
        parse_query(&text).map_err(|e| anyhow!("query error at {e}\n\n{GRAMMAR}"))
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: QuerySource,
    /// Dataset CSV (index, proxy[, stat, matches]).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "inquest")]
    method: Method,
    /// Oracle calls per segment; overrides ORACLE LIMIT.
    #[arg(long)]
    budget: Option<u64>,
    /// Records per segment; overrides the TUMBLE interval.
    #[arg(long)]
    window: Option<u64>,
    /// Stop after this many segments.
    #[arg(long)]
    segments: Option<u64>,
    #[arg(long, default_value_t = BudgetPlan::DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = BudgetPlan::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = BudgetPlan::DEFAULT_DEFENSIVE_FRACTION)]
    defensive_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Freeze the strata at --boundaries.
    #[arg(long)]
    fixed_strata: bool,
    /// Freeze the dynamic allocation at uniform.
    #[arg(long)]
    fixed_alloc: bool,
    /// Average the smoothed state over all past segments instead of an EWMA.
    #[arg(long)]
    history_average: bool,
    /// Comma-separated proxy boundaries for fixed strata.
    #[arg(long, value_delimiter = ',')]
    boundaries: Option<Vec<f64>>,
    /// Records per second, for time-based intervals.
    #[arg(long)]
    rate: Option<f64>,
    /// External oracle program speaking the line protocol; arguments follow
    /// after a space.
    #[arg(long)]
    oracle_cmd: Option<String>,
    /// Bootstrap resamples for the final interval (0 disables it).
    #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
    bootstrap: usize,
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE)]
    confidence: f64,
    /// Write JSON lines here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// TOML benchmark config.
    #[arg(long)]
    config: PathBuf,
    /// Directory for reports.jsonl and tables.tsv; tables go to stdout when
    /// omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Override the config's trial count.
    #[arg(long)]
    trials: Option<u64>,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    shifts: usize,
    #[arg(long, default_value_t = 100_000)]
    length: u64,
    #[arg(long, default_value_t = BudgetPlan::DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generate in constant memory with a fixed proxy map instead of
    /// normalizing over the whole stream.
    #[arg(long)]
    streaming: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ParseArgs {
    #[command(flatten)]
    source: QuerySource,
    /// Print the parsed query as JSON.
    #[arg(long)]
    json: bool,
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn make_oracle(args: &RunArgs, use_predicate: bool) -> Result<Box<dyn Oracle>> {
    Ok(match &args.oracle_cmd {
        Some(cmd) => {
            let mut parts = cmd.split_whitespace();
            let program = parts.next().ok_or_else(|| anyhow!("empty --oracle-cmd"))?;
            let rest: Vec<String> = parts.map(str::to_string).collect();
            Box::new(ProcessOracle::spawn(program, &rest, use_predicate).with_context(|| format!("starting {program}"))?)
        }
        None => {
            let reader = DatasetReader::open(&args.data)?;
            if !reader.has_oracle_columns() {
                bail!("{} has no stat/matches columns; pass --oracle-cmd", args.data.display());
            }
            Box::new(ColumnOracle::new(use_predicate))
        }
    })
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let spec = args.source.parse()?;
    if spec.has_bare_field() {
        log::info!("aggregating the oracle statistic for bare field '{}'", spec.expr.name);
    }
    let use_predicate = spec.predicate.is_some();
    let mut opts = RunOptions::from_spec(&spec, args.rate, args.seed)?;
    let total = args.budget.unwrap_or(spec.oracle_limit);
    opts.plan = BudgetPlan::with_defensive_fraction(total, args.defensive_frac, args.k, args.alpha)?;
    if let Some(w) = args.window {
        opts.segment_len = w;
    }
    if let Some(t) = args.segments {
        opts.duration = Some(t * opts.segment_len);
    }
    opts.history_average = args.history_average;
    opts.fixed_alloc = args.fixed_alloc;
    let boundaries = match &args.boundaries {
        Some(b) => b.clone(),
        None if args.k == DEFAULT_FIXED_BOUNDARIES.len() + 1 => DEFAULT_FIXED_BOUNDARIES.to_vec(),
        None => Stratification::equal_width(args.k).boundaries().to_vec(),
    };
    if args.fixed_strata {
        opts.fixed_strata = Some(boundaries.clone());
    }
    if args.bootstrap > 0 {
        opts.bootstrap = Some((args.confidence, args.bootstrap));
    }

    let oracle = make_oracle(args, use_predicate)?;
    let stream = DatasetReader::open(&args.data)?;
    let records = stream.take(opts.duration.map_or(usize::MAX, |d| d as usize));
    let mut out = open_output(args.output.as_deref())?;

    match args.method {
        Method::Inquest | Method::InquestFixedStrata | Method::InquestFixedAlloc => {
            if args.method == Method::InquestFixedStrata {
                opts.fixed_strata = Some(boundaries);
            }
            if args.method == Method::InquestFixedAlloc {
                opts.fixed_alloc = true;
            }
            let mut run = run_query(records, opts, oracle)?;
            while let Some(report) = run.next() {
                let report = report?;
                let line = json!({
                    "segment": report.segment,
                    "records": report.stats.total_count(),
                    "oracle_calls": report.oracle_calls,
                    "failed_calls": report.failed_calls,
                    "boundaries": report.stratification.boundaries(),
                    "capacities": report.capacities,
                    "segment_estimate": report.segment_estimate,
                    "running_estimate": report.running_estimate,
                });
                writeln!(out, "{line}")?;
            }
            let est = run.estimate()?;
            writeln!(
                out,
                "{}",
                json!({
                    "final": true,
                    "aggregate": spec.agg,
                    "estimate": est.mu_hat,
                    "ci_low": est.ci_low,
                    "ci_high": est.ci_high,
                    "oracle_calls": est.oracle_calls,
                })
            )?;
        }
        Method::Uniform | Method::FixedStratified => {
            let len = match opts.duration {
                Some(d) => d,
                None => DatasetReader::open(&args.data)?.count() as u64,
            };
            let segments = len.div_ceil(opts.segment_len).max(1);
            let run = if args.method == Method::Uniform {
                uniform_baseline(records, opts.segment_len, opts.plan.total * segments, spec.agg, oracle, args.seed)?
            } else {
                let strata = Stratification::new(boundaries)?;
                fixed_stratified_baseline(records, opts.segment_len, &opts.plan, &strata, spec.agg, oracle, args.seed)?
            };
            for (t, e) in run.segment_estimates.iter().enumerate() {
                let line = json!({
                    "segment": t,
                    "records": run.history[t].total_count(),
                    "oracle_calls": run.calls_per_segment.get(t).copied().unwrap_or(0),
                    "segment_estimate": e,
                });
                writeln!(out, "{line}")?;
            }
            writeln!(
                out,
                "{}",
                json!({
                    "final": true,
                    "aggregate": spec.agg,
                    "estimate": run.estimate.mu_hat,
                    "oracle_calls": run.estimate.oracle_calls,
                })
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut config = parse_bench_config(&text)?;
    if let Some(t) = args.trials {
        config.trials = t;
    }
    if let Some(s) = args.seed {
        config.base_seed = s;
    }
    let base_dir = args.config.parent();
    let results = run_trials(&config, base_dir)?;
    let tables = render_tables(&results.aggregates);
    match &args.output {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("reports.jsonl"), reports_to_jsonl(&results.reports)?)?;
            fs::write(dir.join("tables.tsv"), &tables)?;
            fs::write(dir.join("aggregates.json"), serde_json::to_string_pretty(&results.aggregates)?)?;
        }
        None => print!("{tables}"),
    }
    if results.aggregates.failed_trials > 0 {
        log::warn!("{} trials failed; see the reports", results.aggregates.failed_trials);
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let out = open_output(args.output.as_deref())?;
    if args.streaming {
        let generator = SynthGenerator::new(args.shifts, args.length, args.k, args.beta, args.seed)?;
        log::info!("shift positions: {:?}", generator.shift_indices());
        write_dataset(out, generator)?;
    } else {
        let stream = generate_stream(args.shifts, args.length, args.k, args.beta, args.seed)?;
        log::info!("shift positions: {:?}", stream.shift_indices);
        write_dataset(out, stream.records)?;
    }
    Ok(())
}

fn cmd_parse(args: &ParseArgs) -> Result<()> {
    let spec = args.source.parse()?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&spec)?);
    } else {
        println!("{}", spec.render());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Parse(a) => cmd_parse(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
