//! Oracle adapters.
//!
//! An [`Oracle`] resolves a record to its predicate flag and statistic. The
//! engine and baselines wrap whatever oracle they are given in a
//! [`BudgetedOracle`], which counts every invocation and refuses calls past
//! the active segment's limit.
//!
//! External oracles speak a line protocol over a child process's stdio: one
//! request line holding the decimal record index, one response line holding
//! `<matches> <stat>` where `matches` is `0` or `1`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use thiserror::Error;

use crate::error::Error;
use crate::types::{OracleOutcome, Record};

#[derive(Debug, Error)]
pub enum OracleError {
    /// The per-segment limit would be exceeded. This is an engine bug and is
    /// never recovered from.
    #[error("oracle budget exceeded: call {attempted} with a per-segment limit of {limit}")]
    BudgetExceeded { limit: u64, attempted: u64 },

    /// The oracle could not label this record. The call still counts.
    #[error("oracle failed on record {index}: {reason}")]
    Failed { index: u64, reason: String },
}

impl From<OracleError> for Error {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::BudgetExceeded { limit, attempted } => Error::BudgetExceeded { limit, attempted },
            OracleError::Failed { index, reason } => {
                Error::invalid(format!("oracle failed on record {index}: {reason}"))
            }
        }
    }
}

pub trait Oracle {
    fn resolve(&mut self, record: &Record) -> Result<OracleOutcome, OracleError>;

    /// Called when a new segment (with its own budget) starts.
    fn start_segment(&mut self) {}
}

impl<O: Oracle + ?Sized> Oracle for &mut O {
    fn resolve(&mut self, record: &Record) -> Result<OracleOutcome, OracleError> {
        (**self).resolve(record)
    }

    fn start_segment(&mut self) {
        (**self).start_segment()
    }
}

impl<O: Oracle + ?Sized> Oracle for Box<O> {
    fn resolve(&mut self, record: &Record) -> Result<OracleOutcome, OracleError> {
        (**self).resolve(record)
    }

    fn start_segment(&mut self) {
        (**self).start_segment()
    }
}

/// Reads the ground truth carried in the record's `label`.
///
/// Without a predicate every record matches, so the predicate column is
/// ignored.
#[derive(Debug, Clone, Copy)]
pub struct ColumnOracle {
    pub use_predicate: bool,
}

impl ColumnOracle {
    pub fn new(use_predicate: bool) -> Self {
        Self { use_predicate }
    }
}

impl Oracle for ColumnOracle {
    fn resolve(&mut self, record: &Record) -> Result<OracleOutcome, OracleError> {
        let label = record.label.ok_or_else(|| OracleError::Failed {
            index: record.index,
            reason: "record has no oracle columns".into(),
        })?;
        Ok(OracleOutcome::new(!self.use_predicate || label.matches, label.stat))
    }
}

/// Counts oracle calls and enforces a per-segment limit.
#[derive(Debug)]
pub struct BudgetedOracle<O> {
    inner: O,
    limit: u64,
    segment_calls: u64,
    total_calls: u64,
    per_segment: Vec<u64>,
}

impl<O: Oracle> BudgetedOracle<O> {
    pub fn new(inner: O, limit: u64) -> Self {
        Self { inner, limit, segment_calls: 0, total_calls: 0, per_segment: Vec::new() }
    }

    pub fn limit(&self) -> u64 {
        self.limit
    }

    pub fn set_limit(&mut self, limit: u64) {
        self.limit = limit;
    }

    pub fn total_calls(&self) -> u64 {
        self.total_calls
    }

    pub fn segment_calls(&self) -> u64 {
        self.segment_calls
    }

    /// Calls made in every segment started so far, current one included.
    pub fn calls_per_segment(&self) -> &[u64] {
        &self.per_segment
    }

    pub fn max_segment_calls(&self) -> u64 {
        self.per_segment.iter().copied().max().unwrap_or(0)
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<O: Oracle> Oracle for BudgetedOracle<O> {
    fn resolve(&mut self, record: &Record) -> Result<OracleOutcome, OracleError> {
        if self.per_segment.is_empty() {
            self.per_segment.push(0);
        }
        if self.segment_calls >= self.limit {
            return Err(OracleError::BudgetExceeded { limit: self.limit, attempted: self.segment_calls + 1 });
        }
        self.segment_calls += 1;
        self.total_calls += 1;
        *self.per_segment.last_mut().expect("segment slot") += 1;
        self.inner.resolve(record)
    }

    fn start_segment(&mut self) {
        self.segment_calls = 0;
        self.per_segment.push(0);
        self.inner.start_segment();
    }
}

/// Parses one response line of the external-oracle protocol.
pub fn parse_oracle_response(line: &str) -> Result<OracleOutcome, String> {
    let mut fields = line.split_whitespace();
    let matches = match fields.next() {
        Some("1") => true,
        Some("0") => false,
        Some(other) => return Err(format!("predicate flag must be 0 or 1, got {other:?}")),
        None => return Err("empty response".into()),
    };
    let stat: f64 = fields
        .next()
        .ok_or("missing statistic")?
        .parse()
        .map_err(|e| format!("bad statistic: {e}"))?;
    if !stat.is_finite() {
        return Err("statistic must be finite".into());
    }
    if fields.next().is_some() {
        return Err("trailing fields in response".into());
    }
    Ok(OracleOutcome::new(matches, stat))
}

/// Oracle backed by a child process speaking the line protocol.
#[derive(Debug)]
pub struct ProcessOracle {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    use_predicate: bool,
    line: String,
}

impl ProcessOracle {
    /// Spawns `program` with `args`.
    pub fn spawn(program: &str, args: &[String], use_predicate: bool) -> std::io::Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self { child, stdin, stdout, use_predicate, line: String::new() })
    }

    fn exchange(&mut self, index: u64) -> Result<OracleOutcome, String> {
        writeln!(self.stdin, "{index}").and_then(|_| self.stdin.flush()).map_err(|e| e.to_string())?;
        self.line.clear();
        let n = self.stdout.read_line(&mut self.line).map_err(|e| e.to_string())?;
        if n == 0 {
            return Err("oracle process closed its output".into());
        }
        parse_oracle_response(self.line.trim_end())
    }
}

impl Oracle for ProcessOracle {
    fn resolve(&mut self, record: &Record) -> Result<OracleOutcome, OracleError> {
        let mut outcome = self
            .exchange(record.index)
            .map_err(|reason| OracleError::Failed { index: record.index, reason })?;
        if !self.use_predicate {
            outcome.matches = true;
        }
        Ok(outcome)
    }
}

impl Drop for ProcessOracle {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_oracle_reads_label() {
        let rec = Record::labeled(3, 0.1, OracleOutcome::new(false, 2.5));
        assert_eq!(ColumnOracle::new(true).resolve(&rec).unwrap(), OracleOutcome::new(false, 2.5));
        assert_eq!(ColumnOracle::new(false).resolve(&rec).unwrap(), OracleOutcome::new(true, 2.5));
        assert!(ColumnOracle::new(true).resolve(&Record::new(1, 0.2)).is_err());
    }

    #[test]
    fn budget_is_enforced_per_segment() {
        let rec = Record::labeled(0, 0.5, OracleOutcome::new(true, 1.0));
        let mut o = BudgetedOracle::new(ColumnOracle::new(false), 2);
        o.start_segment();
        o.resolve(&rec).unwrap();
        o.resolve(&rec).unwrap();
        assert!(matches!(o.resolve(&rec), Err(OracleError::BudgetExceeded { limit: 2, attempted: 3 })));
        o.start_segment();
        o.resolve(&rec).unwrap();
        assert_eq!(o.total_calls(), 3);
        assert_eq!(o.calls_per_segment(), &[2, 1]);
        assert_eq!(o.max_segment_calls(), 2);
    }

    #[test]
    fn failed_calls_still_count() {
        let mut o = BudgetedOracle::new(ColumnOracle::new(true), 5);
        assert!(o.resolve(&Record::new(0, 0.5)).is_err());
        assert_eq!(o.total_calls(), 1);
    }

    #[test]
    fn response_lines() {
        assert_eq!(parse_oracle_response("1 2.5").unwrap(), OracleOutcome::new(true, 2.5));
        assert_eq!(parse_oracle_response(" 0\t-3 ").unwrap(), OracleOutcome::new(false, -3.0));
        for bad in ["", "2 1.0", "1", "1 x", "1 2 3", "1 NaN", "1 inf"] {
            assert!(parse_oracle_response(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn process_oracle_round_trip() {
        // Answers "1 <2*index>" for every request.
        let args = vec!["-c".to_string(), "while read i; do echo \"1 $((i * 2))\"; done".to_string()];
        let Ok(mut o) = ProcessOracle::spawn("sh", &args, true) else {
            return;
        };
        assert_eq!(o.resolve(&Record::new(21, 0.0)).unwrap(), OracleOutcome::new(true, 42.0));
        assert_eq!(o.resolve(&Record::new(4, 0.0)).unwrap(), OracleOutcome::new(true, 8.0));
    }
}
