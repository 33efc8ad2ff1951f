//! Delimited dataset files.
//!
//! A dataset is a CSV table with a header row. `index` (unsigned integer,
//! strictly increasing) and `proxy` (real) are required. `stat` (real) and
//! `matches` (`0`/`1`, `true`/`false`) carry the oracle's answer and must
//! appear together or not at all. A `timestamp` column is accepted and
//! ignored; other extra columns are ignored too.
//!
//! Proxy scores outside `[0, 1]` are clamped and counted; non-finite values
//! are rejected.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::error::Result;
use crate::types::{Aggregate, OracleOutcome, Record};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset schema: {0}")]
    Schema(String),

    #[error("dataset row {row}: {message}")]
    Row { row: u64, message: String },

    #[error("dataset: {0}")]
    Csv(#[from] csv::Error),
}

fn row_error(row: u64, message: impl Into<String>) -> crate::error::Error {
    DatasetError::Row { row, message: message.into() }.into()
}

#[derive(Debug, Clone, Copy)]
struct Columns {
    index: usize,
    proxy: usize,
    oracle: Option<(usize, usize)>,
}

impl Columns {
    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let find = |name: &str| header.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
        let index = find("index").ok_or_else(|| DatasetError::Schema("missing 'index' column".into()))?;
        let proxy = find("proxy").ok_or_else(|| DatasetError::Schema("missing 'proxy' column".into()))?;
        let oracle = match (find("stat"), find("matches")) {
            (Some(s), Some(m)) => Some((s, m)),
            (None, None) => None,
            _ => {
                return Err(DatasetError::Schema("'stat' and 'matches' columns must appear together".into()).into())
            }
        };
        Ok(Self { index, proxy, oracle })
    }
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim() {
        "1" => Some(true),
        "0" => Some(false),
        t if t.eq_ignore_ascii_case("true") => Some(true),
        t if t.eq_ignore_ascii_case("false") => Some(false),
        _ => None,
    }
}

/// Streaming reader over a dataset; yields one [`Record`] per row.
#[derive(Debug)]
pub struct DatasetReader<R: Read> {
    reader: csv::Reader<R>,
    columns: Columns,
    row: csv::StringRecord,
    line: u64,
    last_index: Option<u64>,
    clamped: u64,
    failed: bool,
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(BufReader::with_capacity(1 << 16, File::open(path)?))
    }
}

impl<R: Read> DatasetReader<R> {
    pub fn new(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
        let header = reader.headers().map_err(DatasetError::from)?.clone();
        let columns = Columns::from_header(&header)?;
        Ok(Self { reader, columns, row: csv::StringRecord::new(), line: 1, last_index: None, clamped: 0, failed: false })
    }

    pub fn has_oracle_columns(&self) -> bool {
        self.columns.oracle.is_some()
    }

    /// Proxy scores clamped into `[0, 1]` so far.
    pub fn clamped(&self) -> u64 {
        self.clamped
    }

    fn parse_row(&mut self) -> Result<Record> {
        let line = self.line;
        let field = |i: usize| self.row.get(i).unwrap_or("");
        let index: u64 = field(self.columns.index)
            .parse()
            .map_err(|_| row_error(line, format!("index {:?} is not an unsigned integer", field(self.columns.index))))?;
        let mut proxy: f64 = field(self.columns.proxy)
            .parse()
            .map_err(|_| row_error(line, format!("proxy {:?} is not a number", field(self.columns.proxy))))?;
        if !proxy.is_finite() {
            return Err(row_error(line, "proxy must be finite"));
        }
        if !(0.0..=1.0).contains(&proxy) {
            proxy = proxy.clamp(0.0, 1.0);
            self.clamped += 1;
            if self.clamped == 1 {
                log::warn!("dataset row {line}: proxy clamped into [0, 1]");
            }
        }
        let label = match self.columns.oracle {
            None => None,
            Some((s, m)) => {
                let stat: f64 =
                    field(s).parse().map_err(|_| row_error(line, format!("stat {:?} is not a number", field(s))))?;
                if !stat.is_finite() {
                    return Err(row_error(line, "stat must be finite"));
                }
                let matches = parse_flag(field(m))
                    .ok_or_else(|| row_error(line, format!("matches {:?} is not 0 or 1", field(m))))?;
                Some(OracleOutcome::new(matches, stat))
            }
        };
        if let Some(prev) = self.last_index {
            if index <= prev {
                return Err(row_error(line, format!("index {index} does not increase (previous {prev})")));
            }
        }
        self.last_index = Some(index);
        Ok(Record { index, proxy, label, oracle: None })
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<Record>;

    fn next(&mut self) -> Option<Result<Record>> {
        if self.failed {
            return None;
        }
        match self.reader.read_record(&mut self.row) {
            Ok(false) => None,
            Ok(true) => {
                self.line += 1;
                let r = self.parse_row();
                self.failed = r.is_err();
                Some(r)
            }
            Err(e) => {
                self.failed = true;
                Some(Err(DatasetError::from(e).into()))
            }
        }
    }
}

/// Writes records with their oracle labels. Rows without a label are an
/// error.
pub fn write_dataset<W: Write, I: IntoIterator<Item = Record>>(out: W, records: I) -> Result<u64> {
    let mut out = BufWriter::new(out);
    writeln!(out, "index,proxy,stat,matches")?;
    let mut n = 0;
    for r in records {
        let label = r
            .label
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, format!("record {} has no label", r.index)))?;
        writeln!(out, "{},{},{},{}", r.index, r.proxy, label.stat, u8::from(label.matches))?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}

/// Exact answers computed from the oracle columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// Per segment; `None` for AVG over a segment without matching records.
    pub per_segment: Vec<Option<f64>>,
    pub full: Option<f64>,
    pub records: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    matched: u64,
    sum: f64,
}

impl Acc {
    fn value(&self, agg: Aggregate) -> Option<f64> {
        match agg {
            Aggregate::Avg => (self.matched > 0).then(|| self.sum / self.matched as f64),
            Aggregate::Sum => Some(self.sum),
            Aggregate::Count => Some(self.matched as f64),
        }
    }
}

/// One pass over labeled records, in segments of `segment_len`.
pub fn compute_truth<I>(records: I, segment_len: u64, agg: Aggregate, use_predicate: bool) -> Result<Truth>
where
    I: IntoIterator<Item = Result<Record>>,
{
    if segment_len == 0 {
        return Err(crate::error::Error::invalid("segment length must be at least 1"));
    }
    let mut segments: Vec<Acc> = Vec::new();
    let mut full = Acc::default();
    let mut n = 0u64;
    for record in records {
        let record = record?;
        let label = record.label.ok_or_else(|| row_error(n + 2, "record has no oracle columns"))?;
        if n % segment_len == 0 {
            segments.push(Acc::default());
        }
        n += 1;
        if !use_predicate || label.matches {
            let seg = segments.last_mut().expect("segment started");
            seg.matched += 1;
            seg.sum += label.stat;
            full.matched += 1;
            full.sum += label.stat;
        }
    }
    Ok(Truth { per_segment: segments.iter().map(|a| a.value(agg)).collect(), full: full.value(agg), records: n })
}
