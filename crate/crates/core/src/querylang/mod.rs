//! The query language.
//!
//! ```text
//! SELECT { AVG | SUM | COUNT } ( field | fn(field) )
//! FROM source
//! [WHERE fn(field) [op number]]
//! TUMBLE(column, [INTERVAL] magnitude unit)
//! [WHERE ...]
//! ORACLE LIMIT n
//! [DURATION [INTERVAL] magnitude unit]
//! USING fn(field)
//! ```
//!
//! Keywords are case-insensitive. Numbers may use `,` thousands separators
//! and interval magnitudes may be quoted (`INTERVAL '108,000' FRAMES`). A
//! WHERE clause is accepted on either side of TUMBLE; rendering always puts
//! it first. `ORACLE LIMIT` is a per-segment number of oracle calls.

mod lexer;
mod parser;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::types::Aggregate;

pub use parser::parse_query;

/// `name` or `name(arg)`. Resolved by name at execution time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuncExpr {
    pub name: String,
    pub arg: Option<String>,
}

impl FuncExpr {
    pub fn call(name: &str, arg: &str) -> Self {
        Self { name: name.into(), arg: Some(arg.into()) }
    }

    pub fn field(name: &str) -> Self {
        Self { name: name.into(), arg: None }
    }
}

impl fmt::Display for FuncExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.arg {
            Some(arg) => write!(f, "{}({})", self.name, arg),
            None => f.write_str(&self.name),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Gt,
    Ge,
    Lt,
    Le,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
        }
    }

    fn from_symbol(s: &str) -> Option<Self> {
        Some(match s {
            ">" => CmpOp::Gt,
            ">=" => CmpOp::Ge,
            "<" => CmpOp::Lt,
            "<=" => CmpOp::Le,
            "=" => CmpOp::Eq,
            "!=" => CmpOp::Ne,
            _ => return None,
        })
    }

    pub fn apply(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
        }
    }
}

/// A named predicate function, optionally compared against a constant
/// (`count_cars(frame) > 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub expr: FuncExpr,
    pub comparison: Option<(CmpOp, f64)>,
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.expr)?;
        if let Some((op, value)) = self.comparison {
            write!(f, " {} {}", op.symbol(), value)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalUnit {
    Records,
    Frames,
    Seconds,
    Minutes,
    Hours,
}

impl IntervalUnit {
    pub fn keyword(self) -> &'static str {
        match self {
            IntervalUnit::Records => "RECORDS",
            IntervalUnit::Frames => "FRAMES",
            IntervalUnit::Seconds => "SECONDS",
            IntervalUnit::Minutes => "MINUTES",
            IntervalUnit::Hours => "HOURS",
        }
    }

    fn from_word(word: &str) -> Option<Self> {
        Some(match word.to_ascii_uppercase().as_str() {
            "RECORD" | "RECORDS" | "ROW" | "ROWS" => IntervalUnit::Records,
            "FRAME" | "FRAMES" => IntervalUnit::Frames,
            "SECOND" | "SECONDS" => IntervalUnit::Seconds,
            "MINUTE" | "MINUTES" => IntervalUnit::Minutes,
            "HOUR" | "HOURS" => IntervalUnit::Hours,
            _ => return None,
        })
    }

    /// Seconds per unit; `None` for count-based units.
    pub fn seconds(self) -> Option<f64> {
        match self {
            IntervalUnit::Records | IntervalUnit::Frames => None,
            IntervalUnit::Seconds => Some(1.0),
            IntervalUnit::Minutes => Some(60.0),
            IntervalUnit::Hours => Some(3600.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub magnitude: f64,
    pub unit: IntervalUnit,
}

impl Interval {
    pub fn records(n: u64) -> Self {
        Self { magnitude: n as f64, unit: IntervalUnit::Records }
    }

    pub fn is_count(&self) -> bool {
        self.unit.seconds().is_none()
    }

    /// Length in records. Time-based intervals need the source's rate in
    /// records per second.
    pub fn to_records(&self, rate: Option<f64>) -> Result<u64> {
        let n = match self.unit.seconds() {
            None => self.magnitude,
            Some(secs) => {
                let rate = rate.ok_or_else(|| {
                    Error::invalid(format!(
                        "interval in {} needs a record rate to convert to records",
                        self.unit.keyword()
                    ))
                })?;
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(Error::invalid("record rate must be positive"));
                }
                (self.magnitude * secs * rate).round()
            }
        };
        if !(n >= 1.0) {
            return Err(Error::invalid("interval is shorter than one record"));
        }
        Ok(n as u64)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "INTERVAL '{}' {}", self.magnitude, self.unit.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tumble {
    pub column: String,
    pub interval: Interval,
}

/// A validated query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub agg: Aggregate,
    pub expr: FuncExpr,
    pub source: String,
    pub predicate: Option<Predicate>,
    pub tumble: Tumble,
    pub oracle_limit: u64,
    pub duration: Option<Interval>,
    pub proxy: FuncExpr,
}

impl QuerySpec {
    /// The aggregated expression is a bare column rather than a function of
    /// one; the executor decides how to resolve it.
    pub fn has_bare_field(&self) -> bool {
        self.expr.arg.is_none()
    }

    /// Canonical text, parseable by [`parse_query`].
    pub fn render(&self) -> String {
        render_query(self)
    }

    pub(crate) fn validate(&self) -> std::result::Result<(), (ErrorCode, String)> {
        if self.oracle_limit == 0 {
            return Err((ErrorCode::NonPositiveLimit, "ORACLE LIMIT must be at least 1".into()));
        }
        check_interval(&self.tumble.interval, "TUMBLE")?;
        if let Some(d) = &self.duration {
            check_interval(d, "DURATION")?;
            let t = &self.tumble.interval;
            let comparable = match (d.unit.seconds(), t.unit.seconds()) {
                (None, None) => Some((d.magnitude, t.magnitude)),
                (Some(ds), Some(ts)) => Some((d.magnitude * ds, t.magnitude * ts)),
                _ => None,
            };
            if let Some((dur, tum)) = comparable {
                if dur < tum {
                    return Err((ErrorCode::DurationShorterThanTumble, "DURATION is shorter than the TUMBLE interval".into()));
                }
            }
        }
        Ok(())
    }
}

pub(super) fn check_interval(i: &Interval, clause: &str) -> std::result::Result<(), (ErrorCode, String)> {
    if !(i.magnitude > 0.0) || !i.magnitude.is_finite() {
        return Err((ErrorCode::NonPositiveInterval, format!("{clause} interval must be positive")));
    }
    if i.is_count() && i.magnitude.fract() != 0.0 {
        return Err((ErrorCode::InvalidInterval, format!("{clause} record count must be a whole number")));
    }
    Ok(())
}

/// Canonical text of a query: uppercase keywords, no digit separators, one
/// clause per line, WHERE before TUMBLE.
pub fn render_query(spec: &QuerySpec) -> String {
    let mut out = format!("SELECT {}({}) FROM {}\n", spec.agg.keyword(), spec.expr, spec.source);
    if let Some(p) = &spec.predicate {
        out.push_str(&format!("WHERE {p}\n"));
    }
    out.push_str(&format!("TUMBLE({}, {})\n", spec.tumble.column, spec.tumble.interval));
    out.push_str(&format!("ORACLE LIMIT {}\n", spec.oracle_limit));
    if let Some(d) = &spec.duration {
        out.push_str(&format!("DURATION {d}\n"));
    }
    out.push_str(&format!("USING {}", spec.proxy));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCode {
    UnexpectedChar,
    UnterminatedString,
    InvalidNumber,
    UnexpectedToken,
    UnexpectedEnd,
    UnsupportedAggregate,
    UnknownUnit,
    MissingTumble,
    MissingOracleLimit,
    MissingUsing,
    DuplicateClause,
    TrailingInput,
    NonPositiveLimit,
    NonPositiveInterval,
    InvalidInterval,
    DurationShorterThanTumble,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::UnexpectedChar => "unexpected-char",
            ErrorCode::UnterminatedString => "unterminated-string",
            ErrorCode::InvalidNumber => "invalid-number",
            ErrorCode::UnexpectedToken => "unexpected-token",
            ErrorCode::UnexpectedEnd => "unexpected-end",
            ErrorCode::UnsupportedAggregate => "unsupported-aggregate",
            ErrorCode::UnknownUnit => "unknown-unit",
            ErrorCode::MissingTumble => "missing-tumble",
            ErrorCode::MissingOracleLimit => "missing-oracle-limit",
            ErrorCode::MissingUsing => "missing-using",
            ErrorCode::DuplicateClause => "duplicate-clause",
            ErrorCode::TrailingInput => "trailing-input",
            ErrorCode::NonPositiveLimit => "nonpositive-limit",
            ErrorCode::NonPositiveInterval => "nonpositive-interval",
            ErrorCode::InvalidInterval => "invalid-interval",
            ErrorCode::DurationShorterThanTumble => "duration-shorter-than-tumble",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A diagnostic with a 1-based source position.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{line}:{column}: {message} [{code}]")]
pub struct ParseError {
    pub code: ErrorCode,
    pub message: String,
    pub line: usize,
    pub column: usize,
}

impl ParseError {
    pub(crate) fn new(code: ErrorCode, message: impl Into<String>, line: usize, column: usize) -> Self {
        Self { code, message: message.into(), line, column }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_conversion() {
        assert_eq!(Interval::records(100).to_records(None).unwrap(), 100);
        let half_hour = Interval { magnitude: 30.0, unit: IntervalUnit::Minutes };
        assert!(half_hour.to_records(None).is_err());
        assert_eq!(half_hour.to_records(Some(2.0)).unwrap(), 3600);
        assert!(half_hour.to_records(Some(0.0)).is_err());
    }

    #[test]
    fn render_has_no_where_without_predicate() {
        let spec = QuerySpec {
            agg: Aggregate::Sum,
            expr: FuncExpr::field("x"),
            source: "s".into(),
            predicate: None,
            tumble: Tumble { column: "i".into(), interval: Interval::records(10_000) },
            oracle_limit: 5000,
            duration: None,
            proxy: FuncExpr::call("p", "x"),
        };
        let text = render_query(&spec);
        assert!(!text.contains("WHERE"));
        assert!(text.contains("'10000' RECORDS"));
        assert!(text.contains("ORACLE LIMIT 5000"));
    }
}
