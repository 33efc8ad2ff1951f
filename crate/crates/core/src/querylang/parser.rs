use super::lexer::{parse_number_literal, tokenize, Tok, Token};
use super::{
    check_interval, CmpOp, ErrorCode, FuncExpr, Interval, IntervalUnit, ParseError, Predicate, QuerySpec, Tumble,
};
use crate::types::Aggregate;

type PResult<T> = Result<T, ParseError>;

/// Parses and validates one query. Errors carry a 1-based line and column.
pub fn parse_query(text: &str) -> Result<QuerySpec, ParseError> {
    let tokens = tokenize(text)?;
    let end = end_position(text);
    Parser { tokens, pos: 0, end }.query()
}

fn end_position(text: &str) -> (usize, usize) {
    let mut line = 1;
    let mut column = 1;
    for c in text.chars() {
        if c == '\n' {
            line += 1;
            column = 1;
        } else {
            column += 1;
        }
    }
    (line, column)
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Word(w) => format!("'{w}'"),
        Tok::Number(n) => format!("number {n}"),
        Tok::Str(s) => format!("string '{s}'"),
        Tok::LParen => "'('".into(),
        Tok::RParen => "')'".into(),
        Tok::Comma => "','".into(),
        Tok::Semicolon => "';'".into(),
        Tok::Op(op) => format!("'{op}'"),
    }
}

fn is_ident(word: &str) -> bool {
    word != "*"
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn here(&self) -> (usize, usize) {
        self.peek().map(|t| (t.line, t.column)).unwrap_or(self.end)
    }

    fn error_at(&self, (line, column): (usize, usize), code: ErrorCode, msg: impl Into<String>) -> ParseError {
        ParseError::new(code, msg, line, column)
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        match self.peek() {
            Some(t) => self.error_at(
                (t.line, t.column),
                ErrorCode::UnexpectedToken,
                format!("expected {expected}, found {}", describe(&t.tok)),
            ),
            None => self.error_at(self.end, ErrorCode::UnexpectedEnd, format!("expected {expected}, found end of input")),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Word(w), .. }) if w.eq_ignore_ascii_case(kw))
    }

    fn keyword(&mut self, kw: &str) -> PResult<(usize, usize)> {
        if self.at_keyword(kw) {
            let at = self.here();
            self.pos += 1;
            Ok(at)
        } else {
            Err(self.unexpected(kw))
        }
    }

    fn punct(&mut self, want: Tok, name: &str) -> PResult<()> {
        match self.peek() {
            Some(t) if t.tok == want => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.unexpected(name)),
        }
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek() {
            Some(Token { tok: Tok::Word(w), .. }) if is_ident(w) => {
                let w = w.clone();
                self.pos += 1;
                Ok(w)
            }
            _ => Err(self.unexpected(what)),
        }
    }

    /// `name` or `name(arg)`; `arg` may be `*`.
    fn func_expr(&mut self) -> PResult<FuncExpr> {
        let name = self.ident("an expression")?;
        if !matches!(self.peek(), Some(Token { tok: Tok::LParen, .. })) {
            return Ok(FuncExpr { name, arg: None });
        }
        self.pos += 1;
        let arg = match self.peek() {
            Some(Token { tok: Tok::Word(w), .. }) => {
                let w = w.clone();
                self.pos += 1;
                w
            }
            _ => return Err(self.unexpected("an argument")),
        };
        self.punct(Tok::RParen, "')'")?;
        Ok(FuncExpr { name, arg: Some(arg) })
    }

    fn query(&mut self) -> PResult<QuerySpec> {
        self.keyword("SELECT")?;
        let agg_at = self.here();
        let agg_word = self.ident("an aggregate")?;
        let agg = Aggregate::from_keyword(&agg_word).ok_or_else(|| {
            self.error_at(
                agg_at,
                ErrorCode::UnsupportedAggregate,
                format!("unsupported aggregate '{agg_word}'; expected AVG, SUM or COUNT"),
            )
        })?;
        self.punct(Tok::LParen, "'('")?;
        let expr = match self.peek() {
            Some(Token { tok: Tok::Word(w), .. }) if w == "*" => {
                self.pos += 1;
                FuncExpr::field("*")
            }
            _ => self.func_expr()?,
        };
        self.punct(Tok::RParen, "')'")?;
        self.keyword("FROM")?;
        let source = self.ident("a source name")?;

        let mut predicate: Option<Predicate> = None;
        let mut tumble: Option<(Tumble, (usize, usize))> = None;
        let mut oracle_limit: Option<u64> = None;
        let mut duration: Option<(Interval, (usize, usize))> = None;

        loop {
            let at = self.here();
            let duplicate = |p: &Self, name: &str| {
                p.error_at(at, ErrorCode::DuplicateClause, format!("{name} clause appears more than once"))
            };
            if self.at_keyword("WHERE") {
                if predicate.is_some() {
                    return Err(duplicate(self, "WHERE"));
                }
                self.pos += 1;
                predicate = Some(self.predicate()?);
            } else if self.at_keyword("TUMBLE") {
                if tumble.is_some() {
                    return Err(duplicate(self, "TUMBLE"));
                }
                self.pos += 1;
                self.punct(Tok::LParen, "'('")?;
                let column = self.ident("a column name")?;
                self.punct(Tok::Comma, "','")?;
                let interval_at = self.here();
                let interval = self.interval("TUMBLE")?;
                self.punct(Tok::RParen, "')'")?;
                tumble = Some((Tumble { column, interval }, interval_at));
            } else if self.at_keyword("ORACLE") {
                if oracle_limit.is_some() {
                    return Err(duplicate(self, "ORACLE LIMIT"));
                }
                self.pos += 1;
                self.keyword("LIMIT")?;
                oracle_limit = Some(self.limit()?);
            } else if self.at_keyword("DURATION") {
                if duration.is_some() {
                    return Err(duplicate(self, "DURATION"));
                }
                self.pos += 1;
                duration = Some((self.interval("DURATION")?, at));
            } else if self.at_keyword("USING") {
                break;
            } else if self.peek().is_none() {
                let (code, msg) = if tumble.is_none() {
                    (ErrorCode::MissingTumble, "query has no TUMBLE clause")
                } else if oracle_limit.is_none() {
                    (ErrorCode::MissingOracleLimit, "query has no ORACLE LIMIT clause")
                } else {
                    (ErrorCode::MissingUsing, "query has no USING clause")
                };
                return Err(self.error_at(self.end, code, msg));
            } else {
                return Err(self.unexpected("WHERE, TUMBLE, ORACLE LIMIT, DURATION or USING"));
            }
        }

        let using_at = self.keyword("USING")?;
        let Some((tumble, _)) = tumble else {
            return Err(self.error_at(using_at, ErrorCode::MissingTumble, "query has no TUMBLE clause"));
        };
        let Some(oracle_limit) = oracle_limit else {
            return Err(self.error_at(using_at, ErrorCode::MissingOracleLimit, "query has no ORACLE LIMIT clause"));
        };
        let proxy = self.func_expr()?;
        if matches!(self.peek(), Some(Token { tok: Tok::Semicolon, .. })) {
            self.pos += 1;
        }
        if let Some(t) = self.peek() {
            return Err(self.error_at(
                (t.line, t.column),
                ErrorCode::TrailingInput,
                format!("unexpected {} after the end of the query", describe(&t.tok)),
            ));
        }

        let duration_at = duration.as_ref().map(|(_, at)| *at).unwrap_or(using_at);
        let spec = QuerySpec {
            agg,
            expr,
            source,
            predicate,
            tumble,
            oracle_limit,
            duration: duration.map(|(d, _)| d),
            proxy,
        };
        spec.validate().map_err(|(code, msg)| self.error_at(duration_at, code, msg))?;
        Ok(spec)
    }

    fn predicate(&mut self) -> PResult<Predicate> {
        let expr = self.func_expr()?;
        let comparison = match self.peek() {
            Some(Token { tok: Tok::Op(op), .. }) => {
                let op = CmpOp::from_symbol(op).expect("lexer emits known operators");
                self.pos += 1;
                match self.peek() {
                    Some(Token { tok: Tok::Number(n), .. }) => {
                        let n = *n;
                        self.pos += 1;
                        Some((op, n))
                    }
                    _ => return Err(self.unexpected("a number")),
                }
            }
            _ => None,
        };
        Ok(Predicate { expr, comparison })
    }

    fn limit(&mut self) -> PResult<u64> {
        let at = self.here();
        match self.peek() {
            Some(Token { tok: Tok::Number(n), .. }) => {
                let n = *n;
                self.pos += 1;
                if n < 1.0 {
                    return Err(self.error_at(at, ErrorCode::NonPositiveLimit, "ORACLE LIMIT must be at least 1"));
                }
                if n.fract() != 0.0 || n > u64::MAX as f64 {
                    return Err(self.error_at(at, ErrorCode::InvalidNumber, "ORACLE LIMIT must be a whole number"));
                }
                Ok(n as u64)
            }
            _ => Err(self.unexpected("a call limit")),
        }
    }

    /// `[INTERVAL] magnitude unit`, where the magnitude is a number or a
    /// quoted number and the unit may sit inside the quotes.
    fn interval(&mut self, clause: &str) -> PResult<Interval> {
        if self.at_keyword("INTERVAL") {
            self.pos += 1;
        }
        let at = self.here();
        let (magnitude, inline_unit) = match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Number(n)) => {
                self.pos += 1;
                (n, None)
            }
            Some(Tok::Str(s)) => {
                self.pos += 1;
                let mut parts = s.split_whitespace();
                let number = parts.next().unwrap_or("");
                let unit = parts.next();
                if parts.next().is_some() {
                    return Err(self.error_at(at, ErrorCode::InvalidInterval, format!("malformed interval '{s}'")));
                }
                let (negative, body) = match number.strip_prefix('-') {
                    Some(rest) => (true, rest),
                    None => (false, number),
                };
                let value = parse_number_literal(body).ok_or_else(|| {
                    self.error_at(at, ErrorCode::InvalidNumber, format!("invalid interval magnitude '{number}'"))
                })?;
                let unit = match unit {
                    Some(u) => Some(IntervalUnit::from_word(u).ok_or_else(|| {
                        self.error_at(at, ErrorCode::UnknownUnit, format!("unknown interval unit '{u}'"))
                    })?),
                    None => None,
                };
                (if negative { -value } else { value }, unit)
            }
            _ => return Err(self.unexpected("an interval magnitude")),
        };
        let unit = match inline_unit {
            Some(u) => u,
            None => {
                let unit_at = self.here();
                let word = self.ident("an interval unit")?;
                IntervalUnit::from_word(&word).ok_or_else(|| {
                    self.error_at(unit_at, ErrorCode::UnknownUnit, format!("unknown interval unit '{word}'"))
                })?
            }
        };
        let interval = Interval { magnitude, unit };
        check_interval(&interval, clause).map_err(|(code, msg)| self.error_at(at, code, msg))?;
        Ok(interval)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const VIDEO: &str = "SELECT AVG(count_cars(frame))
FROM taipei
WHERE count_cars(frame) > 0
TUMBLE(timestamp, INTERVAL '108,000' FRAMES)
ORACLE LIMIT 5,000
USING proxy(frame);";

    #[test]
    fn parses_video_query() {
        let q = parse_query(VIDEO).unwrap();
        assert_eq!(q.agg, Aggregate::Avg);
        assert_eq!(q.expr, FuncExpr::call("count_cars", "frame"));
        assert_eq!(q.source, "taipei");
        let p = q.predicate.as_ref().unwrap();
        assert_eq!(p.comparison, Some((CmpOp::Gt, 0.0)));
        assert_eq!(q.tumble.interval, Interval { magnitude: 108_000.0, unit: IntervalUnit::Frames });
        assert_eq!(q.oracle_limit, 5000);
        assert_eq!(q.proxy, FuncExpr::call("proxy", "frame"));
        assert!(!q.has_bare_field());
    }

    #[test]
    fn where_after_tumble_and_lowercase() {
        let q = parse_query(
            "select sum(x) from s tumble(ts, 10 minutes) where flag(x) oracle limit 10 duration '1 hour' using p(x)",
        )
        .unwrap();
        assert_eq!(q.agg, Aggregate::Sum);
        assert!(q.has_bare_field());
        assert_eq!(q.tumble.interval.unit, IntervalUnit::Minutes);
        assert_eq!(q.duration, Some(Interval { magnitude: 1.0, unit: IntervalUnit::Hours }));
        assert_eq!(q.predicate.unwrap().comparison, None);
    }

    #[test]
    fn count_star() {
        let q = parse_query("SELECT COUNT(*) FROM s TUMBLE(i, 100 RECORDS) ORACLE LIMIT 5 USING p(x)").unwrap();
        assert_eq!(q.expr, FuncExpr::field("*"));
    }

    fn code(text: &str) -> ErrorCode {
        parse_query(text).unwrap_err().code
    }

    #[test]
    fn error_codes() {
        let ok = "SELECT AVG(x) FROM s TUMBLE(i, 100 RECORDS) ORACLE LIMIT 5 USING p(x)";
        assert!(parse_query(ok).is_ok());
        assert_eq!(code(&ok.replace("AVG", "MEDIAN")), ErrorCode::UnsupportedAggregate);
        assert_eq!(code(&ok.replace("TUMBLE(i, 100 RECORDS) ", "")), ErrorCode::MissingTumble);
        assert_eq!(code(&ok.replace("ORACLE LIMIT 5 ", "")), ErrorCode::MissingOracleLimit);
        assert_eq!(code(&ok.replace(" USING p(x)", "")), ErrorCode::MissingUsing);
        assert_eq!(code(&ok.replace("LIMIT 5", "LIMIT 0")), ErrorCode::NonPositiveLimit);
        assert_eq!(code(&ok.replace("LIMIT 5", "LIMIT 2.5")), ErrorCode::InvalidNumber);
        assert_eq!(code(&ok.replace("100 RECORDS", "0 RECORDS")), ErrorCode::NonPositiveInterval);
        assert_eq!(code(&ok.replace("100 RECORDS", "1.5 RECORDS")), ErrorCode::InvalidInterval);
        assert_eq!(code(&ok.replace("RECORDS", "FORTNIGHTS")), ErrorCode::UnknownUnit);
        assert_eq!(code(&format!("{ok} extra")), ErrorCode::TrailingInput);
        assert_eq!(code(&ok.replace("ORACLE", "DURATION 50 RECORDS ORACLE")), ErrorCode::DurationShorterThanTumble);
        assert_eq!(code(&ok.replace("ORACLE", "ORACLE LIMIT 3 ORACLE")), ErrorCode::DuplicateClause);
        assert_eq!(code("SELECT AVG(x"), ErrorCode::UnexpectedEnd);
        assert_eq!(code("SELECT AVG x"), ErrorCode::UnexpectedToken);
        assert_eq!(code(""), ErrorCode::UnexpectedEnd);
    }

    #[test]
    fn error_positions() {
        let e = parse_query("SELECT AVG(x)\nFROM s\nTUMBLE(i, 100 RECORDS)\nORACLE LIMIT 0\nUSING p(x)").unwrap_err();
        assert_eq!((e.code, e.line, e.column), (ErrorCode::NonPositiveLimit, 4, 14));
        let e = parse_query("SELECT MAX(x) FROM s").unwrap_err();
        assert_eq!((e.line, e.column), (1, 8));
    }
}
