use super::{ErrorCode, ParseError};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Word(String),
    Number(f64),
    Str(String),
    LParen,
    RParen,
    Comma,
    Semicolon,
    Op(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: usize,
    pub column: usize,
}

/// Parses a decimal literal that may use `,` as a thousands separator.
/// Groups after the first must be exactly three digits.
pub(crate) fn parse_number_literal(text: &str) -> Option<f64> {
    let text = text.trim();
    let (int_part, frac_part) = match text.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (text, None),
    };
    let mut groups = int_part.split(',');
    let first = groups.next()?;
    if first.is_empty() || !first.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let mut digits = first.to_string();
    for g in groups {
        if g.len() != 3 || !g.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        digits.push_str(g);
    }
    if let Some(f) = frac_part {
        if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        digits.push('.');
        digits.push_str(f);
    }
    digits.parse().ok()
}

pub(crate) fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let (mut i, mut line, mut column) = (0usize, 1usize, 1usize);

    macro_rules! advance {
        ($n:expr) => {
            for _ in 0..$n {
                if chars[i] == '\n' {
                    line += 1;
                    column = 1;
                } else {
                    column += 1;
                }
                i += 1;
            }
        };
    }

    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, column);
        let push = |tokens: &mut Vec<Token>, tok| tokens.push(Token { tok, line: tl, column: tc });
        if c.is_whitespace() {
            advance!(1);
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                advance!(1);
            }
            continue;
        }
        match c {
            '(' => {
                push(&mut tokens, Tok::LParen);
                advance!(1);
            }
            ')' => {
                push(&mut tokens, Tok::RParen);
                advance!(1);
            }
            ',' => {
                push(&mut tokens, Tok::Comma);
                advance!(1);
            }
            ';' => {
                push(&mut tokens, Tok::Semicolon);
                advance!(1);
            }
            '*' => {
                push(&mut tokens, Tok::Word("*".into()));
                advance!(1);
            }
            '>' | '<' | '=' | '!' => {
                let next = chars.get(i + 1).copied();
                let (op, len) = match (c, next) {
                    ('>', Some('=')) => (">=", 2),
                    ('<', Some('=')) => ("<=", 2),
                    ('!', Some('=')) => ("!=", 2),
                    ('<', Some('>')) => ("!=", 2),
                    ('>', _) => (">", 1),
                    ('<', _) => ("<", 1),
                    ('=', _) => ("=", 1),
                    _ => {
                        return Err(ParseError::new(ErrorCode::UnexpectedChar, "unexpected character '!'", tl, tc));
                    }
                };
                push(&mut tokens, Tok::Op(op));
                advance!(len);
            }
            '\'' => {
                let mut j = i + 1;
                while j < chars.len() && chars[j] != '\'' {
                    j += 1;
                }
                if j >= chars.len() {
                    return Err(ParseError::new(ErrorCode::UnterminatedString, "unterminated string literal", tl, tc));
                }
                let body: String = chars[i + 1..j].iter().collect();
                push(&mut tokens, Tok::Str(body));
                advance!(j + 1 - i);
            }
            c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let mut j = i + 1;
                loop {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    // A comma continues the number only before exactly three
                    // digits; otherwise it is a separator.
                    let grouped = chars.get(j) == Some(&',')
                        && (1..=3).all(|d| chars.get(j + d).is_some_and(|x| x.is_ascii_digit()))
                        && !chars.get(j + 4).is_some_and(|x| x.is_ascii_digit());
                    if grouped {
                        j += 4;
                    } else {
                        break;
                    }
                }
                if chars.get(j) == Some(&'.') && chars.get(j + 1).is_some_and(|d| d.is_ascii_digit()) {
                    j += 1;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                let text: String = chars[i..j].iter().collect();
                let (negative, body) = match text.strip_prefix('-') {
                    Some(rest) => (true, rest),
                    None => (false, text.as_str()),
                };
                let value = parse_number_literal(body).ok_or_else(|| {
                    ParseError::new(ErrorCode::InvalidNumber, format!("invalid number {text:?}"), tl, tc)
                })?;
                push(&mut tokens, Tok::Number(if negative { -value } else { value }));
                advance!(j - i);
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let word: String = chars[i..j].iter().collect();
                push(&mut tokens, Tok::Word(word));
                advance!(j - i);
            }
            other => {
                return Err(ParseError::new(
                    ErrorCode::UnexpectedChar,
                    format!("unexpected character {other:?}"),
                    tl,
                    tc,
                ));
            }
        }
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        tokenize(s).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn grouped_numbers() {
        assert_eq!(toks("1,000"), vec![Tok::Number(1000.0)]);
        assert_eq!(toks("108,000,000"), vec![Tok::Number(108_000_000.0)]);
        assert_eq!(toks("x, 10,000 FRAMES"), vec![
            Tok::Word("x".into()),
            Tok::Comma,
            Tok::Number(10_000.0),
            Tok::Word("FRAMES".into())
        ]);
        assert_eq!(toks("5,00"), vec![Tok::Number(5.0), Tok::Comma, Tok::Number(0.0)]);
        assert_eq!(toks("-2.5"), vec![Tok::Number(-2.5)]);
    }

    #[test]
    fn literals() {
        assert_eq!(parse_number_literal("108,000"), Some(108_000.0));
        assert_eq!(parse_number_literal("30"), Some(30.0));
        assert_eq!(parse_number_literal("0.25"), Some(0.25));
        for bad in ["", "1,00", ",100", "1.", "a", "1,0000", "-1"] {
            assert_eq!(parse_number_literal(bad), None, "{bad:?}");
        }
    }

    #[test]
    fn positions_and_errors() {
        let t = tokenize("SELECT\n  AVG").unwrap();
        assert_eq!((t[1].line, t[1].column), (2, 3));
        let e = tokenize("SELECT 'abc").unwrap_err();
        assert_eq!((e.code, e.line, e.column), (ErrorCode::UnterminatedString, 1, 8));
        assert_eq!(tokenize("a # b").unwrap_err().code, ErrorCode::UnexpectedChar);
        assert_eq!(toks("a -- comment\nb"), vec![Tok::Word("a".into()), Tok::Word("b".into())]);
        assert_eq!(toks("a >= 1"), vec![Tok::Word("a".into()), Tok::Op(">="), Tok::Number(1.0)]);
    }
}
