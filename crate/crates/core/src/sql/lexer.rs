use super::SqlError;

#[derive(Debug, Clone, PartialEq)]
pub enum Token {
    Ident(String),
    /// Unsigned magnitude; the parser applies a leading minus.
    Int(u64),
    Real(f64),
    Str(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Star,
    Semicolon,
    Plus,
    Minus,
    Op(&'static str),
}

impl Token {
    /// Case-insensitive keyword test.
    pub fn is_kw(&self, kw: &str) -> bool {
        matches!(self, Token::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    pub fn describe(&self) -> String {
        match self {
            Token::Ident(s) => s.clone(),
            Token::Int(v) => v.to_string(),
            Token::Real(v) => v.to_string(),
            Token::Str(s) => format!("'{s}'"),
            Token::LParen => "(".into(),
            Token::RParen => ")".into(),
            Token::Comma => ",".into(),
            Token::Dot => ".".into(),
            Token::Star => "*".into(),
            Token::Semicolon => ";".into(),
            Token::Plus => "+".into(),
            Token::Minus => "-".into(),
            Token::Op(s) => (*s).into(),
        }
    }
}

pub fn tokenize(input: &str) -> Result<Vec<Token>, SqlError> {
    let bytes = input.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'(' => push(&mut out, &mut i, Token::LParen),
            b')' => push(&mut out, &mut i, Token::RParen),
            b',' => push(&mut out, &mut i, Token::Comma),
            b'.' if !bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => push(&mut out, &mut i, Token::Dot),
            b'*' => push(&mut out, &mut i, Token::Star),
            b';' => push(&mut out, &mut i, Token::Semicolon),
            b'+' => push(&mut out, &mut i, Token::Plus),
            b'-' => push(&mut out, &mut i, Token::Minus),
            b'=' => push(&mut out, &mut i, Token::Op("=")),
            b'!' if bytes.get(i + 1) == Some(&b'=') => {
                out.push(Token::Op("<>"));
                i += 2;
            }
            b'<' => {
                let (tok, n) = match bytes.get(i + 1) {
                    Some(b'=') => ("<=", 2),
                    Some(b'>') => ("<>", 2),
                    _ => ("<", 1),
                };
                out.push(Token::Op(tok));
                i += n;
            }
            b'>' => {
                let (tok, n) = if bytes.get(i + 1) == Some(&b'=') { (">=", 2) } else { (">", 1) };
                out.push(Token::Op(tok));
                i += n;
            }
            b'\'' => {
                let mut s = Vec::new();
                i += 1;
                loop {
                    match bytes.get(i) {
                        None => return Err(SqlError::Syntax("unterminated string literal".into())),
                        Some(b'\'') if bytes.get(i + 1) == Some(&b'\'') => {
                            s.push(b'\'');
                            i += 2;
                        }
                        Some(b'\'') => {
                            i += 1;
                            break;
                        }
                        Some(&b) => {
                            s.push(b);
                            i += 1;
                        }
                    }
                }
                // input is &str and quotes are ASCII, so the slice stays valid UTF-8
                out.push(Token::Str(String::from_utf8(s).expect("utf-8 preserved")));
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                let mut real = false;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    real = true;
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        real = true;
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                if i < bytes.len() && (bytes[i].is_ascii_alphabetic() || bytes[i] == b'_') {
                    return Err(SqlError::Syntax(format!("malformed number near '{}'", &input[start..=i])));
                }
                let text = &input[start..i];
                if real {
                    let v: f64 = text
                        .parse()
                        .map_err(|_| SqlError::Syntax(format!("malformed number '{text}'")))?;
                    if !v.is_finite() {
                        return Err(SqlError::Syntax(format!("number out of range '{text}'")));
                    }
                    out.push(Token::Real(v));
                } else {
                    let v: u64 = text
                        .parse()
                        .map_err(|_| SqlError::Syntax(format!("integer out of range '{text}'")))?;
                    out.push(Token::Int(v));
                }
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token::Ident(input[start..i].to_string()));
            }
            _ => {
                let ch = input[i..].chars().next().unwrap_or('?');
                return Err(SqlError::Syntax(format!("unexpected character '{ch}'")));
            }
        }
    }
    Ok(out)
}

fn push(out: &mut Vec<Token>, i: &mut usize, t: Token) {
    out.push(t);
    *i += 1;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubled_quote_escape() {
        let t = tokenize("'it''s'").unwrap();
        assert_eq!(t, vec![Token::Str("it's".into())]);
    }

    #[test]
    fn operators() {
        let t = tokenize("a<>b != c <= d >= e").unwrap();
        let ops: Vec<_> = t.iter().filter_map(|t| if let Token::Op(o) = t { Some(*o) } else { None }).collect();
        assert_eq!(ops, vec!["<>", "<>", "<=", ">="]);
    }

    #[test]
    fn numbers() {
        assert_eq!(tokenize("1.5e3").unwrap(), vec![Token::Real(1500.0)]);
        assert_eq!(tokenize("42").unwrap(), vec![Token::Int(42)]);
        assert_eq!(tokenize(".5").unwrap(), vec![Token::Real(0.5)]);
        assert!(tokenize("1e999").is_err());
        assert!(tokenize("12abc").is_err());
    }
}
