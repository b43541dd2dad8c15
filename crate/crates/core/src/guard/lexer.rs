//! Tokenizer for the guard dialect.

use super::ast::Span;
use super::SyntaxError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keyword {
    Select,
    Distinct,
    All,
    From,
    Where,
    Group,
    By,
    Having,
    Order,
    Asc,
    Desc,
    Limit,
    As,
    Join,
    Inner,
    Left,
    Outer,
    On,
    And,
    Or,
    Not,
    In,
    Like,
    Between,
    Is,
    Null,
    True,
    False,
}

const KEYWORDS: &[(&str, Keyword)] = &[
    ("SELECT", Keyword::Select),
    ("DISTINCT", Keyword::Distinct),
    ("ALL", Keyword::All),
    ("FROM", Keyword::From),
    ("WHERE", Keyword::Where),
    ("GROUP", Keyword::Group),
    ("BY", Keyword::By),
    ("HAVING", Keyword::Having),
    ("ORDER", Keyword::Order),
    ("ASC", Keyword::Asc),
    ("DESC", Keyword::Desc),
    ("LIMIT", Keyword::Limit),
    ("AS", Keyword::As),
    ("JOIN", Keyword::Join),
    ("INNER", Keyword::Inner),
    ("LEFT", Keyword::Left),
    ("OUTER", Keyword::Outer),
    ("ON", Keyword::On),
    ("AND", Keyword::And),
    ("OR", Keyword::Or),
    ("NOT", Keyword::Not),
    ("IN", Keyword::In),
    ("LIKE", Keyword::Like),
    ("BETWEEN", Keyword::Between),
    ("IS", Keyword::Is),
    ("NULL", Keyword::Null),
    ("TRUE", Keyword::True),
    ("FALSE", Keyword::False),
];

/// Words outside the dialect that are rejected outright rather than being
/// accepted as identifiers. Also used by the renderer to decide quoting.
pub const UNSUPPORTED_WORDS: &[&str] = &[
    "INSERT",
    "UPDATE",
    "DELETE",
    "DROP",
    "CREATE",
    "ALTER",
    "TRUNCATE",
    "REPLACE",
    "MERGE",
    "UPSERT",
    "GRANT",
    "REVOKE",
    "ATTACH",
    "DETACH",
    "PRAGMA",
    "VACUUM",
    "REINDEX",
    "ANALYZE",
    "EXPLAIN",
    "BEGIN",
    "COMMIT",
    "ROLLBACK",
    "SAVEPOINT",
    "RELEASE",
    "UNION",
    "INTERSECT",
    "EXCEPT",
    "WITH",
    "RECURSIVE",
    "EXISTS",
    "CASE",
    "WHEN",
    "THEN",
    "ELSE",
    "END",
    "CAST",
    "OVER",
    "PARTITION",
    "WINDOW",
    "OFFSET",
    "RIGHT",
    "FULL",
    "CROSS",
    "NATURAL",
    "USING",
    "INTO",
    "VALUES",
    "SET",
    "TABLE",
    "INDEX",
    "VIEW",
    "TRIGGER",
    "ESCAPE",
    "GLOB",
    "REGEXP",
    "MATCH",
    "COLLATE",
    "FILTER",
    "RETURNING",
    "LOAD_EXTENSION",
];

pub fn keyword(word: &str) -> Option<Keyword> {
    let upper = word.to_ascii_uppercase();
    KEYWORDS
        .iter()
        .find(|(k, _)| *k == upper)
        .map(|(_, kw)| *kw)
}

pub fn is_reserved(word: &str) -> bool {
    let upper = word.to_ascii_uppercase();
    keyword(&upper).is_some() || UNSUPPORTED_WORDS.contains(&upper.as_str())
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Keyword(Keyword),
    Ident {
        value: String,
        quoted: bool,
    },
    /// A reserved word outside the dialect (DROP, UNION, ...).
    Unsupported(String),
    String(String),
    Number(String),
    Comma,
    Dot,
    LParen,
    RParen,
    Star,
    Plus,
    Minus,
    Slash,
    Percent,
    Concat,
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
    Semicolon,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, SyntaxError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'-' && bytes.get(i + 1) == Some(&b'-') {
            let end = src[i..].find('\n').map_or(src.len(), |n| i + n);
            reject_separator_in_comment(src, start, end)?;
            i = end;
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            let end = match src[i + 2..].find("*/") {
                Some(n) => i + 2 + n + 2,
                None => {
                    return Err(SyntaxError::new(
                        "unterminated block comment",
                        Span::new(start, src.len()),
                    ))
                }
            };
            reject_separator_in_comment(src, start, end)?;
            i = end;
            continue;
        }
        let simple = |kind: TokenKind, len: usize| Token {
            kind,
            span: Span::new(start, start + len),
        };
        match c {
            b',' => {
                tokens.push(simple(TokenKind::Comma, 1));
                i += 1;
            }
            b'.' if !bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => {
                tokens.push(simple(TokenKind::Dot, 1));
                i += 1;
            }
            b'(' => {
                tokens.push(simple(TokenKind::LParen, 1));
                i += 1;
            }
            b')' => {
                tokens.push(simple(TokenKind::RParen, 1));
                i += 1;
            }
            b'*' => {
                tokens.push(simple(TokenKind::Star, 1));
                i += 1;
            }
            b'+' => {
                tokens.push(simple(TokenKind::Plus, 1));
                i += 1;
            }
            b'-' => {
                tokens.push(simple(TokenKind::Minus, 1));
                i += 1;
            }
            b'/' => {
                tokens.push(simple(TokenKind::Slash, 1));
                i += 1;
            }
            b'%' => {
                tokens.push(simple(TokenKind::Percent, 1));
                i += 1;
            }
            b';' => {
                tokens.push(simple(TokenKind::Semicolon, 1));
                i += 1;
            }
            b'|' if bytes.get(i + 1) == Some(&b'|') => {
                tokens.push(simple(TokenKind::Concat, 2));
                i += 2;
            }
            b'=' => {
                let len = if bytes.get(i + 1) == Some(&b'=') {
                    2
                } else {
                    1
                };
                tokens.push(simple(TokenKind::Eq, len));
                i += len;
            }
            b'!' if bytes.get(i + 1) == Some(&b'=') => {
                tokens.push(simple(TokenKind::NotEq, 2));
                i += 2;
            }
            b'<' => match bytes.get(i + 1) {
                Some(b'=') => {
                    tokens.push(simple(TokenKind::LtEq, 2));
                    i += 2;
                }
                Some(b'>') => {
                    tokens.push(simple(TokenKind::NotEq, 2));
                    i += 2;
                }
                _ => {
                    tokens.push(simple(TokenKind::Lt, 1));
                    i += 1;
                }
            },
            b'>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    tokens.push(simple(TokenKind::GtEq, 2));
                    i += 2;
                } else {
                    tokens.push(simple(TokenKind::Gt, 1));
                    i += 1;
                }
            }
            b'\'' => {
                let (value, end) = read_quoted(src, i, '\'').ok_or_else(|| {
                    SyntaxError::new("unterminated string literal", Span::new(start, src.len()))
                })?;
                tokens.push(Token {
                    kind: TokenKind::String(value),
                    span: Span::new(start, end),
                });
                i = end;
            }
            b'"' => {
                let (value, end) = read_quoted(src, i, '"').ok_or_else(|| {
                    SyntaxError::new(
                        "unterminated quoted identifier",
                        Span::new(start, src.len()),
                    )
                })?;
                if value.is_empty() {
                    return Err(SyntaxError::new(
                        "empty quoted identifier",
                        Span::new(start, end),
                    ));
                }
                tokens.push(Token {
                    kind: TokenKind::Ident {
                        value,
                        quoted: true,
                    },
                    span: Span::new(start, end),
                });
                i = end;
            }
            b'0'..=b'9' | b'.' => {
                let mut end = i;
                let mut seen_dot = false;
                while end < bytes.len()
                    && (bytes[end].is_ascii_digit() || (bytes[end] == b'.' && !seen_dot))
                {
                    seen_dot |= bytes[end] == b'.';
                    end += 1;
                }
                if end < bytes.len() && (bytes[end].is_ascii_alphabetic() || bytes[end] == b'_') {
                    return Err(SyntaxError::new(
                        "malformed numeric literal",
                        Span::new(start, end + 1),
                    ));
                }
                let mut text = src[start..end].to_string();
                if text.starts_with('.') {
                    text.insert(0, '0');
                }
                if text.ends_with('.') {
                    text.pop();
                }
                tokens.push(Token {
                    kind: TokenKind::Number(text),
                    span: Span::new(start, end),
                });
                i = end;
            }
            _ if c.is_ascii_alphabetic() || c == b'_' => {
                let mut end = i;
                while end < bytes.len()
                    && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_')
                {
                    end += 1;
                }
                let word = &src[start..end];
                let kind = if let Some(kw) = keyword(word) {
                    TokenKind::Keyword(kw)
                } else if UNSUPPORTED_WORDS.contains(&word.to_ascii_uppercase().as_str()) {
                    TokenKind::Unsupported(word.to_ascii_uppercase())
                } else {
                    TokenKind::Ident {
                        value: word.to_string(),
                        quoted: false,
                    }
                };
                tokens.push(Token {
                    kind,
                    span: Span::new(start, end),
                });
                i = end;
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                let message = match ch {
                    '?' | '$' | ':' | '@' => {
                        "bind placeholders are not accepted in generated SQL".to_string()
                    }
                    '`' | '[' => "only double-quoted identifiers are supported".to_string(),
                    _ => format!("unexpected character {ch:?}"),
                };
                return Err(SyntaxError::new(
                    message,
                    Span::new(start, start + ch.len_utf8()),
                ));
            }
        }
    }
    tokens.push(Token {
        kind: TokenKind::Eof,
        span: Span::new(src.len(), src.len()),
    });
    Ok(tokens)
}

fn reject_separator_in_comment(src: &str, start: usize, end: usize) -> Result<(), SyntaxError> {
    if src[start..end].contains(';') {
        Err(SyntaxError::new(
            "comment contains a statement separator",
            Span::new(start, end),
        ))
    } else {
        Ok(())
    }
}

/// Reads a quoted run starting at `start` (the opening quote). A doubled
/// quote is an escaped quote. Returns the unescaped text and the index after
/// the closing quote.
fn read_quoted(src: &str, start: usize, quote: char) -> Option<(String, usize)> {
    let mut value = String::new();
    let mut chars = src[start + 1..].char_indices().peekable();
    while let Some((offset, c)) = chars.next() {
        if c == quote {
            if chars.peek().is_some_and(|(_, next)| *next == quote) {
                chars.next();
                value.push(quote);
                continue;
            }
            return Some((value, start + 1 + offset + 1));
        }
        value.push(c);
    }
    None
}
