use super::{DiagnosticKind, ParseDiagnostic, Span};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Number(f64),
    Ident(String),
    Let,
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Assign,
    Newline,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Number(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Let => "`let`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Assign => "`=`".into(),
            Tok::Newline => "end of line".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub tok: Tok,
    pub span: Span,
}

/// Splits source into tokens. Newlines inside parentheses are dropped, and
/// runs of newlines (including comment-only and blank lines) collapse into
/// one.
pub(crate) fn tokenize(source: &str) -> Result<Vec<Token>, ParseDiagnostic> {
    let chars: Vec<char> = source.chars().collect();
    let mut out: Vec<Token> = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let mut depth = 0usize;

    let push = |out: &mut Vec<Token>, tok: Tok, span: Span| {
        if tok == Tok::Newline
            && matches!(out.last(), None | Some(Token { tok: Tok::Newline, .. }))
        {
            return;
        }
        out.push(Token { tok, span });
    };

    while i < chars.len() {
        let c = chars[i];
        let span = Span { line, column: col };
        match c {
            '\n' => {
                if depth == 0 {
                    push(&mut out, Tok::Newline, span);
                }
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            ' ' | '\t' | '\r' => {}
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                    col += 1;
                }
                continue;
            }
            '(' => {
                depth += 1;
                push(&mut out, Tok::LParen, span);
            }
            ')' => {
                depth = depth.saturating_sub(1);
                push(&mut out, Tok::RParen, span);
            }
            ',' => push(&mut out, Tok::Comma, span),
            '+' => push(&mut out, Tok::Plus, span),
            '-' => push(&mut out, Tok::Minus, span),
            '*' => push(&mut out, Tok::Star, span),
            '/' => push(&mut out, Tok::Slash, span),
            '=' => push(&mut out, Tok::Assign, span),
            c if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if i < chars.len() && chars[i] == '.' {
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    } else {
                        return Err(lex_error(
                            Span { line, column: col + (j - start) },
                            "malformed exponent in number",
                        ));
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let value: f64 = text
                    .parse()
                    .map_err(|_| lex_error(span, format!("invalid number `{text}`")))?;
                if !value.is_finite() {
                    return Err(lex_error(span, format!("number `{text}` is out of range")));
                }
                col += i - start;
                push(&mut out, Tok::Number(value), span);
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                col += i - start;
                let tok = if text == "let" { Tok::Let } else { Tok::Ident(text) };
                push(&mut out, tok, span);
                continue;
            }
            other => {
                return Err(lex_error(span, format!("unexpected character `{other}`")));
            }
        }
        i += 1;
        col += 1;
    }
    if matches!(out.last(), Some(Token { tok: Tok::Newline, .. })) {
        out.pop();
    }
    out.push(Token {
        tok: Tok::Eof,
        span: Span { line, column: col },
    });
    Ok(out)
}

fn lex_error(span: Span, message: impl Into<String>) -> ParseDiagnostic {
    ParseDiagnostic::new(span, DiagnosticKind::Lex, message)
}
