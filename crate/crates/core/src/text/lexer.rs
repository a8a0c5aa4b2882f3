use alloc::string::String;
use alloc::vec::Vec;

use super::ParseError;
use crate::hir::SourceSpan;

#[derive(Clone, Debug, PartialEq)]
pub(super) enum Tok {
    /// Bare word; may contain `.` (opcode names).
    Ident(String),
    /// `%name`
    Value(String),
    /// `@name`
    Symbol(String),
    Str(String),
    Int(i64),
    Float(f64),
    Punct(char),
    Eof,
}

impl Tok {
    pub(super) fn describe(&self) -> String {
        use alloc::format;
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Value(s) => format!("`%{s}`"),
            Tok::Symbol(s) => format!("`@{s}`"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Int(v) => format!("integer {v}"),
            Tok::Float(v) => format!("number {v}"),
            Tok::Punct(c) => format!("`{c}`"),
            Tok::Eof => String::from("end of input"),
        }
    }
}

#[derive(Clone, Debug)]
pub(super) struct Token {
    pub tok: Tok,
    pub span: SourceSpan,
}

const PUNCT: &str = "=,:()[]{}<>^";

fn is_word_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_word(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn is_name(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

struct Lexer<'a> {
    src: &'a str,
    chars: core::iter::Peekable<core::str::CharIndices<'a>>,
    line: u32,
    column: u32,
}

impl<'a> Lexer<'a> {
    fn peek(&mut self) -> Option<char> {
        self.chars.peek().map(|&(_, c)| c)
    }

    fn pos(&mut self) -> usize {
        self.chars.peek().map(|&(i, _)| i).unwrap_or(self.src.len())
    }

    fn bump(&mut self) -> Option<char> {
        let (_, c) = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> &'a str {
        let start = self.pos();
        while self.peek().is_some_and(&f) {
            self.bump();
        }
        &self.src[start..self.pos()]
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('/') if self.src[self.pos()..].starts_with("//") => {
                    while self.peek().is_some_and(|c| c != '\n') {
                        self.bump();
                    }
                }
                _ => return,
            }
        }
    }

    fn next_token(&mut self) -> Result<Token, ParseError> {
        self.skip_trivia();
        let start = self.pos();
        let (line, column) = (self.line, self.column);
        let span = |end: usize| SourceSpan {
            start,
            end,
            line,
            column,
        };
        let Some(c) = self.peek() else {
            return Ok(Token {
                tok: Tok::Eof,
                span: span(start),
            });
        };
        let tok = if is_word_start(c) {
            Tok::Ident(self.take_while(is_word).into())
        } else if c == '%' || c == '@' {
            self.bump();
            let name = self.take_while(is_name);
            if name.is_empty() {
                return Err(ParseError::new(format_args!("expected a name after `{c}`"), span(self.pos())));
            }
            if c == '%' {
                Tok::Value(name.into())
            } else {
                Tok::Symbol(name.into())
            }
        } else if c == '"' {
            self.bump();
            Tok::Str(self.string(span(start))?)
        } else if c.is_ascii_digit() || c == '-' {
            self.number(span(start))?
        } else if PUNCT.contains(c) {
            self.bump();
            Tok::Punct(c)
        } else {
            self.bump();
            return Err(ParseError::new(format_args!("unexpected character {c:?}"), span(self.pos())));
        };
        Ok(Token {
            tok,
            span: span(self.pos()),
        })
    }

    fn string(&mut self, span: SourceSpan) -> Result<String, ParseError> {
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(ParseError::new("unterminated string", span)),
                Some('"') => return Ok(out),
                Some('\\') => match self.bump() {
                    Some('"') => out.push('"'),
                    Some('\\') => out.push('\\'),
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    other => {
                        return Err(ParseError::new(
                            format_args!("invalid escape {:?} in string", other.unwrap_or(' ')),
                            span,
                        ))
                    }
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn number(&mut self, span: SourceSpan) -> Result<Tok, ParseError> {
        let start = self.pos();
        if self.peek() == Some('-') {
            self.bump();
        }
        if self.peek().is_some_and(is_word_start) {
            let word = self.take_while(is_name);
            return match word {
                "inf" => Ok(Tok::Float(f64::NEG_INFINITY)),
                _ => Err(ParseError::new("expected a number after `-`", span)),
            };
        }
        self.take_while(|c| c.is_ascii_digit());
        let mut float = false;
        if self.peek() == Some('.') {
            float = true;
            self.bump();
            self.take_while(|c| c.is_ascii_digit());
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            float = true;
            self.bump();
            if matches!(self.peek(), Some('+' | '-')) {
                self.bump();
            }
            self.take_while(|c| c.is_ascii_digit());
        }
        let text = &self.src[start..self.pos()];
        let bad = || ParseError::new(format_args!("malformed number `{text}`"), span);
        if float {
            text.parse().map(Tok::Float).map_err(|_| bad())
        } else {
            text.parse().map(Tok::Int).map_err(|_| bad())
        }
    }
}

pub(super) fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut lexer = Lexer {
        src,
        chars: src.char_indices().peekable(),
        line: 1,
        column: 1,
    };
    let mut out = Vec::new();
    loop {
        let t = lexer.next_token()?;
        let eof = t.tok == Tok::Eof;
        out.push(t);
        if eof {
            return Ok(out);
        }
    }
}
