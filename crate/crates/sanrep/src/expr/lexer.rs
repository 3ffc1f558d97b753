//! Tokenizer shared by the expression parser and the model-file parser.

use std::fmt;

/// 1-based source position of a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Int(i64),
    Real(f64),
    Ident(String),

    // Expression keywords.
    If,
    Then,
    Else,
    True,
    False,
    RepIndexKw,
    NKw,
    RepSharedKw,
    CountKw,
    ContainsKw,

    // Model-file keywords.
    Atomic,
    Place,
    Activity,
    Rate,
    Delay,
    Weight,
    Priority,
    Enabled,
    Case,
    Compose,
    Rep,
    NaRep,
    Join,
    Share,
    Local,
    PlaceShared,
    UpShared,
    Reward,
    Impulse,
    TimeAvg,
    Instant,
    Accumulated,
    Ring,
    Star,
    Full,
    Grid,

    Plus,
    Minus,
    Mul,
    Slash,
    Percent,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    Ne,
    AndAnd,
    OrOr,
    Bang,
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Semi,
    Colon,
    Dot,
    Assign,
    Arrow,

    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Int(v) => format!("integer {v}"),
            Tok::Real(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Eof => "end of input".to_string(),
            other => format!("`{}`", other.text()),
        }
    }

    fn text(&self) -> &'static str {
        match self {
            Tok::If => "if",
            Tok::Then => "then",
            Tok::Else => "else",
            Tok::True => "true",
            Tok::False => "false",
            Tok::RepIndexKw => "repindex",
            Tok::NKw => "n",
            Tok::RepSharedKw => "repshared",
            Tok::CountKw => "count",
            Tok::ContainsKw => "contains",
            Tok::Atomic => "atomic",
            Tok::Place => "place",
            Tok::Activity => "activity",
            Tok::Rate => "rate",
            Tok::Delay => "delay",
            Tok::Weight => "weight",
            Tok::Priority => "priority",
            Tok::Enabled => "enabled",
            Tok::Case => "case",
            Tok::Compose => "compose",
            Tok::Rep => "rep",
            Tok::NaRep => "narep",
            Tok::Join => "join",
            Tok::Share => "share",
            Tok::Local => "local",
            Tok::PlaceShared => "placeshared",
            Tok::UpShared => "upshared",
            Tok::Reward => "reward",
            Tok::Impulse => "impulse",
            Tok::TimeAvg => "timeavg",
            Tok::Instant => "instant",
            Tok::Accumulated => "accumulated",
            Tok::Ring => "ring",
            Tok::Star => "star",
            Tok::Full => "full",
            Tok::Grid => "grid",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Mul => "*",
            Tok::Slash => "/",
            Tok::Percent => "%",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Gt => ">",
            Tok::Ge => ">=",
            Tok::EqEq => "==",
            Tok::Ne => "!=",
            Tok::AndAnd => "&&",
            Tok::OrOr => "||",
            Tok::Bang => "!",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::Comma => ",",
            Tok::Semi => ";",
            Tok::Colon => ":",
            Tok::Dot => ".",
            Tok::Assign => "=",
            Tok::Arrow => "->",
            Tok::Int(_) | Tok::Real(_) | Tok::Ident(_) | Tok::Eof => unreachable!(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: Tok,
    pub span: Span,
}

fn keyword(word: &str) -> Option<Tok> {
    Some(match word {
        "if" => Tok::If,
        "then" => Tok::Then,
        "else" => Tok::Else,
        "true" => Tok::True,
        "false" => Tok::False,
        "repindex" => Tok::RepIndexKw,
        "n" => Tok::NKw,
        "repshared" => Tok::RepSharedKw,
        "count" => Tok::CountKw,
        "contains" => Tok::ContainsKw,
        "atomic" => Tok::Atomic,
        "place" => Tok::Place,
        "activity" => Tok::Activity,
        "rate" => Tok::Rate,
        "delay" => Tok::Delay,
        "weight" => Tok::Weight,
        "priority" => Tok::Priority,
        "enabled" => Tok::Enabled,
        "case" => Tok::Case,
        "compose" => Tok::Compose,
        "rep" => Tok::Rep,
        "narep" => Tok::NaRep,
        "join" => Tok::Join,
        "share" => Tok::Share,
        "local" => Tok::Local,
        "placeshared" => Tok::PlaceShared,
        "upshared" => Tok::UpShared,
        "reward" => Tok::Reward,
        "impulse" => Tok::Impulse,
        "timeavg" => Tok::TimeAvg,
        "instant" => Tok::Instant,
        "accumulated" => Tok::Accumulated,
        "ring" => Tok::Ring,
        "star" => Tok::Star,
        "full" => Tok::Full,
        "grid" => Tok::Grid,
        _ => return None,
    })
}

/// Lexical error with position.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{span}: {message}")]
pub struct LexError {
    pub message: String,
    pub span: Span,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self { src: src.as_bytes(), pos: 0, line: 1, col: 1 }
    }

    fn span(&self) -> Span {
        Span { line: self.line, col: self.col }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn peek2(&self) -> Option<u8> {
        self.src.get(self.pos + 1).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_ascii_whitespace() => {
                    self.bump();
                }
                Some(b'/') if self.peek2() == Some(b'/') => {
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<Tok, LexError> {
        let span = self.span();
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
        }
        let mut is_real = false;
        if self.peek() == Some(b'.') && self.peek2().is_some_and(|c| c.is_ascii_digit()) {
            is_real = true;
            self.bump();
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.bump();
            }
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            let mut look = self.pos + 1;
            if matches!(self.src.get(look), Some(b'+') | Some(b'-')) {
                look += 1;
            }
            if self.src.get(look).is_some_and(|c| c.is_ascii_digit()) {
                is_real = true;
                self.bump();
                if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                    self.bump();
                }
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.bump();
                }
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        if is_real {
            text.parse::<f64>()
                .map(Tok::Real)
                .map_err(|_| LexError { message: format!("invalid number `{text}`"), span })
        } else {
            text.parse::<i64>().map(Tok::Int).map_err(|_| LexError {
                message: format!("integer literal `{text}` out of range"),
                span,
            })
        }
    }

    fn next_token(&mut self) -> Result<Token, LexError> {
        self.skip_trivia();
        let span = self.span();
        let Some(c) = self.peek() else {
            return Ok(Token { kind: Tok::Eof, span });
        };
        if c.is_ascii_digit() {
            let kind = self.number()?;
            return Ok(Token { kind, span });
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = self.pos;
            while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_') {
                self.bump();
            }
            let word = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
            let kind = keyword(word).unwrap_or_else(|| Tok::Ident(word.to_string()));
            return Ok(Token { kind, span });
        }
        self.bump();
        let two = |lexer: &mut Self, tok| {
            lexer.bump();
            tok
        };
        let kind = match c {
            b'+' => Tok::Plus,
            b'-' if self.peek() == Some(b'>') => two(self, Tok::Arrow),
            b'-' => Tok::Minus,
            b'*' => Tok::Mul,
            b'/' => Tok::Slash,
            b'%' => Tok::Percent,
            b'<' if self.peek() == Some(b'=') => two(self, Tok::Le),
            b'<' => Tok::Lt,
            b'>' if self.peek() == Some(b'=') => two(self, Tok::Ge),
            b'>' => Tok::Gt,
            b'=' if self.peek() == Some(b'=') => two(self, Tok::EqEq),
            b'=' => Tok::Assign,
            b'!' if self.peek() == Some(b'=') => two(self, Tok::Ne),
            b'!' => Tok::Bang,
            b'&' if self.peek() == Some(b'&') => two(self, Tok::AndAnd),
            b'|' if self.peek() == Some(b'|') => two(self, Tok::OrOr),
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'[' => Tok::LBracket,
            b']' => Tok::RBracket,
            b'{' => Tok::LBrace,
            b'}' => Tok::RBrace,
            b',' => Tok::Comma,
            b';' => Tok::Semi,
            b':' => Tok::Colon,
            b'.' => Tok::Dot,
            other => {
                return Err(LexError {
                    message: format!("unexpected character `{}`", other as char),
                    span,
                })
            }
        };
        Ok(Token { kind, span })
    }
}

/// Tokenize a full source string. The result always ends with an `Eof` token.
pub fn lex(src: &str) -> Result<Vec<Token>, LexError> {
    let mut lexer = Lexer::new(src);
    let mut out = Vec::new();
    loop {
        let tok = lexer.next_token()?;
        let done = tok.kind == Tok::Eof;
        out.push(tok);
        if done {
            return Ok(out);
        }
    }
}
