//! Recursive-descent expression parser with precedence climbing.

use super::lexer::{lex, LexError, Span, Tok, Token};
use super::{BinOp, Expr, ExprKind, PlaceRef, UnOp};
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum ParseError {
    #[error("{span}: {message}")]
    Syntax { message: String, span: Span },
    #[error("{0}")]
    Lex(#[from] LexError),
}

impl ParseError {
    pub fn span(&self) -> Span {
        match self {
            ParseError::Syntax { span, .. } => *span,
            ParseError::Lex(e) => e.span,
        }
    }
}

pub(crate) struct ExprParser<'a> {
    tokens: &'a [Token],
    pub pos: usize,
    /// Accept dotted, constant-indexed paths like `cells[2].P` (reward scope).
    pub dotted: bool,
}

impl<'a> ExprParser<'a> {
    pub fn new(tokens: &'a [Token], pos: usize, dotted: bool) -> Self {
        Self { tokens, pos, dotted }
    }

    fn peek(&self) -> &Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)]
    }

    fn bump(&mut self) -> Token {
        let t = self.peek().clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, kind: &Tok) -> bool {
        if &self.peek().kind == kind {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: Tok) -> Result<Token, ParseError> {
        if self.peek().kind == kind {
            Ok(self.bump())
        } else {
            Err(self.unexpected(&format!("expected {}", kind.describe())))
        }
    }

    pub fn unexpected(&self, expected: &str) -> ParseError {
        ParseError::Syntax {
            message: format!("{expected}, found {}", self.peek().kind.describe()),
            span: self.peek().span,
        }
    }

    pub fn expression(&mut self) -> Result<Expr, ParseError> {
        if self.peek().kind == Tok::If {
            let span = self.bump().span;
            let cond = self.expression()?;
            self.expect(Tok::Then)?;
            let then = self.expression()?;
            self.expect(Tok::Else)?;
            let otherwise = self.expression()?;
            return Ok(Expr::new(
                ExprKind::If(Box::new(cond), Box::new(then), Box::new(otherwise)),
                span,
            ));
        }
        self.binary(1)
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().kind {
                Tok::OrOr => BinOp::Or,
                Tok::AndAnd => BinOp::And,
                Tok::Lt => BinOp::Lt,
                Tok::Le => BinOp::Le,
                Tok::Gt => BinOp::Gt,
                Tok::Ge => BinOp::Ge,
                Tok::EqEq => BinOp::Eq,
                Tok::Ne => BinOp::Ne,
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                Tok::Mul => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                Tok::Percent => BinOp::Mod,
                _ => break,
            };
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            let span = self.bump().span;
            let rhs = self.binary(prec + 1)?;
            lhs = Expr::new(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().kind {
            Tok::Minus => {
                let span = self.bump().span;
                let inner = self.unary()?;
                Ok(Expr::new(ExprKind::Unary(UnOp::Neg, Box::new(inner)), span))
            }
            Tok::Bang => {
                let span = self.bump().span;
                let inner = self.unary()?;
                Ok(Expr::new(ExprKind::Unary(UnOp::Not, Box::new(inner)), span))
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let tok = self.peek().clone();
        match tok.kind {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::new(ExprKind::Int(v), tok.span))
            }
            Tok::Real(v) => {
                self.bump();
                Ok(Expr::new(ExprKind::Real(v), tok.span))
            }
            Tok::True => {
                self.bump();
                Ok(Expr::new(ExprKind::Bool(true), tok.span))
            }
            Tok::False => {
                self.bump();
                Ok(Expr::new(ExprKind::Bool(false), tok.span))
            }
            Tok::RepIndexKw => {
                self.bump();
                self.expect(Tok::LParen)?;
                self.expect(Tok::RParen)?;
                Ok(Expr::new(ExprKind::RepIndex, tok.span))
            }
            Tok::NKw => {
                self.bump();
                Ok(Expr::new(ExprKind::N, tok.span))
            }
            Tok::RepSharedKw => {
                self.bump();
                self.expect(Tok::LParen)?;
                let name = self.ident()?;
                self.expect(Tok::RParen)?;
                Ok(Expr::new(ExprKind::RepShared(name), tok.span))
            }
            Tok::CountKw => {
                self.bump();
                self.expect(Tok::LParen)?;
                let inner = self.expression()?;
                self.expect(Tok::RParen)?;
                Ok(Expr::new(ExprKind::Count(Box::new(inner)), tok.span))
            }
            Tok::ContainsKw => {
                self.bump();
                self.expect(Tok::LParen)?;
                let list = self.expression()?;
                self.expect(Tok::Comma)?;
                let value = self.expression()?;
                self.expect(Tok::RParen)?;
                Ok(Expr::new(ExprKind::Contains(Box::new(list), Box::new(value)), tok.span))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expression()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::Ident(_) => self.place_read(),
            _ => Err(self.unexpected("expected expression")),
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().kind.clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected("expected identifier")),
        }
    }

    fn place_read(&mut self) -> Result<Expr, ParseError> {
        let span = self.peek().span;
        let mut name = self.ident()?;
        if self.dotted {
            // Dotted labels embed constant indices: cells[2].P, mon.Q[1].
            loop {
                if self.peek().kind == Tok::LBracket {
                    self.bump();
                    let idx = match self.peek().kind {
                        Tok::Int(v) => {
                            self.bump();
                            v
                        }
                        _ => {
                            return Err(
                                self.unexpected("expected integer index in state-variable label")
                            )
                        }
                    };
                    self.expect(Tok::RBracket)?;
                    name.push_str(&format!("[{idx}]"));
                } else if self.peek().kind == Tok::Dot {
                    self.bump();
                    name.push('.');
                    name.push_str(&self.ident()?);
                } else {
                    break;
                }
            }
            Ok(Expr::new(ExprKind::Place(PlaceRef { name, index: None }), span))
        } else {
            let index = if self.eat(&Tok::LBracket) {
                let idx = self.expression()?;
                self.expect(Tok::RBracket)?;
                Some(Box::new(idx))
            } else {
                None
            };
            Ok(Expr::new(ExprKind::Place(PlaceRef { name, index }), span))
        }
    }
}

/// Parse a standalone expression. Bare place names only; the dotted form is
/// reserved for reward definitions inside model files.
pub fn parse(source: &str) -> Result<Expr, ParseError> {
    let tokens = lex(source)?;
    let mut parser = ExprParser::new(&tokens, 0, false);
    let expr = parser.expression()?;
    if parser.peek().kind != Tok::Eof {
        return Err(parser.unexpected("expected end of expression"));
    }
    Ok(expr)
}

/// Parse an expression from a token slice starting at `*pos`; leaves `*pos`
/// on the first token after the expression. Used by the model-file parser.
pub fn parse_tokens(tokens: &[Token], pos: &mut usize, dotted: bool) -> Result<Expr, ParseError> {
    let mut parser = ExprParser::new(tokens, *pos, dotted);
    let expr = parser.expression()?;
    *pos = parser.pos;
    Ok(expr)
}
