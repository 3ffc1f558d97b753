//! Expression language used throughout model definitions: enabling
//! predicates, rates, case weights, state updates, and initial markings.
//!
//! Expressions are small integer/boolean/real trees over place reads. Two
//! reserved symbols tie them to replication: `repindex()` is the index of the
//! enclosing replica and `n` is the replication count. `repshared(P)` queries
//! the list of replica indices granted access to the current replica's `P`.
//!
//! The module provides parsing ([`parse`]), pretty printing (`Display`),
//! a type checker ([`typecheck`]), an evaluator ([`evaluate`]), and a static
//! dependency extractor ([`extract_dependencies`]) that determines which
//! place replicas an expression can read. The extractor is what composition
//! flattening and connectivity construction are built on.

mod deps;
mod eval;
mod lexer;
mod parser;
mod typecheck;

pub use deps::{
    extract_dependencies, extract_update_dependencies, try_fold, AccessIndex, DependencySet,
    PlaceAccess,
};
pub use eval::{evaluate, EvalCtx, EvalError, MapEnv, PlaceEnv, Value};
pub use lexer::{lex, Span, Tok, Token};
pub use parser::{parse, parse_tokens, ParseError};
pub use typecheck::{typecheck, ExprRole, PlaceKindLookup, Ty, TypeError};

use std::fmt;

/// Binary operators. `Div` and `Mod` are Euclidean on integers, so
/// `(repindex()-1) % n` wraps to `n-1` at replica 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    /// Binding strength used by the parser and the pretty printer.
    fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne => 3,
            BinOp::Add | BinOp::Sub => 4,
            BinOp::Mul | BinOp::Div | BinOp::Mod => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Not,
}

/// Reference to a place. `name` is a bare place name inside atomic models;
/// reward expressions use dotted state-variable labels such as `cells[2].P`.
/// `index` selects a replica (scalar places under replication) or an array
/// entry (array places).
#[derive(Debug, Clone)]
pub struct PlaceRef {
    pub name: String,
    pub index: Option<Box<Expr>>,
}

#[derive(Debug, Clone)]
pub enum ExprKind {
    Int(i64),
    Real(f64),
    Bool(bool),
    /// `repindex()`
    RepIndex,
    /// `n`, the replication count of the enclosing Rep/NARep.
    N,
    Place(PlaceRef),
    /// `repshared(P)`: ascending list of replica indices whose activities may
    /// touch the current replica's `P`.
    RepShared(String),
    /// `count(list)`
    Count(Box<Expr>),
    /// `contains(list, i)`
    Contains(Box<Expr>, Box<Expr>),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

// Constructor names mirror the operators they build; `add`/`sub` are not
// std::ops implementations on purpose (they consume operands by value).
#[allow(clippy::should_implement_trait)]
impl Expr {
    pub fn new(kind: ExprKind, span: Span) -> Self {
        Self { kind, span }
    }

    /// Spanless constructor for programmatically built expressions.
    pub fn synth(kind: ExprKind) -> Self {
        Self { kind, span: Span::default() }
    }

    pub fn int(v: i64) -> Self {
        Self::synth(ExprKind::Int(v))
    }

    pub fn real(v: f64) -> Self {
        Self::synth(ExprKind::Real(v))
    }

    pub fn bool(v: bool) -> Self {
        Self::synth(ExprKind::Bool(v))
    }

    pub fn rep_index() -> Self {
        Self::synth(ExprKind::RepIndex)
    }

    pub fn n() -> Self {
        Self::synth(ExprKind::N)
    }

    pub fn place(name: &str) -> Self {
        Self::synth(ExprKind::Place(PlaceRef { name: name.to_string(), index: None }))
    }

    pub fn place_at(name: &str, index: Expr) -> Self {
        Self::synth(ExprKind::Place(PlaceRef {
            name: name.to_string(),
            index: Some(Box::new(index)),
        }))
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Self {
        Self::synth(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)))
    }

    pub fn add(lhs: Expr, rhs: Expr) -> Self {
        Self::binary(BinOp::Add, lhs, rhs)
    }

    pub fn sub(lhs: Expr, rhs: Expr) -> Self {
        Self::binary(BinOp::Sub, lhs, rhs)
    }

    pub fn modulo(lhs: Expr, rhs: Expr) -> Self {
        Self::binary(BinOp::Mod, lhs, rhs)
    }

    pub fn gt(lhs: Expr, rhs: Expr) -> Self {
        Self::binary(BinOp::Gt, lhs, rhs)
    }

    pub fn and(lhs: Expr, rhs: Expr) -> Self {
        Self::binary(BinOp::And, lhs, rhs)
    }

    pub fn if_then_else(cond: Expr, then: Expr, otherwise: Expr) -> Self {
        Self::synth(ExprKind::If(Box::new(cond), Box::new(then), Box::new(otherwise)))
    }
}

// Structural equality ignores spans so parse(pretty_print(e)) == e holds for
// synthesized trees as well.
impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl Eq for Expr {}

impl PartialEq for PlaceRef {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.index == other.index
    }
}

impl Eq for PlaceRef {}

impl PartialEq for ExprKind {
    fn eq(&self, other: &Self) -> bool {
        use ExprKind::*;
        match (self, other) {
            (Int(a), Int(b)) => a == b,
            (Real(a), Real(b)) => a.to_bits() == b.to_bits(),
            (Bool(a), Bool(b)) => a == b,
            (RepIndex, RepIndex) | (N, N) => true,
            (Place(a), Place(b)) => a == b,
            (RepShared(a), RepShared(b)) => a == b,
            (Count(a), Count(b)) => a == b,
            (Contains(a1, a2), Contains(b1, b2)) => a1 == b1 && a2 == b2,
            (Unary(o1, a), Unary(o2, b)) => o1 == o2 && a == b,
            (Binary(o1, a1, a2), Binary(o2, b1, b2)) => o1 == o2 && a1 == b1 && a2 == b2,
            (If(a1, a2, a3), If(b1, b2, b3)) => a1 == b1 && a2 == b2 && a3 == b3,
            _ => false,
        }
    }
}

impl Eq for ExprKind {}

fn fmt_prec(e: &Expr, parent: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match &e.kind {
        ExprKind::Int(v) => write!(f, "{v}"),
        ExprKind::Real(v) => {
            if v.fract() == 0.0 && v.is_finite() && v.abs() < 1e15 {
                write!(f, "{v:.1}")
            } else {
                write!(f, "{v}")
            }
        }
        ExprKind::Bool(v) => write!(f, "{v}"),
        ExprKind::RepIndex => write!(f, "repindex()"),
        ExprKind::N => write!(f, "n"),
        ExprKind::Place(p) => {
            write!(f, "{}", p.name)?;
            if let Some(idx) = &p.index {
                write!(f, "[")?;
                fmt_prec(idx, 0, f)?;
                write!(f, "]")?;
            }
            Ok(())
        }
        ExprKind::RepShared(p) => write!(f, "repshared({p})"),
        ExprKind::Count(e) => {
            write!(f, "count(")?;
            fmt_prec(e, 0, f)?;
            write!(f, ")")
        }
        ExprKind::Contains(l, v) => {
            write!(f, "contains(")?;
            fmt_prec(l, 0, f)?;
            write!(f, ", ")?;
            fmt_prec(v, 0, f)?;
            write!(f, ")")
        }
        ExprKind::Unary(op, inner) => {
            let sym = match op {
                UnOp::Neg => "-",
                UnOp::Not => "!",
            };
            if parent > 6 {
                write!(f, "({sym}")?;
                fmt_prec(inner, 6, f)?;
                write!(f, ")")
            } else {
                write!(f, "{sym}")?;
                fmt_prec(inner, 6, f)
            }
        }
        ExprKind::Binary(op, lhs, rhs) => {
            let prec = op.precedence();
            let need_parens = prec < parent;
            if need_parens {
                write!(f, "(")?;
            }
            fmt_prec(lhs, prec, f)?;
            write!(f, " {} ", op.symbol())?;
            // Right operand printed at prec+1: all binary operators
            // associate to the left.
            fmt_prec(rhs, prec + 1, f)?;
            if need_parens {
                write!(f, ")")?;
            }
            Ok(())
        }
        ExprKind::If(c, t, e2) => {
            let need_parens = parent > 0;
            if need_parens {
                write!(f, "(")?;
            }
            write!(f, "if ")?;
            fmt_prec(c, 0, f)?;
            write!(f, " then ")?;
            fmt_prec(t, 0, f)?;
            write!(f, " else ")?;
            fmt_prec(e2, 0, f)?;
            if need_parens {
                write!(f, ")")?;
            }
            Ok(())
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_prec(self, 0, f)
    }
}
