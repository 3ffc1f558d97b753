//! Type checking for expressions, separate from parsing.
//!
//! Marks are integers, rates and weights are non-negative reals (integer
//! expressions coerce), predicates are boolean. `repshared(P)` has a distinct
//! list type consumed by `count` and `contains`. Scope legality of
//! `repindex()` and `n` depends on the composition tree, so it is enforced at
//! flatten time, not here.

use super::lexer::Span;
use super::{BinOp, Expr, ExprKind, UnOp};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ty {
    Int,
    Real,
    Bool,
    /// Result of `repshared(P)`.
    IndexList,
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Ty::Int => "int",
            Ty::Real => "real",
            Ty::Bool => "bool",
            Ty::IndexList => "index list",
        };
        f.write_str(s)
    }
}

impl Ty {
    fn numeric(self) -> bool {
        matches!(self, Ty::Int | Ty::Real)
    }
}

/// What an expression is used for; fixes the expected result type and
/// whether place reads are allowed at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExprRole {
    /// Enabling predicate: boolean.
    Predicate,
    /// Activity rate or deterministic delay: numeric.
    Rate,
    /// Case or instantaneous weight: numeric.
    Weight,
    /// Right-hand side of an update: integer.
    UpdateValue,
    /// Index inside `P[...]`: integer.
    Index,
    /// Initial marking: integer, and place reads are not available yet.
    Initial,
}

#[derive(Debug, Clone, Error)]
#[error("{span}: {message}")]
pub struct TypeError {
    pub message: String,
    pub span: Span,
}

/// Shape information the checker needs about a place name.
pub trait PlaceKindLookup {
    /// `Some(true)` for array places, `Some(false)` for scalar places,
    /// `None` for undeclared names.
    fn is_array(&self, name: &str) -> Option<bool>;
}

impl<F: Fn(&str) -> Option<bool>> PlaceKindLookup for F {
    fn is_array(&self, name: &str) -> Option<bool> {
        self(name)
    }
}

fn err(span: Span, message: impl Into<String>) -> TypeError {
    TypeError { message: message.into(), span }
}

fn unify_numeric(a: Ty, b: Ty, span: Span, what: &str) -> Result<Ty, TypeError> {
    match (a, b) {
        (Ty::Int, Ty::Int) => Ok(Ty::Int),
        (x, y) if x.numeric() && y.numeric() => Ok(Ty::Real),
        _ => Err(err(span, format!("{what} requires numeric operands, got {a} and {b}"))),
    }
}

fn infer(e: &Expr, places: &dyn PlaceKindLookup, role: ExprRole) -> Result<Ty, TypeError> {
    match &e.kind {
        ExprKind::Int(_) => Ok(Ty::Int),
        ExprKind::Real(_) => Ok(Ty::Real),
        ExprKind::Bool(_) => Ok(Ty::Bool),
        ExprKind::RepIndex | ExprKind::N => Ok(Ty::Int),
        ExprKind::Place(p) => {
            if role == ExprRole::Initial {
                return Err(err(
                    e.span,
                    format!("place `{}` read in an initial-marking expression", p.name),
                ));
            }
            let is_array = places
                .is_array(&p.name)
                .ok_or_else(|| err(e.span, format!("unknown place `{}`", p.name)))?;
            match &p.index {
                Some(idx) => {
                    let ty = infer(idx, places, ExprRole::Index)?;
                    if ty != Ty::Int {
                        return Err(err(
                            idx.span,
                            format!("index into `{}` must be int, got {ty}", p.name),
                        ));
                    }
                }
                None if is_array => {
                    return Err(err(
                        e.span,
                        format!("array place `{}` read without an index", p.name),
                    ));
                }
                None => {}
            }
            Ok(Ty::Int)
        }
        ExprKind::RepShared(name) => {
            places.is_array(name).ok_or_else(|| err(e.span, format!("unknown place `{name}`")))?;
            Ok(Ty::IndexList)
        }
        ExprKind::Count(inner) => {
            let ty = infer(inner, places, role)?;
            if ty != Ty::IndexList {
                return Err(err(inner.span, format!("count expects an index list, got {ty}")));
            }
            Ok(Ty::Int)
        }
        ExprKind::Contains(list, value) => {
            let lt = infer(list, places, role)?;
            if lt != Ty::IndexList {
                return Err(err(list.span, format!("contains expects an index list, got {lt}")));
            }
            let vt = infer(value, places, role)?;
            if vt != Ty::Int {
                return Err(err(value.span, format!("contains expects an int, got {vt}")));
            }
            Ok(Ty::Bool)
        }
        ExprKind::Unary(op, inner) => {
            let ty = infer(inner, places, role)?;
            match op {
                UnOp::Neg if ty.numeric() => Ok(ty),
                UnOp::Neg => {
                    Err(err(e.span, format!("negation requires a numeric operand, got {ty}")))
                }
                UnOp::Not if ty == Ty::Bool => Ok(Ty::Bool),
                UnOp::Not => Err(err(e.span, format!("`!` requires a boolean operand, got {ty}"))),
            }
        }
        ExprKind::Binary(op, lhs, rhs) => {
            let lt = infer(lhs, places, role)?;
            let rt = infer(rhs, places, role)?;
            match op {
                BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div => {
                    unify_numeric(lt, rt, e.span, op.symbol())
                }
                BinOp::Mod => {
                    if lt == Ty::Int && rt == Ty::Int {
                        Ok(Ty::Int)
                    } else {
                        Err(err(e.span, format!("`%` requires int operands, got {lt} and {rt}")))
                    }
                }
                BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                    unify_numeric(lt, rt, e.span, op.symbol())?;
                    Ok(Ty::Bool)
                }
                BinOp::Eq | BinOp::Ne => {
                    if (lt.numeric() && rt.numeric()) || (lt == Ty::Bool && rt == Ty::Bool) {
                        Ok(Ty::Bool)
                    } else {
                        Err(err(e.span, format!("`{}` cannot compare {lt} with {rt}", op.symbol())))
                    }
                }
                BinOp::And | BinOp::Or => {
                    if lt == Ty::Bool && rt == Ty::Bool {
                        Ok(Ty::Bool)
                    } else {
                        Err(err(
                            e.span,
                            format!(
                                "`{}` requires boolean operands, got {lt} and {rt}",
                                op.symbol()
                            ),
                        ))
                    }
                }
            }
        }
        ExprKind::If(cond, then, otherwise) => {
            let ct = infer(cond, places, role)?;
            if ct != Ty::Bool {
                return Err(err(cond.span, format!("if-condition must be bool, got {ct}")));
            }
            let tt = infer(then, places, role)?;
            let et = infer(otherwise, places, role)?;
            match (tt, et) {
                (Ty::Int, Ty::Int) => Ok(Ty::Int),
                (Ty::Bool, Ty::Bool) => Ok(Ty::Bool),
                (a, b) if a.numeric() && b.numeric() => Ok(Ty::Real),
                (a, b) => {
                    Err(err(e.span, format!("if-branches have incompatible types {a} and {b}")))
                }
            }
        }
    }
}

/// Check an expression against the type its role demands.
pub fn typecheck(e: &Expr, places: &dyn PlaceKindLookup, role: ExprRole) -> Result<Ty, TypeError> {
    let ty = infer(e, places, role)?;
    let ok = match role {
        ExprRole::Predicate => ty == Ty::Bool,
        ExprRole::Rate | ExprRole::Weight => ty.numeric(),
        ExprRole::UpdateValue | ExprRole::Index | ExprRole::Initial => ty == Ty::Int,
    };
    if ok {
        Ok(ty)
    } else {
        let wanted = match role {
            ExprRole::Predicate => "bool",
            ExprRole::Rate | ExprRole::Weight => "numeric",
            ExprRole::UpdateValue | ExprRole::Index | ExprRole::Initial => "int",
        };
        Err(err(e.span, format!("expression must be {wanted}, got {ty}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn scalar_places(name: &str) -> Option<bool> {
        match name {
            "P" | "Q" => Some(false),
            "B" => Some(true),
            _ => None,
        }
    }

    #[test]
    fn predicate_must_be_bool() {
        let e = parse("P + 1").unwrap();
        assert!(typecheck(&e, &scalar_places, ExprRole::Predicate).is_err());
        let e = parse("P > 1 && true").unwrap();
        assert_eq!(typecheck(&e, &scalar_places, ExprRole::Predicate).unwrap(), Ty::Bool);
    }

    #[test]
    fn bare_array_read_rejected() {
        let e = parse("B + 1").unwrap();
        let msg = typecheck(&e, &scalar_places, ExprRole::Rate).unwrap_err().message;
        assert!(msg.contains("without an index"), "{msg}");
    }

    #[test]
    fn initial_expressions_cannot_read_places() {
        let e = parse("P + 1").unwrap();
        assert!(typecheck(&e, &scalar_places, ExprRole::Initial).is_err());
        let e = parse("repindex() + 1").unwrap();
        assert!(typecheck(&e, &scalar_places, ExprRole::Initial).is_ok());
    }

    #[test]
    fn repshared_list_operations() {
        let e = parse("count(repshared(P))").unwrap();
        assert_eq!(typecheck(&e, &scalar_places, ExprRole::Index).unwrap(), Ty::Int);
        let e = parse("contains(repshared(P), repindex())").unwrap();
        assert_eq!(typecheck(&e, &scalar_places, ExprRole::Predicate).unwrap(), Ty::Bool);
        // A bare list is not a usable predicate or number.
        let e = parse("repshared(P)").unwrap();
        assert!(typecheck(&e, &scalar_places, ExprRole::Predicate).is_err());
        assert!(typecheck(&e, &scalar_places, ExprRole::Rate).is_err());
    }

    #[test]
    fn mixed_arithmetic_promotes_to_real() {
        let e = parse("1 + 2.5").unwrap();
        assert_eq!(typecheck(&e, &scalar_places, ExprRole::Rate).unwrap(), Ty::Real);
        assert!(typecheck(&e, &scalar_places, ExprRole::UpdateValue).is_err());
    }

    #[test]
    fn modulo_is_integer_only() {
        let e = parse("1.5 % 2").unwrap();
        assert!(typecheck(&e, &scalar_places, ExprRole::Rate).is_err());
    }
}
