//! Static dependency extraction: which place replicas can an expression
//! touch, for a fixed replica index and replication count?
//!
//! Index expressions are partially evaluated with `repindex()` and `n` bound.
//! An index that constant-folds yields an exact place-replica reference; an
//! index that depends on the marking degrades to a whole-place dependency
//! with `dynamic = true`. Folding also prunes untaken `if` branches and
//! short-circuited boolean operands, so index-dependent templates get exact
//! per-replica read sets.

use super::eval::{arith, compare, Value};
use super::{BinOp, Expr, ExprKind, PlaceRef, UnOp};
use std::collections::BTreeSet;
use std::fmt;

/// Which replica (or array entry) of a place a reference resolves to.
/// The meaning of the number — replica vs array entry — is decided by the
/// place's declared kind during flattening.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AccessIndex {
    /// Unindexed read of a scalar place: the executing replica's own copy.
    SelfIndex,
    /// Index folded to a constant.
    At(i64),
    /// Marking-dependent index: conservatively the whole place.
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PlaceAccess {
    pub place: String,
    pub index: AccessIndex,
}

impl PlaceAccess {
    pub fn self_ref(place: &str) -> Self {
        Self { place: place.to_string(), index: AccessIndex::SelfIndex }
    }

    pub fn at(place: &str, index: i64) -> Self {
        Self { place: place.to_string(), index: AccessIndex::At(index) }
    }

    pub fn all(place: &str) -> Self {
        Self { place: place.to_string(), index: AccessIndex::All }
    }
}

impl fmt::Display for PlaceAccess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            AccessIndex::SelfIndex => write!(f, "{}@self", self.place),
            AccessIndex::At(i) => write!(f, "{}@{}", self.place, i),
            AccessIndex::All => write!(f, "{}@*", self.place),
        }
    }
}

/// Resolved dependencies of an expression (or update statement) for one
/// replica. When `dynamic` is false the set is exactly the place replicas
/// the expression can touch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DependencySet {
    pub reads: BTreeSet<PlaceAccess>,
    pub writes: BTreeSet<PlaceAccess>,
    pub dynamic: bool,
}

impl DependencySet {
    pub fn merge(&mut self, other: DependencySet) {
        self.reads.extend(other.reads);
        self.writes.extend(other.writes);
        self.dynamic |= other.dynamic;
    }
}

/// Constant-fold an expression with `repindex()` and `n` bound. Returns
/// `None` when the value depends on the marking (any place read), on the
/// sharing structure (`repshared`), or when folding hits an arithmetic
/// error — those cases surface at evaluation time instead.
pub fn try_fold(e: &Expr, replica_index: i64, n: i64) -> Option<Value> {
    match &e.kind {
        ExprKind::Int(v) => Some(Value::Int(*v)),
        ExprKind::Real(v) => Some(Value::Real(*v)),
        ExprKind::Bool(v) => Some(Value::Bool(*v)),
        ExprKind::RepIndex => Some(Value::Int(replica_index)),
        ExprKind::N => Some(Value::Int(n)),
        ExprKind::Place(_)
        | ExprKind::RepShared(_)
        | ExprKind::Count(_)
        | ExprKind::Contains(..) => None,
        ExprKind::Unary(op, inner) => {
            let v = try_fold(inner, replica_index, n)?;
            match op {
                UnOp::Neg => match v {
                    Value::Int(i) => Some(Value::Int(i.checked_neg()?)),
                    Value::Real(r) => Some(Value::Real(-r)),
                    _ => None,
                },
                UnOp::Not => match v {
                    Value::Bool(b) => Some(Value::Bool(!b)),
                    _ => None,
                },
            }
        }
        ExprKind::Binary(op, lhs, rhs) => {
            let l = try_fold(lhs, replica_index, n)?;
            match op {
                BinOp::And => match l {
                    Value::Bool(false) => Some(Value::Bool(false)),
                    Value::Bool(true) => try_fold(rhs, replica_index, n),
                    _ => None,
                },
                BinOp::Or => match l {
                    Value::Bool(true) => Some(Value::Bool(true)),
                    Value::Bool(false) => try_fold(rhs, replica_index, n),
                    _ => None,
                },
                BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Mod => {
                    let r = try_fold(rhs, replica_index, n)?;
                    arith(*op, l, r).ok()
                }
                _ => {
                    let r = try_fold(rhs, replica_index, n)?;
                    compare(*op, l, r).ok()
                }
            }
        }
        ExprKind::If(cond, then, otherwise) => match try_fold(cond, replica_index, n)? {
            Value::Bool(true) => try_fold(then, replica_index, n),
            Value::Bool(false) => try_fold(otherwise, replica_index, n),
            _ => None,
        },
    }
}

fn record_place(p: &PlaceRef, replica_index: i64, n: i64, out: &mut DependencySet) {
    match &p.index {
        None => {
            out.reads.insert(PlaceAccess::self_ref(&p.name));
        }
        Some(idx) => {
            match try_fold(idx, replica_index, n) {
                Some(Value::Int(k)) => {
                    out.reads.insert(PlaceAccess::at(&p.name, k));
                }
                _ => {
                    out.reads.insert(PlaceAccess::all(&p.name));
                    out.dynamic = true;
                }
            }
            walk(idx, replica_index, n, out);
        }
    }
}

fn walk(e: &Expr, replica_index: i64, n: i64, out: &mut DependencySet) {
    match &e.kind {
        ExprKind::Int(_)
        | ExprKind::Real(_)
        | ExprKind::Bool(_)
        | ExprKind::RepIndex
        | ExprKind::N
        | ExprKind::RepShared(_) => {}
        ExprKind::Place(p) => record_place(p, replica_index, n, out),
        ExprKind::Count(inner) => walk(inner, replica_index, n, out),
        ExprKind::Contains(list, value) => {
            walk(list, replica_index, n, out);
            walk(value, replica_index, n, out);
        }
        ExprKind::Unary(_, inner) => walk(inner, replica_index, n, out),
        ExprKind::Binary(op, lhs, rhs) => {
            // Short-circuit pruning mirrors evaluation: when the left
            // operand folds, the right operand is only reachable on one
            // path and may be skipped entirely.
            match (op, try_fold(lhs, replica_index, n)) {
                (BinOp::And, Some(Value::Bool(false))) | (BinOp::Or, Some(Value::Bool(true))) => {
                    walk(lhs, replica_index, n, out);
                }
                _ => {
                    walk(lhs, replica_index, n, out);
                    walk(rhs, replica_index, n, out);
                }
            }
        }
        ExprKind::If(cond, then, otherwise) => {
            walk(cond, replica_index, n, out);
            match try_fold(cond, replica_index, n) {
                Some(Value::Bool(true)) => walk(then, replica_index, n, out),
                Some(Value::Bool(false)) => walk(otherwise, replica_index, n, out),
                _ => {
                    walk(then, replica_index, n, out);
                    walk(otherwise, replica_index, n, out);
                }
            }
        }
    }
}

/// Read dependencies of an expression for the given replica.
pub fn extract_dependencies(e: &Expr, replica_index: i64, n: i64) -> DependencySet {
    let mut out = DependencySet::default();
    walk(e, replica_index, n, &mut out);
    out
}

/// Dependencies of an update statement `target = value`: reads come from the
/// target's index expression and the value, the write is the target itself.
pub fn extract_update_dependencies(
    target: &PlaceRef,
    value: &Expr,
    replica_index: i64,
    n: i64,
) -> DependencySet {
    let mut out = DependencySet::default();
    match &target.index {
        None => {
            out.writes.insert(PlaceAccess::self_ref(&target.name));
        }
        Some(idx) => {
            match try_fold(idx, replica_index, n) {
                Some(Value::Int(k)) => {
                    out.writes.insert(PlaceAccess::at(&target.name, k));
                }
                _ => {
                    out.writes.insert(PlaceAccess::all(&target.name));
                    out.dynamic = true;
                }
            }
            walk(idx, replica_index, n, &mut out);
        }
    }
    walk(value, replica_index, n, &mut out);
    out
}
