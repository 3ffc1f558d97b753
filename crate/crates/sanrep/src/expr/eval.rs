//! Expression evaluation against a marking.
//!
//! Evaluation is a pure function of the expression and the context; the
//! context supplies the replica index, the replication count, and a
//! [`PlaceEnv`] that resolves place reads. Integer division and modulo are
//! Euclidean, so `a % b` lies in `[0, b)` for `b > 0`.

use super::{BinOp, Expr, ExprKind, UnOp};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Real(f64),
    Bool(bool),
    List(Vec<i64>),
}

impl Value {
    pub fn as_int(&self) -> Result<i64, EvalError> {
        match self {
            Value::Int(v) => Ok(*v),
            other => Err(EvalError::TypeMismatch { expected: "int", got: other.type_name() }),
        }
    }

    pub fn as_bool(&self) -> Result<bool, EvalError> {
        match self {
            Value::Bool(v) => Ok(*v),
            other => Err(EvalError::TypeMismatch { expected: "bool", got: other.type_name() }),
        }
    }

    /// Numeric value as a real; integers coerce. Used for rates and weights.
    pub fn as_real(&self) -> Result<f64, EvalError> {
        match self {
            Value::Int(v) => Ok(*v as f64),
            Value::Real(v) => Ok(*v),
            other => Err(EvalError::TypeMismatch { expected: "numeric", got: other.type_name() }),
        }
    }

    fn type_name(&self) -> &'static str {
        match self {
            Value::Int(_) => "int",
            Value::Real(_) => "real",
            Value::Bool(_) => "bool",
            Value::List(_) => "index list",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("integer overflow")]
    Overflow,
    #[error("index {index} out of range for `{place}` (0..{len})")]
    IndexOutOfRange { place: String, index: i64, len: u32 },
    #[error("access to `{place}` replica {index} is not granted to replica {reader}")]
    AccessViolation { place: String, index: i64, reader: i64 },
    #[error("unknown place `{place}`")]
    UnknownPlace { place: String },
    #[error("`{place}` is not rep-shared")]
    NotRepShared { place: String },
    #[error("index into scalar place `{place}` outside a replicated context")]
    IndexOnScalar { place: String },
    #[error("array place `{place}` read without an index")]
    MissingIndex { place: String },
    #[error("type mismatch: expected {expected}, got {got}")]
    TypeMismatch { expected: &'static str, got: &'static str },
}

/// Resolves place reads and `repshared` queries for one evaluation scope
/// (one activity instance during simulation, or a plain map in tests).
pub trait PlaceEnv {
    /// Read a place. `index` is the evaluated replica or entry index;
    /// `None` is the unindexed read of a scalar place.
    fn read(&self, place: &str, index: Option<i64>) -> Result<i64, EvalError>;

    /// Ascending replica indices whose activities may touch this replica's
    /// copy of `place`.
    fn repshared(&self, place: &str) -> Result<Vec<i64>, EvalError>;
}

/// Evaluation context: replica identity plus the marking view.
pub struct EvalCtx<'a> {
    pub replica_index: i64,
    pub n: i64,
    pub env: &'a dyn PlaceEnv,
}

/// Simple map-backed environment for tests and examples. Scalar places hold
/// one value per replica; reading `P` without an index resolves to the
/// context's own replica entry (entry 0 when only one value is present).
pub struct MapEnv {
    pub places: BTreeMap<String, Vec<i64>>,
    pub own_index: i64,
    pub repshared: BTreeMap<String, Vec<i64>>,
}

impl MapEnv {
    pub fn new(own_index: i64) -> Self {
        Self { places: BTreeMap::new(), own_index, repshared: BTreeMap::new() }
    }

    pub fn with(mut self, name: &str, values: &[i64]) -> Self {
        self.places.insert(name.to_string(), values.to_vec());
        self
    }
}

impl PlaceEnv for MapEnv {
    fn read(&self, place: &str, index: Option<i64>) -> Result<i64, EvalError> {
        let values = self
            .places
            .get(place)
            .ok_or_else(|| EvalError::UnknownPlace { place: place.to_string() })?;
        let idx = match index {
            Some(i) => i,
            None if values.len() == 1 => 0,
            None => self.own_index,
        };
        if idx < 0 || idx as usize >= values.len() {
            return Err(EvalError::IndexOutOfRange {
                place: place.to_string(),
                index: idx,
                len: values.len() as u32,
            });
        }
        Ok(values[idx as usize])
    }

    fn repshared(&self, place: &str) -> Result<Vec<i64>, EvalError> {
        self.repshared
            .get(place)
            .cloned()
            .ok_or_else(|| EvalError::NotRepShared { place: place.to_string() })
    }
}

fn euclid_div(a: i64, b: i64) -> Result<i64, EvalError> {
    if b == 0 {
        return Err(EvalError::DivisionByZero);
    }
    a.checked_div_euclid(b).ok_or(EvalError::Overflow)
}

fn euclid_mod(a: i64, b: i64) -> Result<i64, EvalError> {
    if b == 0 {
        return Err(EvalError::DivisionByZero);
    }
    a.checked_rem_euclid(b).ok_or(EvalError::Overflow)
}

pub(super) fn arith(op: BinOp, lhs: Value, rhs: Value) -> Result<Value, EvalError> {
    use Value::*;
    match (lhs, rhs) {
        (Int(a), Int(b)) => {
            let v = match op {
                BinOp::Add => a.checked_add(b).ok_or(EvalError::Overflow)?,
                BinOp::Sub => a.checked_sub(b).ok_or(EvalError::Overflow)?,
                BinOp::Mul => a.checked_mul(b).ok_or(EvalError::Overflow)?,
                BinOp::Div => euclid_div(a, b)?,
                BinOp::Mod => euclid_mod(a, b)?,
                _ => unreachable!(),
            };
            Ok(Int(v))
        }
        (a, b) => {
            let a = a.as_real()?;
            let b = b.as_real()?;
            let v = match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => {
                    if b == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    a / b
                }
                BinOp::Mod => return Err(EvalError::TypeMismatch { expected: "int", got: "real" }),
                _ => unreachable!(),
            };
            Ok(Real(v))
        }
    }
}

pub(super) fn compare(op: BinOp, lhs: Value, rhs: Value) -> Result<Value, EvalError> {
    use Value::*;
    if let (Bool(a), Bool(b)) = (&lhs, &rhs) {
        return match op {
            BinOp::Eq => Ok(Bool(a == b)),
            BinOp::Ne => Ok(Bool(a != b)),
            _ => Err(EvalError::TypeMismatch { expected: "numeric", got: "bool" }),
        };
    }
    // Integer pairs compare exactly; anything else through reals.
    let result = if let (Int(a), Int(b)) = (&lhs, &rhs) {
        match op {
            BinOp::Lt => a < b,
            BinOp::Le => a <= b,
            BinOp::Gt => a > b,
            BinOp::Ge => a >= b,
            BinOp::Eq => a == b,
            BinOp::Ne => a != b,
            _ => unreachable!(),
        }
    } else {
        let a = lhs.as_real()?;
        let b = rhs.as_real()?;
        match op {
            BinOp::Lt => a < b,
            BinOp::Le => a <= b,
            BinOp::Gt => a > b,
            BinOp::Ge => a >= b,
            BinOp::Eq => a == b,
            BinOp::Ne => a != b,
            _ => unreachable!(),
        }
    };
    Ok(Bool(result))
}

pub fn evaluate(e: &Expr, ctx: &EvalCtx) -> Result<Value, EvalError> {
    match &e.kind {
        ExprKind::Int(v) => Ok(Value::Int(*v)),
        ExprKind::Real(v) => Ok(Value::Real(*v)),
        ExprKind::Bool(v) => Ok(Value::Bool(*v)),
        ExprKind::RepIndex => Ok(Value::Int(ctx.replica_index)),
        ExprKind::N => Ok(Value::Int(ctx.n)),
        ExprKind::Place(p) => {
            let index = match &p.index {
                Some(idx) => Some(evaluate(idx, ctx)?.as_int()?),
                None => None,
            };
            ctx.env.read(&p.name, index).map(Value::Int)
        }
        ExprKind::RepShared(name) => ctx.env.repshared(name).map(Value::List),
        ExprKind::Count(inner) => match evaluate(inner, ctx)? {
            Value::List(list) => Ok(Value::Int(list.len() as i64)),
            other => {
                Err(EvalError::TypeMismatch { expected: "index list", got: other.type_name() })
            }
        },
        ExprKind::Contains(list, value) => {
            let list = match evaluate(list, ctx)? {
                Value::List(l) => l,
                other => {
                    return Err(EvalError::TypeMismatch {
                        expected: "index list",
                        got: other.type_name(),
                    })
                }
            };
            let v = evaluate(value, ctx)?.as_int()?;
            Ok(Value::Bool(list.contains(&v)))
        }
        ExprKind::Unary(op, inner) => {
            let v = evaluate(inner, ctx)?;
            match op {
                UnOp::Neg => match v {
                    Value::Int(i) => Ok(Value::Int(i.checked_neg().ok_or(EvalError::Overflow)?)),
                    Value::Real(r) => Ok(Value::Real(-r)),
                    other => {
                        Err(EvalError::TypeMismatch { expected: "numeric", got: other.type_name() })
                    }
                },
                UnOp::Not => Ok(Value::Bool(!v.as_bool()?)),
            }
        }
        ExprKind::Binary(op, lhs, rhs) => match op {
            BinOp::And => {
                // Short-circuit; the dependency extractor still records both
                // operands' reads.
                if !evaluate(lhs, ctx)?.as_bool()? {
                    return Ok(Value::Bool(false));
                }
                Ok(Value::Bool(evaluate(rhs, ctx)?.as_bool()?))
            }
            BinOp::Or => {
                if evaluate(lhs, ctx)?.as_bool()? {
                    return Ok(Value::Bool(true));
                }
                Ok(Value::Bool(evaluate(rhs, ctx)?.as_bool()?))
            }
            BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Mod => {
                arith(*op, evaluate(lhs, ctx)?, evaluate(rhs, ctx)?)
            }
            _ => compare(*op, evaluate(lhs, ctx)?, evaluate(rhs, ctx)?),
        },
        ExprKind::If(cond, then, otherwise) => {
            if evaluate(cond, ctx)?.as_bool()? {
                evaluate(then, ctx)
            } else {
                evaluate(otherwise, ctx)
            }
        }
    }
}
