//! Scalar operators under SQL three-valued logic.

use std::cmp::Ordering;

use super::EngineError;
use crate::frontend::{BinaryOp, ScalarFunc};
use crate::storage::Value;

fn mismatch(op: &str, a: &Value, b: &Value) -> EngineError {
    EngineError::TypeMismatch(format!(
        "cannot apply {op} to {} and {}",
        a.type_name(),
        b.type_name()
    ))
}

fn truth(v: &Value, op: &str) -> Result<Option<bool>, EngineError> {
    match v {
        Value::Null => Ok(None),
        Value::Bool(b) => Ok(Some(*b)),
        other => Err(EngineError::TypeMismatch(format!(
            "{op} expects a boolean, found {}",
            other.type_name()
        ))),
    }
}

fn from_truth(t: Option<bool>) -> Value {
    t.map_or(Value::Null, Value::Bool)
}

pub fn not(v: &Value) -> Result<Value, EngineError> {
    Ok(from_truth(truth(v, "NOT")?.map(|b| !b)))
}

pub fn neg(v: &Value) -> Result<Value, EngineError> {
    match v {
        Value::Null => Ok(Value::Null),
        Value::Int(i) => i.checked_neg().map(Value::Int).ok_or(EngineError::Overflow),
        Value::Float(f) => Ok(Value::Float(-f)),
        other => Err(EngineError::TypeMismatch(format!(
            "cannot negate {}",
            other.type_name()
        ))),
    }
}

pub fn binary(op: BinaryOp, a: &Value, b: &Value) -> Result<Value, EngineError> {
    use BinaryOp::*;
    match op {
        And => {
            let (x, y) = (truth(a, "AND")?, truth(b, "AND")?);
            Ok(match (x, y) {
                (Some(false), _) | (_, Some(false)) => Value::Bool(false),
                (Some(true), Some(true)) => Value::Bool(true),
                _ => Value::Null,
            })
        }
        Or => {
            let (x, y) = (truth(a, "OR")?, truth(b, "OR")?);
            Ok(match (x, y) {
                (Some(true), _) | (_, Some(true)) => Value::Bool(true),
                (Some(false), Some(false)) => Value::Bool(false),
                _ => Value::Null,
            })
        }
        Eq | NotEq | Lt | LtEq | Gt | GtEq => {
            let ord = a
                .sql_cmp(b)
                .map_err(|_| mismatch(op.symbol(), a, b))?;
            Ok(from_truth(ord.map(|o| match op {
                Eq => o == Ordering::Equal,
                NotEq => o != Ordering::Equal,
                Lt => o == Ordering::Less,
                LtEq => o != Ordering::Greater,
                Gt => o == Ordering::Greater,
                _ => o != Ordering::Less,
            })))
        }
        Concat => match (a, b) {
            (Value::Null, _) | (_, Value::Null) => Ok(Value::Null),
            (Value::Text(x), Value::Text(y)) => Ok(Value::Text(format!("{x}{y}"))),
            _ => Err(mismatch("||", a, b)),
        },
        Add | Sub | Mul | Div | Mod => arith(op, a, b),
    }
}

fn arith(op: BinaryOp, a: &Value, b: &Value) -> Result<Value, EngineError> {
    use BinaryOp::*;
    match (a, b) {
        (Value::Null, Value::Null | Value::Int(_) | Value::Float(_))
        | (Value::Int(_) | Value::Float(_), Value::Null) => Ok(Value::Null),
        (Value::Int(x), Value::Int(y)) => {
            let (x, y) = (*x, *y);
            let r = match op {
                Add => x.checked_add(y),
                Sub => x.checked_sub(y),
                Mul => x.checked_mul(y),
                Div | Mod if y == 0 => return Err(EngineError::DivisionByZero),
                Div => x.checked_div(y),
                _ => x.checked_rem(y),
            };
            r.map(Value::Int).ok_or(EngineError::Overflow)
        }
        (Value::Int(_) | Value::Float(_), Value::Int(_) | Value::Float(_)) => {
            let (x, y) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            Ok(Value::Float(match op {
                Add => x + y,
                Sub => x - y,
                Mul => x * y,
                Div | Mod if y == 0.0 => return Err(EngineError::DivisionByZero),
                Div => x / y,
                _ => x % y,
            }))
        }
        _ => Err(mismatch(op.symbol(), a, b)),
    }
}

/// `needle IN (list)` with SQL semantics: true on any match, otherwise NULL
/// if any comparison was unknown, otherwise false.
pub fn in_list(needle: &Value, list: &[Value]) -> Result<Value, EngineError> {
    let mut unknown = false;
    for item in list {
        match binary(BinaryOp::Eq, needle, item)? {
            Value::Bool(true) => return Ok(Value::Bool(true)),
            Value::Null => unknown = true,
            _ => {}
        }
    }
    Ok(if unknown { Value::Null } else { Value::Bool(false) })
}

pub fn function(func: ScalarFunc, args: &[Value]) -> Result<Value, EngineError> {
    match func {
        ScalarFunc::Coalesce => {
            if args.is_empty() {
                return Err(EngineError::Invalid("COALESCE needs an argument".into()));
            }
            Ok(args.iter().find(|v| !v.is_null()).cloned().unwrap_or(Value::Null))
        }
        ScalarFunc::Abs => match args {
            [Value::Null] => Ok(Value::Null),
            [Value::Int(i)] => i.checked_abs().map(Value::Int).ok_or(EngineError::Overflow),
            [Value::Float(f)] => Ok(Value::Float(f.abs())),
            [other] => Err(EngineError::TypeMismatch(format!(
                "ABS expects a number, found {}",
                other.type_name()
            ))),
            _ => Err(EngineError::Invalid("ABS takes one argument".into())),
        },
    }
}
