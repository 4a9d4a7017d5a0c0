use super::ast::{ArithOp, Condition, Expr};
use super::types::Value;
use super::SqlError;
use crate::model::RowContext;

/// Evaluates a condition on one row. `now` binds the NOW pseudo-value; a
/// condition that mentions NOW fails with a type error when it is unbound.
pub fn evaluate(condition: &Condition, row: &dyn RowContext, now: Option<i64>) -> Result<bool, SqlError> {
    match condition {
        Condition::Const(b) => Ok(*b),
        Condition::Compare { left, op, right } => {
            let l = eval_expr(left, row, now)?;
            let r = eval_expr(right, row, now)?;
            let ord = l
                .sql_cmp(&r)
                .ok_or_else(|| SqlError::Type(format!("cannot compare {} with {}", l.to_sql(), r.to_sql())))?;
            Ok(op.holds(ord))
        }
        Condition::And(items) => {
            for c in items {
                if !evaluate(c, row, now)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Condition::Or(items) => {
            for c in items {
                if evaluate(c, row, now)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        Condition::Not(inner) => Ok(!evaluate(inner, row, now)?),
    }
}

/// `None` condition is the universal predicate.
pub fn evaluate_opt(condition: Option<&Condition>, row: &dyn RowContext, now: Option<i64>) -> Result<bool, SqlError> {
    match condition {
        None => Ok(true),
        Some(c) => evaluate(c, row, now),
    }
}

pub fn eval_expr(e: &Expr, row: &dyn RowContext, now: Option<i64>) -> Result<Value, SqlError> {
    match e {
        Expr::Literal(v) => Ok(v.clone()),
        Expr::Column(c) => row.value(c).cloned().ok_or_else(|| SqlError::Type(format!("column '{c}' is not bound"))),
        Expr::Now => now.map(Value::Timestamp).ok_or_else(|| SqlError::Type("NOW is not bound here".into())),
        Expr::Arith { op, left, right } => {
            let l = eval_expr(left, row, now)?;
            let r = eval_expr(right, row, now)?;
            arith(*op, &l, &r)
        }
    }
}

fn arith(op: ArithOp, l: &Value, r: &Value) -> Result<Value, SqlError> {
    if let (Some(a), Some(b)) = (l.as_i64(), r.as_i64()) {
        let v = match op {
            ArithOp::Add => a.checked_add(b),
            ArithOp::Sub => a.checked_sub(b),
        };
        return v.map(Value::Int).ok_or_else(|| SqlError::Type("integer overflow".into()));
    }
    match (l.as_f64(), r.as_f64()) {
        (Some(a), Some(b)) => Ok(Value::Real(match op {
            ArithOp::Add => a + b,
            ArithOp::Sub => a - b,
        })),
        _ => Err(SqlError::Type(format!("arithmetic on {} and {}", l.to_sql(), r.to_sql()))),
    }
}
