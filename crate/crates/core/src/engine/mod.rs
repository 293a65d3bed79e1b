//! Query evaluation against the store at a given logical time.

mod dml;
pub mod ops;
mod plan;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::frontend::{Expr, Query};
use crate::storage::{Database, LogicalTime, Relation, StorageError, Value};

pub use dml::execute_dml;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("variable {0} is not bound")]
    UnboundVariable(String),
    #[error("variable {0} holds a table, not a scalar")]
    NotAScalar(String),
    #[error("variable {0} holds a scalar, not a table")]
    NotATable(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("column reference {0} is ambiguous")]
    AmbiguousColumn(String),
    #[error("{0} is bound twice in FROM")]
    DuplicateAlias(String),
    #[error("{0} must appear in GROUP BY or inside an aggregate")]
    NotGrouped(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("integer overflow")]
    Overflow,
    #[error("scalar query must return one column and at most one row, got {columns} columns and {rows} rows")]
    ScalarQueryShape { columns: usize, rows: usize },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Binding {
    Scalar(Value),
    Table(Relation),
}

impl Binding {
    pub fn as_scalar(&self) -> Option<&Value> {
        match self {
            Binding::Scalar(v) => Some(v),
            Binding::Table(_) => None,
        }
    }

    pub fn as_table(&self) -> Option<&Relation> {
        match self {
            Binding::Table(r) => Some(r),
            Binding::Scalar(_) => None,
        }
    }

    /// Equality of contents, ignoring column origins.
    pub fn same_contents(&self, other: &Binding) -> bool {
        match (self, other) {
            (Binding::Scalar(a), Binding::Scalar(b)) => a == b,
            (Binding::Table(a), Binding::Table(b)) => a.same_contents(b),
            _ => false,
        }
    }
}

pub type Environment = BTreeMap<String, Binding>;

/// Evaluates a plain query (no AT STEP clause, no step qualifiers) with base
/// tables read as of `at`.
pub fn evaluate(db: &Database, q: &Query, env: &Environment, at: LogicalTime) -> Result<Relation, EngineError> {
    if q.at_step.is_some() {
        return Err(EngineError::Invalid(
            "AT STEP must be resolved before evaluation".into(),
        ));
    }
    plan::Planner::new(db, env, at).run(q)
}

/// Evaluates a scalar expression. Aggregates are rejected; `EXISTS`
/// subqueries read base tables as of `at`.
pub fn evaluate_scalar(db: &Database, e: &Expr, env: &Environment, at: LogicalTime) -> Result<Value, EngineError> {
    plan::Planner::new(db, env, at).scalar(e)
}

/// Evaluates a query that must produce a single value: one column and at
/// most one row. No rows yields NULL.
pub fn evaluate_scalar_query(db: &Database, q: &Query, env: &Environment, at: LogicalTime) -> Result<Value, EngineError> {
    let rel = evaluate(db, q, env, at)?;
    if rel.columns.len() != 1 || rel.rows.len() > 1 {
        return Err(EngineError::ScalarQueryShape {
            columns: rel.columns.len(),
            rows: rel.rows.len(),
        });
    }
    Ok(rel.rows.into_iter().next().map_or(Value::Null, |mut r| r.remove(0)))
}
