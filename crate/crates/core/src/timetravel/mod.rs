//! Back-in-time queries over a recorded run.
//!
//! `AT STEP s` evaluates a query with procedure variables reconstructed at
//! step `s` and base tables read as of `s`. A named clause
//! (`AT STEP before=3, after=9`) runs the query once per step without its
//! step-qualified conjuncts, joins the partial results on their key columns,
//! and then applies those conjuncts to the joined rows.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::engine::{evaluate, evaluate_scalar, EngineError, Environment};
use crate::frontend::{AtStep, ColumnRef, Expr, Query, SelectItem};
use crate::storage::{Column, Database, LogicalTime, Relation, StorageError, Value};
use crate::tracer::{Replay, TraceError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimeTravelError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("step {step} is outside the recorded run (0..={last})")]
    UnknownStep { step: u64, last: u64 },
    #[error("no step named {0} in the AT STEP clause")]
    UnknownStepName(String),
    #[error("cannot determine key columns to align the per-step results")]
    NoKeyColumns,
    #[error("key {0} occurs more than once in one step's result")]
    DuplicateDiffKey(String),
    #[error("{0}")]
    Invalid(String),
}

/// A query bound to one step: variables replaced by their reconstructed
/// values, ready for plain evaluation at `at`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundQuery {
    pub query: Query,
    pub env: Environment,
    pub at: LogicalTime,
}

fn check_step(replay: &Replay<'_>, step: u64) -> Result<LogicalTime, TimeTravelError> {
    let last = replay.trace.end.get();
    if step > last {
        return Err(TimeTravelError::UnknownStep { step, last });
    }
    Ok(LogicalTime(step))
}

/// Resolves a single-step query. A query without an AT STEP clause is bound
/// to `default_step`.
pub fn rewrite_at_step(
    replay: &Replay<'_>,
    q: &Query,
    default_step: Option<LogicalTime>,
) -> Result<BoundQuery, TimeTravelError> {
    let step = match (&q.at_step, default_step) {
        (Some(AtStep::Single(s)), _) => check_step(replay, *s)?,
        (None, Some(s)) => check_step(replay, s.get())?,
        (None, None) => return Err(TimeTravelError::Invalid("query has no AT STEP clause".into())),
        (Some(AtStep::Named(_)), _) => {
            return Err(TimeTravelError::Invalid(
                "named steps make a time-diff query; use execute_time_diff".into(),
            ))
        }
    };
    if q.has_qualifiers() || any_qualifier_in_subqueries(q) {
        return Err(TimeTravelError::Invalid(
            "step qualifiers need a named AT STEP clause".into(),
        ));
    }
    let mut env = Environment::new();
    for v in q.variables() {
        env.insert(v.clone(), replay.reconstruct(&v, step)?);
    }
    let mut query = q.clone();
    query.at_step = None;
    Ok(BoundQuery {
        query,
        env,
        at: step,
    })
}

fn any_qualifier_in_subqueries(q: &Query) -> bool {
    let mut found = false;
    q.clone().visit_exprs_mut(&mut |e| found |= matches!(e, Expr::Qualified { .. }));
    found
}

/// Evaluates a single-step query.
pub fn run_at_step(replay: &Replay<'_>, q: &Query, default_step: Option<LogicalTime>) -> Result<Relation, TimeTravelError> {
    let b = rewrite_at_step(replay, q, default_step)?;
    Ok(evaluate(replay.db, &b.query, &b.env, b.at)?)
}

/// A cell's value at one step. `Absent` means the row was missing from that
/// step's partial result, which is different from a NULL value.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "state", content = "value", rename_all = "lowercase")]
pub enum StepValue {
    Present(Value),
    Absent,
}

impl StepValue {
    pub fn value(&self) -> Option<&Value> {
        match self {
            StepValue::Present(v) => Some(v),
            StepValue::Absent => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffCell {
    pub values: Vec<StepValue>,
    /// One flag per adjacent pair of steps.
    pub changed_from_prev: Vec<bool>,
    /// Per adjacent pair: when the base-table value behind a change was
    /// written, if that can be attributed.
    pub jump_steps: Vec<Option<LogicalTime>>,
    /// The attributed change of the last changed pair.
    pub jump_step: Option<LogicalTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffRow {
    pub key: Vec<Value>,
    pub cells: Vec<DiffCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffTable {
    pub key_columns: Vec<String>,
    pub value_columns: Vec<String>,
    pub step_names: Vec<String>,
    pub steps: Vec<LogicalTime>,
    pub rows: Vec<DiffRow>,
}

fn strip_qualifiers(e: &mut Expr) {
    e.walk_mut(&mut |node| {
        if let Expr::Qualified { column, .. } = node {
            *node = Expr::Column(column.clone());
        }
    });
}

fn qualifiers_of(e: &Expr, out: &mut Vec<(String, ColumnRef)>) {
    e.walk(&mut |node| {
        if let Expr::Qualified { step, column } = node {
            let q = (step.clone(), column.clone());
            if !out.contains(&q) {
                out.push(q);
            }
        }
    });
}

/// Runs a query with a named AT STEP clause and aligns the per-step results.
pub fn execute_time_diff(replay: &Replay<'_>, q: &Query) -> Result<DiffTable, TimeTravelError> {
    let named = match &q.at_step {
        Some(AtStep::Named(n)) if n.len() >= 2 => n.clone(),
        Some(AtStep::Named(_)) => {
            return Err(TimeTravelError::Invalid(
                "a time-diff query needs at least two named steps".into(),
            ))
        }
        _ => return Err(TimeTravelError::Invalid("query has no named AT STEP clause".into())),
    };
    let names: Vec<String> = named.iter().map(|n| n.name.clone()).collect();
    let steps = named
        .iter()
        .map(|n| check_step(replay, n.step))
        .collect::<Result<Vec<_>, _>>()?;
    if q.select.iter().any(|s| matches!(s, SelectItem::Wildcard)) && !q.group_by.is_empty() {
        return Err(TimeTravelError::Invalid("SELECT * cannot be combined with GROUP BY here".into()));
    }

    let mut conjuncts = q.where_clause.clone().map(Expr::conjuncts).unwrap_or_default();
    let time_specific: Vec<Expr> = conjuncts.iter().filter(|c| c.contains_qualifier()).cloned().collect();
    conjuncts.retain(|c| !c.contains_qualifier());

    let mut qualified = Vec::new();
    for c in &time_specific {
        qualifiers_of(c, &mut qualified);
        let mut bare = false;
        c.walk(&mut |node| bare |= matches!(node, Expr::Column(_) | Expr::Variable(_) | Expr::Exists(_)));
        if bare {
            return Err(TimeTravelError::Invalid(format!(
                "{}: every column in a step-qualified condition must carry a step",
                crate::frontend::render_expr(c)
            )));
        }
    }
    let mut all_qualifiers = Vec::new();
    for e in q.expressions() {
        qualifiers_of(e, &mut all_qualifiers);
    }
    for (name, _) in &all_qualifiers {
        if !names.contains(name) {
            return Err(TimeTravelError::UnknownStepName(name.clone()));
        }
    }
    let mut distinct_cols: Vec<ColumnRef> = Vec::new();
    for (_, c) in &qualified {
        if !distinct_cols.contains(c) {
            distinct_cols.push(c.clone());
        }
    }

    // The per-step query: plain conjuncts only, qualifiers dropped, plus one
    // hidden output column per column read by a step-qualified condition.
    let mut stripped = q.clone();
    stripped.at_step = None;
    stripped.where_clause = Expr::conjoin(conjuncts);
    stripped.visit_exprs_mut(&mut strip_qualifiers);
    let visible = stripped.select.len();
    for (i, c) in distinct_cols.iter().enumerate() {
        stripped.select.push(SelectItem::Expr {
            expr: Expr::Column(c.clone()),
            alias: Some(format!("__q{i}")),
        });
    }

    let mut partials = Vec::with_capacity(steps.len());
    for &s in &steps {
        let mut single = stripped.clone();
        single.at_step = Some(AtStep::Single(s.get()));
        partials.push(run_at_step(replay, &single, None)?);
    }
    let columns = partials[0].columns.clone();
    let hidden = columns.len() - distinct_cols.len();
    let visible_cols = &columns[..hidden];
    let key_idx = key_columns(&stripped, visible, visible_cols)?;
    let value_idx: Vec<usize> = (0..hidden).filter(|i| !key_idx.contains(i)).collect();

    let mut joined: BTreeMap<Vec<Value>, Vec<Option<Vec<Value>>>> = BTreeMap::new();
    for (si, rel) in partials.iter().enumerate() {
        for row in &rel.rows {
            let key: Vec<Value> = key_idx.iter().map(|&i| row[i].clone()).collect();
            let slot = joined.entry(key).or_insert_with(|| vec![None; steps.len()]);
            if slot[si].is_some() {
                let k: Vec<String> = key_idx.iter().map(|&i| row[i].to_string()).collect();
                return Err(TimeTravelError::DuplicateDiffKey(format!("({})", k.join(", "))));
            }
            slot[si] = Some(row.clone());
        }
    }

    let mut rows = Vec::new();
    for (key, per_step) in joined {
        if !passes(&time_specific, &names, &distinct_cols, hidden, &per_step, replay.db)? {
            continue;
        }
        let mut cells = Vec::with_capacity(value_idx.len());
        for &c in &value_idx {
            let values: Vec<StepValue> = per_step
                .iter()
                .map(|r| r.as_ref().map_or(StepValue::Absent, |r| StepValue::Present(r[c].clone())))
                .collect();
            let changed: Vec<bool> = values.windows(2).map(|w| w[0] != w[1]).collect();
            let mut jumps = vec![None; changed.len()];
            for (i, &ch) in changed.iter().enumerate() {
                if ch && values[i + 1].value().is_some() {
                    jumps[i] = attribute_change(replay.db, &columns, &key_idx, &key, c, steps[i], steps[i + 1])?;
                }
            }
            let last_changed = changed.iter().rposition(|&c| c);
            cells.push(DiffCell {
                values,
                changed_from_prev: changed,
                jump_step: last_changed.and_then(|i| jumps[i]),
                jump_steps: jumps,
            });
        }
        rows.push(DiffRow { key, cells });
    }

    Ok(DiffTable {
        key_columns: key_idx.iter().map(|&i| columns[i].name.clone()).collect(),
        value_columns: value_idx.iter().map(|&i| columns[i].name.clone()).collect(),
        step_names: names,
        steps,
        rows,
    })
}

/// Key columns, as output positions. With GROUP BY: the grouped output
/// columns that come from primary-key columns, or all grouped output columns
/// if none do. Without: the output columns that come from primary-key
/// columns.
fn key_columns(q: &Query, visible: usize, columns: &[Column]) -> Result<Vec<usize>, TimeTravelError> {
    let is_pk = |i: usize| columns[i].origin.as_ref().is_some_and(|o| o.primary_key);
    let keys: Vec<usize> = if q.group_by.is_empty() {
        (0..columns.len()).filter(|&i| is_pk(i)).collect()
    } else {
        let grouped: Vec<usize> = q.select[..visible]
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, SelectItem::Expr { expr, .. } if q.group_by.contains(expr)))
            .map(|(i, _)| i)
            .collect();
        let pk: Vec<usize> = grouped.iter().copied().filter(|&i| is_pk(i)).collect();
        if pk.is_empty() {
            grouped
        } else {
            pk
        }
    };
    if keys.is_empty() {
        return Err(TimeTravelError::NoKeyColumns);
    }
    Ok(keys)
}

/// Applies the step-qualified conditions to one joined row. A condition
/// reading a step where the row is absent filters the row out.
fn passes(
    conds: &[Expr],
    names: &[String],
    cols: &[ColumnRef],
    hidden_base: usize,
    per_step: &[Option<Vec<Value>>],
    db: &Database,
) -> Result<bool, TimeTravelError> {
    let env = Environment::new();
    for c in conds {
        let mut absent = false;
        let mut e = c.clone();
        e.walk_mut(&mut |node| {
            if let Expr::Qualified { step, column } = node {
                let si = names.iter().position(|n| n == step).expect("checked");
                let ci = cols.iter().position(|x| x == column).expect("collected");
                match &per_step[si] {
                    Some(r) => *node = Expr::Literal(r[hidden_base + ci].clone()),
                    None => absent = true,
                }
            }
        });
        if absent {
            return Ok(false);
        }
        if evaluate_scalar(db, &e, &env, LogicalTime::ZERO)? != Value::Bool(true) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The write behind a change of output column `c` between two steps, when
/// the column is read straight from a base table whose primary key is among
/// the key columns.
fn attribute_change(
    db: &Database,
    columns: &[Column],
    key_idx: &[usize],
    key: &[Value],
    c: usize,
    lo: LogicalTime,
    hi: LogicalTime,
) -> Result<Option<LogicalTime>, TimeTravelError> {
    let Some(origin) = columns[c].origin.as_ref().filter(|o| o.direct) else {
        return Ok(None);
    };
    if lo >= hi {
        return Ok(None);
    }
    let def = db.table_def(&origin.table)?;
    let mut pk = Vec::with_capacity(def.primary_key.len());
    for k in &def.primary_key {
        let found = key_idx.iter().position(|&i| {
            columns[i].origin.as_ref().is_some_and(|o| {
                o.direct && o.table == origin.table && o.group == origin.group && &o.column == k
            })
        });
        match found {
            Some(p) => pk.push(key[p].clone()),
            None => return Ok(None),
        }
    }
    if pk.is_empty() {
        return Ok(None);
    }
    Ok(change_points(db, &origin.table, &pk, &origin.column, lo, hi)?.last().copied())
}

/// Times in `(lo, hi]` at which the row with primary key `pk` got a new
/// value in `column`. A row that appears without a version ending at that
/// same time counts as changed.
fn change_points(
    db: &Database,
    table: &str,
    pk: &[Value],
    column: &str,
    lo: LogicalTime,
    hi: LogicalTime,
) -> Result<Vec<LogicalTime>, TimeTravelError> {
    let def = db.table_def(table)?;
    let ci = def.column_index(column).ok_or_else(|| StorageError::UnknownColumn {
        table: table.to_string(),
        column: column.to_string(),
    })?;
    let versions = db.versions_by_key(table, pk)?;
    let mut out = Vec::new();
    for (i, v) in versions.iter().enumerate() {
        let prev = versions[..i]
            .iter()
            .rev()
            .find(|p| p.valid_to == Some(v.valid_from));
        if v.valid_from > lo && v.valid_from <= hi {
            let changed = match prev {
                Some(p) => p.values[ci] != v.values[ci],
                None => true,
            };
            if changed {
                out.push(v.valid_from);
            }
        }
    }
    Ok(out)
}

/// The earliest time in `(t_low, t_high]` at which the row with primary key
/// `pk` got a new value in `column`.
pub fn find_change_origin(
    db: &Database,
    table: &str,
    pk: &[Value],
    column: &str,
    t_low: LogicalTime,
    t_high: LogicalTime,
) -> Result<Option<LogicalTime>, TimeTravelError> {
    if t_low >= t_high {
        return Ok(None);
    }
    Ok(change_points(db, table, pk, column, t_low, t_high)?.first().copied())
}

/// Result of a console query: a relation for single-step queries, a diff
/// table for named-step queries.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeTravelResult {
    Relation(Relation),
    Diff(DiffTable),
}

/// Runs any read-only back-in-time query. Queries without an AT STEP clause
/// run at `default_step`.
pub fn execute_query(
    replay: &Replay<'_>,
    q: &Query,
    default_step: Option<LogicalTime>,
) -> Result<TimeTravelResult, TimeTravelError> {
    match &q.at_step {
        Some(AtStep::Named(_)) => Ok(TimeTravelResult::Diff(execute_time_diff(replay, q)?)),
        _ => Ok(TimeTravelResult::Relation(run_at_step(replay, q, default_step)?)),
    }
}
