//! Execution tracing and replay.
//!
//! A traced run executes an instrumented copy of the procedure. Its probes
//! write one row per executed instruction into `TRACE_EVENTS` (scalar values
//! and branch outcomes go to `TRACE_SCALARS`) inside the same database, at
//! the instruction's own logical time. Table results are never stored: a
//! table variable is reconstructed by re-running the assigning query as of
//! the assignment's time.

mod instrument;
mod replay;
mod tree;
mod views;

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

pub use instrument::instrument;
pub use replay::{assignment_nav, Direction, Replay, ReplayCache};
pub use tree::{build_execution_tree, ExecutionTree, TreeNode};
pub use views::emit_reconstruction_views;

use crate::engine::{Binding, EngineError, Environment};
use crate::frontend::{ProbeKind, Procedure, Query, StatementId, StatementKind, TraceProbe, VarType};
use crate::runtime::{
    bind_arguments, execute, AssignedValue, ExecutionConfig, LastStep, ProbeHandler, RunResult, RuntimeError,
    StepObserver, StepOutcome,
};
use crate::storage::{DataType, Database, LogicalTime, Relation, StorageError, TableDef, Value, Writer};

pub const TRACE_RUNS: &str = "TRACE_RUNS";
pub const TRACE_EVENTS: &str = "TRACE_EVENTS";
pub const TRACE_SCALARS: &str = "TRACE_SCALARS";
pub const TRACE_PARAMS: &str = "TRACE_PARAMS";

pub fn is_trace_table(name: &str) -> bool {
    [TRACE_RUNS, TRACE_EVENTS, TRACE_SCALARS, TRACE_PARAMS].contains(&name)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("no trace with id {0}")]
    UnknownTrace(i64),
    #[error("unknown variable {0}")]
    UnknownVariable(String),
    #[error("variable {var} has no value at step {step}")]
    UnboundAtStep { var: String, step: LogicalTime },
    #[error("variable {0} is a table")]
    NotAScalar(String),
    #[error("variable {0} is a scalar")]
    NotATable(String),
    #[error("query {0} is not registered")]
    UnknownQuery(String),
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EventKind {
    AssignScalar,
    AssignTable,
    Dml,
    Branch,
    LoopIter,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::AssignScalar => "AssignScalar",
            EventKind::AssignTable => "AssignTable",
            EventKind::Dml => "Dml",
            EventKind::Branch => "Branch",
            EventKind::LoopIter => "LoopIter",
        }
    }

    pub fn parse(s: &str) -> Option<EventKind> {
        [
            EventKind::AssignScalar,
            EventKind::AssignTable,
            EventKind::Dml,
            EventKind::Branch,
            EventKind::LoopIter,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }

    pub fn opens_scope(self) -> bool {
        matches!(self, EventKind::Branch | EventKind::LoopIter)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub step: LogicalTime,
    pub parent_step: Option<LogicalTime>,
    pub statement_id: StatementId,
    pub kind: EventKind,
    pub var: Option<String>,
    /// The assigned value, or the condition outcome for branch and loop
    /// events.
    pub scalar_value: Option<Value>,
    pub query_id: Option<String>,
    pub db_time: LogicalTime,
    /// Result size for table assignments, affected rows for DML.
    pub row_count: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunFailure {
    pub message: String,
    pub statement: Option<StatementId>,
}

/// A recorded run, loaded from the trace tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub trace_id: i64,
    pub procedure: String,
    pub source: String,
    pub status: RunStatus,
    pub failure: Option<RunFailure>,
    /// Clock before the first instruction and after the last one.
    pub start: LogicalTime,
    pub end: LogicalTime,
    pub params: Environment,
    pub events: Vec<TraceEvent>,
    by_var: HashMap<String, Vec<usize>>,
}

impl Trace {
    pub fn new(
        trace_id: i64,
        procedure: String,
        source: String,
        status: RunStatus,
        failure: Option<RunFailure>,
        (start, end): (LogicalTime, LogicalTime),
        params: Environment,
        mut events: Vec<TraceEvent>,
    ) -> Trace {
        events.sort_by_key(|e| e.step);
        let mut by_var: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, e) in events.iter().enumerate() {
            if let (Some(v), EventKind::AssignScalar | EventKind::AssignTable) = (&e.var, e.kind) {
                by_var.entry(v.clone()).or_default().push(i);
            }
        }
        Trace {
            trace_id,
            procedure,
            source,
            status,
            failure,
            start,
            end,
            params,
            events,
            by_var,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn first_step(&self) -> Option<LogicalTime> {
        self.events.first().map(|e| e.step)
    }

    pub fn last_step(&self) -> Option<LogicalTime> {
        self.events.last().map(|e| e.step)
    }

    pub fn event(&self, step: LogicalTime) -> Option<&TraceEvent> {
        self.events
            .binary_search_by_key(&step, |e| e.step)
            .ok()
            .map(|i| &self.events[i])
    }

    /// Indices of assignment events for `var`, in step order.
    pub fn assignments(&self, var: &str) -> &[usize] {
        self.by_var.get(var).map_or(&[], Vec::as_slice)
    }

    /// The latest assignment to `var` at or before `step`.
    pub fn governing(&self, var: &str, step: LogicalTime) -> Option<&TraceEvent> {
        let idx = self.assignments(var);
        let n = idx.partition_point(|&i| self.events[i].step <= step);
        (n > 0).then(|| &self.events[idx[n - 1]])
    }

    pub(crate) fn governing_index(&self, var: &str, step: LogicalTime) -> Option<usize> {
        let idx = self.assignments(var);
        let n = idx.partition_point(|&i| self.events[i].step <= step);
        (n > 0).then(|| idx[n - 1])
    }

    /// Reads a trace back from the database.
    pub fn load(db: &Database, trace_id: i64) -> Result<Trace, TraceError> {
        if !db.has_table(TRACE_RUNS) {
            return Err(TraceError::UnknownTrace(trace_id));
        }
        let id = Value::Int(trace_id);
        let run = db
            .scan_current(TRACE_RUNS)?
            .rows
            .into_iter()
            .find(|r| r[0] == id)
            .ok_or(TraceError::UnknownTrace(trace_id))?;
        let text = |v: &Value| v.as_str().unwrap_or("").to_string();
        let time = |v: &Value| LogicalTime(v.as_int().unwrap_or(0) as u64);
        let status = if text(&run[3]) == "completed" {
            RunStatus::Completed
        } else {
            RunStatus::Failed
        };
        let failure = (!run[6].is_null()).then(|| RunFailure {
            message: text(&run[6]),
            statement: run[7].as_int().map(|s| StatementId(s as u32)),
        });

        let mut scalars = HashMap::new();
        for r in db.scan_current(TRACE_SCALARS)?.rows {
            if r[0] == id {
                scalars.insert(time(&r[1]), decode_value(&r[2])?);
            }
        }
        let mut events = Vec::new();
        for r in db.scan_current(TRACE_EVENTS)?.rows {
            if r[0] != id {
                continue;
            }
            let step = time(&r[1]);
            let kind = EventKind::parse(&text(&r[4]))
                .ok_or_else(|| TraceError::MalformedTrace(format!("bad event kind at step {step}")))?;
            events.push(TraceEvent {
                step,
                parent_step: (!r[2].is_null()).then(|| time(&r[2])),
                statement_id: StatementId(r[3].as_int().unwrap_or(0) as u32),
                kind,
                var: (!r[5].is_null()).then(|| text(&r[5])),
                scalar_value: scalars.remove(&step),
                query_id: (!r[6].is_null()).then(|| text(&r[6])),
                db_time: time(&r[7]),
                row_count: r[8].as_int().map(|n| n as u64),
            });
        }
        let mut params = Environment::new();
        for r in db.scan_current(TRACE_PARAMS)?.rows {
            if r[0] != id {
                continue;
            }
            let binding = if text(&r[2]) == "table" {
                let rel: Relation = serde_json::from_str(&text(&r[3]))
                    .map_err(|e| TraceError::MalformedTrace(format!("table parameter: {e}")))?;
                Binding::Table(rel)
            } else {
                Binding::Scalar(decode_value(&r[3])?)
            };
            params.insert(text(&r[1]), binding);
        }
        Ok(Trace::new(
            trace_id,
            text(&run[1]),
            text(&run[2]),
            status,
            failure,
            (time(&run[4]), time(&run[5])),
            params,
            events,
        ))
    }

    /// Ids of all recorded runs.
    pub fn list(db: &Database) -> Result<Vec<i64>, TraceError> {
        if !db.has_table(TRACE_RUNS) {
            return Ok(Vec::new());
        }
        let mut ids: Vec<i64> = db
            .scan_current(TRACE_RUNS)?
            .rows
            .iter()
            .filter_map(|r| r[0].as_int())
            .collect();
        ids.sort_unstable();
        Ok(ids)
    }
}

/// Scalar values are stored as tagged text so that the type survives:
/// `i:5`, `f:5.0`, `b:true`, `t:...`; NULL stays NULL.
pub fn encode_value(v: &Value) -> Value {
    match v {
        Value::Null => Value::Null,
        Value::Bool(b) => Value::Text(format!("b:{b}")),
        Value::Int(i) => Value::Text(format!("i:{i}")),
        Value::Float(f) => Value::Text(format!("f:{f:?}")),
        Value::Text(s) => Value::Text(format!("t:{s}")),
    }
}

pub fn decode_value(v: &Value) -> Result<Value, TraceError> {
    let bad = || TraceError::MalformedTrace(format!("bad stored value {v}"));
    let s = match v {
        Value::Null => return Ok(Value::Null),
        Value::Text(s) => s,
        _ => return Err(bad()),
    };
    let (tag, body) = s.split_at_checked(2).ok_or_else(bad)?;
    match tag {
        "b:" => body.parse().map(Value::Bool).map_err(|_| bad()),
        "i:" => body.parse().map(Value::Int).map_err(|_| bad()),
        "f:" => body.parse().map(Value::Float).map_err(|_| bad()),
        "t:" => Ok(Value::text(body)),
        _ => Err(bad()),
    }
}

pub fn query_id(statement: StatementId) -> String {
    format!("q{statement}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegisteredQuery {
    pub var: String,
    pub statement: StatementId,
    pub query: Query,
    /// Variables the query reads.
    pub args: Vec<String>,
}

/// Table-assignment queries of a procedure, keyed by query id, plus the
/// procedure's variables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryRegistry {
    pub queries: BTreeMap<String, RegisteredQuery>,
    pub variables: Vec<(String, VarType)>,
    pub params: Vec<String>,
}

impl QueryRegistry {
    pub fn from_procedure(proc: &Procedure) -> QueryRegistry {
        let mut queries = BTreeMap::new();
        for s in proc.statements() {
            if let StatementKind::AssignTable { var, query } = &s.kind {
                queries.insert(
                    query_id(s.id),
                    RegisteredQuery {
                        var: var.clone(),
                        statement: s.id,
                        query: query.clone(),
                        args: query.variables(),
                    },
                );
            }
        }
        QueryRegistry {
            queries,
            variables: proc.variables(),
            params: proc.params.iter().map(|p| p.name.clone()).collect(),
        }
    }

    pub fn get(&self, id: &str) -> Result<&RegisteredQuery, TraceError> {
        self.queries
            .get(id)
            .ok_or_else(|| TraceError::UnknownQuery(id.to_string()))
    }

    pub fn var_type(&self, var: &str) -> Option<VarType> {
        self.variables.iter().find(|(n, _)| n == var).map(|(_, t)| *t)
    }
}

fn trace_table_defs() -> Vec<TableDef> {
    use DataType::*;
    vec![
        TableDef::new(TRACE_RUNS)
            .column("trace_id", Int)
            .column("procedure", Text)
            .column("source", Text)
            .column("status", Text)
            .column("start_step", Int)
            .column("end_step", Int)
            .column("error", Text)
            .column("error_statement", Int)
            .key("trace_id"),
        TableDef::new(TRACE_EVENTS)
            .column("trace_id", Int)
            .column("step", Int)
            .column("parent_step", Int)
            .column("statement_id", Int)
            .column("kind", Text)
            .column("var", Text)
            .column("query_id", Text)
            .column("db_time", Int)
            .column("row_count", Int)
            .key("trace_id")
            .key("step"),
        TableDef::new(TRACE_SCALARS)
            .column("trace_id", Int)
            .column("step", Int)
            .column("value", Text)
            .key("trace_id")
            .key("step"),
        TableDef::new(TRACE_PARAMS)
            .column("trace_id", Int)
            .column("name", Text)
            .column("kind", Text)
            .column("value", Text)
            .key("trace_id")
            .key("name"),
    ]
}

fn ensure_trace_tables(w: &mut Writer<'_>) -> Result<(), StorageError> {
    for def in trace_table_defs() {
        if !w.db().has_table(&def.name) {
            w.create_table(def)?;
        }
    }
    Ok(())
}

fn next_trace_id(db: &Database) -> Result<i64, StorageError> {
    let mut max = 0;
    for t in [TRACE_RUNS, TRACE_EVENTS] {
        for r in db.scan_current(t)?.rows {
            max = max.max(r[0].as_int().unwrap_or(0));
        }
    }
    Ok(max + 1)
}

struct TraceWriter {
    trace_id: i64,
    scopes: Vec<LogicalTime>,
}

impl ProbeHandler for TraceWriter {
    fn probe(
        &mut self,
        w: &mut Writer<'_>,
        probe: &TraceProbe,
        last: Option<&LastStep>,
        env: &Environment,
    ) -> Result<(), StorageError> {
        if probe.kind == ProbeKind::EndScope {
            self.scopes.pop();
            return Ok(());
        }
        // Probes always follow the instruction they describe.
        let Some(last) = last else { return Ok(()) };
        let (kind, var, scalar, query_id, row_count) = match (&probe.kind, &last.outcome) {
            (ProbeKind::AssignScalar { var }, StepOutcome::Assigned { value, .. }) => {
                let v = match value {
                    AssignedValue::Scalar(v) => v.clone(),
                    AssignedValue::Table { .. } => env
                        .get(var)
                        .and_then(Binding::as_scalar)
                        .cloned()
                        .unwrap_or(Value::Null),
                };
                (EventKind::AssignScalar, Some(var.clone()), Some(v), None, None)
            }
            (ProbeKind::AssignTable { var, query_id }, StepOutcome::Assigned { value, .. }) => {
                let rows = match value {
                    AssignedValue::Table { rows } => *rows as i64,
                    AssignedValue::Scalar(_) => 0,
                };
                (EventKind::AssignTable, Some(var.clone()), None, Some(query_id.clone()), Some(rows))
            }
            (ProbeKind::Dml, StepOutcome::DmlApplied { count }) => {
                (EventKind::Dml, None, None, None, Some(*count as i64))
            }
            (ProbeKind::Branch { .. }, StepOutcome::Branched(b)) => {
                (EventKind::Branch, None, Some(Value::Bool(*b)), None, None)
            }
            (ProbeKind::LoopIter { .. }, StepOutcome::LoopIterated(b)) => {
                (EventKind::LoopIter, None, Some(Value::Bool(*b)), None, None)
            }
            _ => return Ok(()),
        };
        let at = w.clock();
        let opt_text = |s: Option<String>| s.map_or(Value::Null, Value::Text);
        w.apply_insert(
            TRACE_EVENTS,
            vec![vec![
                Value::Int(self.trace_id),
                Value::Int(last.step.get() as i64),
                self.scopes
                    .last()
                    .map_or(Value::Null, |p| Value::Int(p.get() as i64)),
                Value::Int(last.statement.0 as i64),
                Value::text(kind.name()),
                opt_text(var),
                opt_text(query_id),
                Value::Int(last.step.get() as i64),
                row_count.map_or(Value::Null, Value::Int),
            ]],
            at,
        )?;
        if let Some(v) = scalar {
            w.apply_insert(
                TRACE_SCALARS,
                vec![vec![
                    Value::Int(self.trace_id),
                    Value::Int(last.step.get() as i64),
                    encode_value(&v),
                ]],
                at,
            )?;
        }
        let opens = match &probe.kind {
            ProbeKind::Branch { .. } => true,
            ProbeKind::LoopIter { continues } => *continues,
            _ => false,
        };
        if opens {
            self.scopes.push(last.step);
        }
        Ok(())
    }
}

/// Outcome of a traced run. The trace is recorded even when the run fails.
#[derive(Debug, Clone, PartialEq)]
pub struct TracedRun {
    pub trace_id: i64,
    pub result: Result<RunResult, RuntimeError>,
}

pub fn run_traced(
    proc: &Procedure,
    source: &str,
    args: Environment,
    db: &Database,
    cfg: ExecutionConfig,
) -> Result<TracedRun, StorageError> {
    run_traced_with_observer(proc, source, args, db, cfg, None)
}

pub fn run_traced_with_observer(
    proc: &Procedure,
    source: &str,
    args: Environment,
    db: &Database,
    cfg: ExecutionConfig,
    observer: Option<&mut dyn StepObserver>,
) -> Result<TracedRun, StorageError> {
    let mut w = db.writer();
    ensure_trace_tables(&mut w)?;
    let trace_id = next_trace_id(db)?;
    let start = w.clock();
    let result = match bind_arguments(proc, args) {
        Ok(bound) => {
            write_params(&mut w, trace_id, &bound)?;
            let instrumented = instrument(proc);
            let mut handler = TraceWriter {
                trace_id,
                scopes: Vec::new(),
            };
            execute(&instrumented, bound, &mut w, cfg, observer, Some(&mut handler))
        }
        Err(e) => Err(e),
    };
    if let Err(RuntimeError::Trace(e)) = &result {
        return Err(e.clone());
    }
    let end = w.clock();
    let (status, error, error_stmt) = match &result {
        Ok(_) => ("completed", Value::Null, Value::Null),
        Err(e) => (
            "failed",
            Value::Text(e.to_string()),
            e.statement().map_or(Value::Null, |s| Value::Int(s.0 as i64)),
        ),
    };
    w.apply_insert(
        TRACE_RUNS,
        vec![vec![
            Value::Int(trace_id),
            Value::text(&proc.name),
            Value::text(source),
            Value::text(status),
            Value::Int(start.get() as i64),
            Value::Int(end.get() as i64),
            error,
            error_stmt,
        ]],
        end,
    )?;
    Ok(TracedRun { trace_id, result })
}

fn write_params(w: &mut Writer<'_>, trace_id: i64, env: &Environment) -> Result<(), StorageError> {
    let rows: Vec<Vec<Value>> = env
        .iter()
        .map(|(name, b)| {
            let (kind, value) = match b {
                Binding::Scalar(v) => ("scalar", encode_value(v)),
                Binding::Table(r) => (
                    "table",
                    Value::Text(serde_json::to_string(r).unwrap_or_default()),
                ),
            };
            vec![
                Value::Int(trace_id),
                Value::text(name),
                Value::text(kind),
                value,
            ]
        })
        .collect();
    if rows.is_empty() {
        return Ok(());
    }
    let at = w.clock();
    w.apply_insert(TRACE_PARAMS, rows, at)?;
    Ok(())
}
