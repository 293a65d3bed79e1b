//! Debug sessions: a traced run plus a cursor.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use tardisp_core::engine::{Binding, Environment};
use tardisp_core::frontend::{is_dml, parse_procedure, parse_query, Procedure, StatementId, VarType};
use tardisp_core::runtime::ExecutionConfig;
use tardisp_core::storage::{load_fixture, Column, DataType, Database, LogicalTime, Relation, Value};
use tardisp_core::timetravel::{execute_query, DiffTable, TimeTravelResult};
use tardisp_core::tracer::{
    build_execution_tree, run_traced, Direction, EventKind, ExecutionTree, QueryRegistry, Replay, ReplayCache,
    RunFailure, RunStatus, Trace,
};
use uuid::Uuid;

use crate::error::SessionError;

pub const PAGE_SIZE: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Ready,
    /// The procedure executed no instruction.
    EmptyTrace,
    /// The run stopped on an error; the partial trace is navigable.
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NavOp {
    Forward,
    Back,
    To,
    Into,
    Over,
    Out,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NavOutcome {
    pub cursor: LogicalTime,
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Scalar,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariableView {
    pub name: String,
    pub kind: VarKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub row_count: Option<usize>,
    /// Step of the governing assignment; absent for parameters that were
    /// never reassigned.
    pub assigned_at: Option<LogicalTime>,
    pub unbound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Page {
    pub name: String,
    pub step: LogicalTime,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub offset: usize,
    pub limit: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConsoleResult {
    Relation {
        step: LogicalTime,
        columns: Vec<String>,
        rows: Vec<Vec<Value>>,
    },
    Diff(DiffTable),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeNodeView {
    pub step: LogicalTime,
    pub parent: Option<LogicalTime>,
    pub children: Vec<LogicalTime>,
    pub kind: EventKind,
    pub statement_id: StatementId,
    pub var: Option<String>,
    pub row_count: Option<u64>,
    /// Condition outcome for branch and loop nodes, assigned value for scalars.
    pub value: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeView {
    pub roots: Vec<LogicalTime>,
    pub nodes: Vec<TreeNodeView>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatementSpan {
    pub statement_id: StatementId,
    pub start: usize,
    pub end: usize,
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceView {
    pub text: String,
    pub statement_spans: Vec<StatementSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    pub session_id: Uuid,
    pub trace_id: i64,
    pub state: SessionState,
    pub steps: usize,
    pub first_step: LogicalTime,
    pub last_step: LogicalTime,
    pub cursor: LogicalTime,
    pub roots: Vec<LogicalTime>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<RunFailure>,
}

struct Cursor {
    step: LogicalTime,
    bookmarks: BTreeMap<String, LogicalTime>,
}

pub struct Session {
    pub id: Uuid,
    pub db: Arc<Database>,
    pub procedure: Procedure,
    pub trace: Trace,
    pub registry: QueryRegistry,
    pub tree: ExecutionTree,
    cache: ReplayCache,
    cursor: Mutex<Cursor>,
}

impl Session {
    /// Parses `source`, runs it once with tracing and opens a session on the
    /// recorded run. A run that fails still yields a session.
    pub fn create(
        db: Arc<Database>,
        source: &str,
        args: Environment,
        cfg: ExecutionConfig,
    ) -> Result<Session, SessionError> {
        let procedure = parse_procedure(source)?;
        let run = run_traced(&procedure, source, args, &db, cfg)?;
        if let Err(e @ tardisp_core::runtime::RuntimeError::Arguments(_)) = &run.result {
            return Err(SessionError::BadRequest(e.to_string()));
        }
        Self::open(db, run.trace_id)
    }

    /// Opens a session on a trace already stored in `db`.
    pub fn open(db: Arc<Database>, trace_id: i64) -> Result<Session, SessionError> {
        let trace = Trace::load(&db, trace_id)?;
        let procedure = parse_procedure(&trace.source)?;
        let registry = QueryRegistry::from_procedure(&procedure);
        let tree = build_execution_tree(&trace)?;
        let first = trace.first_step().unwrap_or(trace.start);
        Ok(Session {
            id: Uuid::new_v4(),
            db,
            procedure,
            trace,
            registry,
            tree,
            cache: ReplayCache::default(),
            cursor: Mutex::new(Cursor {
                step: first,
                bookmarks: BTreeMap::new(),
            }),
        })
    }

    pub fn state(&self) -> SessionState {
        match self.trace.status {
            RunStatus::Failed => SessionState::Failed,
            RunStatus::Completed if self.trace.is_empty() => SessionState::EmptyTrace,
            RunStatus::Completed => SessionState::Ready,
        }
    }

    pub fn first_step(&self) -> LogicalTime {
        self.trace.first_step().unwrap_or(self.trace.start)
    }

    pub fn last_step(&self) -> LogicalTime {
        self.trace.last_step().unwrap_or(self.trace.start)
    }

    pub fn cursor(&self) -> LogicalTime {
        self.cursor.lock().step
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            session_id: self.id,
            trace_id: self.trace.trace_id,
            state: self.state(),
            steps: self.trace.events.len(),
            first_step: self.first_step(),
            last_step: self.last_step(),
            cursor: self.cursor(),
            roots: self.tree.roots.clone(),
            failure: self.trace.failure.clone(),
        }
    }

    pub fn replay(&self) -> Replay<'_> {
        Replay::new(&self.db, &self.trace, &self.registry, &self.cache)
    }

    fn clamp(&self, step: u64) -> NavOutcome {
        let (lo, hi) = (self.first_step().get(), self.last_step().get());
        let c = step.clamp(lo, hi);
        NavOutcome {
            cursor: LogicalTime(c),
            clamped: c != step,
        }
    }

    fn stay(&self, at: LogicalTime) -> NavOutcome {
        NavOutcome {
            cursor: at,
            clamped: true,
        }
    }

    fn siblings(&self, step: LogicalTime) -> &[LogicalTime] {
        match self.tree.node(step).and_then(|n| n.parent) {
            Some(p) => &self.tree.node(p).expect("parent exists").children,
            None => &self.tree.roots,
        }
    }

    fn next_sibling(&self, step: LogicalTime) -> Option<LogicalTime> {
        let sib = self.siblings(step);
        let i = sib.binary_search(&step).ok()?;
        sib.get(i + 1).copied()
    }

    /// Computes where `op` leads from `from` without moving.
    pub fn plan(&self, from: LogicalTime, op: NavOp, to: Option<u64>) -> Result<NavOutcome, SessionError> {
        if self.trace.is_empty() {
            return Ok(self.stay(from));
        }
        let out = match op {
            NavOp::Forward => self.clamp(from.get() + 1),
            NavOp::Back => self.clamp(from.get().saturating_sub(1)),
            NavOp::To => {
                let s = to.ok_or_else(|| SessionError::BadRequest("navigate to needs a step".into()))?;
                self.clamp(s)
            }
            NavOp::Into => match self.tree.node(from).and_then(|n| n.children.first()) {
                Some(&c) => NavOutcome {
                    cursor: c,
                    clamped: false,
                },
                None => self.clamp(from.get() + 1),
            },
            NavOp::Over => {
                let mut cur = Some(from);
                let mut found = None;
                while let Some(s) = cur {
                    if let Some(n) = self.next_sibling(s) {
                        found = Some(n);
                        break;
                    }
                    cur = self.tree.node(s).and_then(|n| n.parent);
                }
                match found {
                    Some(s) => NavOutcome {
                        cursor: s,
                        clamped: false,
                    },
                    None => self.stay(from),
                }
            }
            NavOp::Out => match self.tree.node(from).and_then(|n| n.parent) {
                Some(p) => NavOutcome {
                    cursor: p,
                    clamped: false,
                },
                None => self.stay(from),
            },
        };
        Ok(out)
    }

    pub fn navigate(&self, op: NavOp, to: Option<u64>) -> Result<NavOutcome, SessionError> {
        let mut c = self.cursor.lock();
        let out = self.plan(c.step, op, to)?;
        c.step = out.cursor;
        Ok(out)
    }

    pub fn set_bookmark(&self, name: &str, step: Option<u64>) -> Result<LogicalTime, SessionError> {
        let mut c = self.cursor.lock();
        let at = match step {
            Some(s) => self.check_step(Some(s))?,
            None => c.step,
        };
        c.bookmarks.insert(name.to_string(), at);
        Ok(at)
    }

    pub fn bookmarks(&self) -> BTreeMap<String, LogicalTime> {
        self.cursor.lock().bookmarks.clone()
    }

    /// The requested step, or the cursor; must lie inside the run.
    fn check_step(&self, step: Option<u64>) -> Result<LogicalTime, SessionError> {
        let Some(s) = step else {
            return Ok(self.cursor());
        };
        let (lo, hi) = (self.first_step().get(), self.last_step().get());
        if s < lo || s > hi {
            return Err(SessionError::OutOfRange { step: s, first: lo, last: hi });
        }
        Ok(LogicalTime(s))
    }

    fn var_type(&self, name: &str) -> Result<VarType, SessionError> {
        self.registry
            .var_type(name)
            .ok_or_else(|| SessionError::UnknownVariable(name.to_string()))
    }

    fn view(&self, replay: &Replay<'_>, name: &str, ty: VarType, step: LogicalTime) -> Result<VariableView, SessionError> {
        let assigned_at = self.trace.governing(name, step).map(|e| e.step);
        let bound = assigned_at.is_some() || self.trace.params.contains_key(name);
        let mut v = VariableView {
            name: name.to_string(),
            kind: if ty.is_table() { VarKind::Table } else { VarKind::Scalar },
            value: None,
            row_count: None,
            assigned_at,
            unbound: !bound,
        };
        if bound {
            if ty.is_table() {
                v.row_count = Some(replay.table_row_count(name, step)?);
            } else {
                v.value = Some(replay.reconstruct_scalar(name, step)?);
            }
        }
        Ok(v)
    }

    /// One entry per variable, reconstructed at `step` (default: cursor).
    pub fn variables(&self, step: Option<u64>) -> Result<Vec<VariableView>, SessionError> {
        let step = self.check_step(step)?;
        let replay = self.replay();
        self.procedure
            .variables()
            .into_iter()
            .map(|(name, ty)| self.view(&replay, &name, ty, step))
            .collect()
    }

    pub fn variable(&self, name: &str, step: Option<u64>) -> Result<VariableView, SessionError> {
        let step = self.check_step(step)?;
        let ty = self.var_type(name)?;
        self.view(&self.replay(), name, ty, step)
    }

    /// A page of a table variable's contents. Scalars come back as one row.
    pub fn variable_page(
        &self,
        name: &str,
        step: Option<u64>,
        offset: usize,
        limit: Option<usize>,
    ) -> Result<Page, SessionError> {
        let step = self.check_step(step)?;
        let limit = limit.unwrap_or(PAGE_SIZE).min(PAGE_SIZE);
        let replay = self.replay();
        let page = |columns: Vec<String>, rows: &[Vec<Value>]| Page {
            name: name.to_string(),
            step,
            columns,
            rows: rows.iter().skip(offset).take(limit).cloned().collect(),
            offset,
            limit,
            total: rows.len(),
        };
        if self.var_type(name)?.is_table() {
            let rel = replay.table_shared(name, step)?;
            Ok(page(column_names(&rel), &rel.rows))
        } else {
            let v = replay.reconstruct_scalar(name, step)?;
            Ok(page(vec![name.to_string()], &[vec![v]]))
        }
    }

    pub fn assignment(&self, name: &str, step: Option<u64>, dir: Direction) -> Result<Option<LogicalTime>, SessionError> {
        let step = self.check_step(step)?;
        Ok(self.replay().assignment_nav(name, step, dir)?)
    }

    /// Runs a read-only back-in-time query. Without an AT STEP clause it is
    /// pinned to the cursor.
    pub fn console_query(&self, text: &str) -> Result<ConsoleResult, SessionError> {
        if is_dml(text) {
            return Err(SessionError::ReadOnly);
        }
        let q = parse_query(text.trim().trim_end_matches(';'))?;
        let cursor = self.cursor();
        let at = match q.at_step {
            Some(tardisp_core::frontend::AtStep::Single(s)) => LogicalTime(s),
            _ => cursor,
        };
        Ok(match execute_query(&self.replay(), &q, Some(cursor))? {
            TimeTravelResult::Relation(r) => ConsoleResult::Relation {
                step: at,
                columns: column_names(&r),
                rows: r.rows,
            },
            TimeTravelResult::Diff(d) => ConsoleResult::Diff(d),
        })
    }

    pub fn tree_view(&self) -> TreeView {
        let nodes = self
            .tree
            .nodes
            .iter()
            .map(|n| {
                let e = self.trace.event(n.step).expect("tree built from trace");
                TreeNodeView {
                    step: n.step,
                    parent: n.parent,
                    children: n.children.clone(),
                    kind: n.kind,
                    statement_id: n.statement_id,
                    var: n.var.clone(),
                    row_count: e.row_count,
                    value: e.scalar_value.clone(),
                }
            })
            .collect();
        TreeView {
            roots: self.tree.roots.clone(),
            nodes,
        }
    }

    pub fn source_view(&self) -> SourceView {
        let text = self.trace.source.clone();
        let statement_spans = self
            .procedure
            .statements()
            .into_iter()
            .map(|s| {
                let (line, col) = line_col(&text, s.span.start);
                StatementSpan {
                    statement_id: s.id,
                    start: s.span.start,
                    end: s.span.end,
                    line,
                    col,
                }
            })
            .collect();
        SourceView { text, statement_spans }
    }
}

fn column_names(r: &Relation) -> Vec<String> {
    r.columns.iter().map(|c| c.name.clone()).collect()
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Converts JSON arguments to bindings using the procedure's declared
/// parameter types. Tables are `{"columns": [...], "rows": [[...], ...]}`.
pub fn args_from_json(
    proc_: &Procedure,
    args: &serde_json::Map<String, serde_json::Value>,
) -> Result<Environment, SessionError> {
    let mut env = Environment::new();
    for (name, json) in args {
        let Some(param) = proc_.params.iter().find(|p| &p.name == name) else {
            return Err(SessionError::BadRequest(format!("unknown parameter {name}")));
        };
        let b = match param.ty {
            VarType::Table => Binding::Table(table_from_json(name, json)?),
            VarType::Scalar(ty) => Binding::Scalar(scalar_from_json(name, json, Some(ty))?),
        };
        env.insert(name.clone(), b);
    }
    Ok(env)
}

fn scalar_from_json(name: &str, json: &serde_json::Value, ty: Option<DataType>) -> Result<Value, SessionError> {
    use serde_json::Value as J;
    let bad = || SessionError::BadRequest(format!("argument {name}: cannot use {json}"));
    Ok(match (json, ty) {
        (J::Null, _) => Value::Null,
        (J::Bool(b), _) => Value::Bool(*b),
        (J::Number(n), Some(DataType::Float)) => Value::Float(n.as_f64().ok_or_else(bad)?),
        (J::Number(n), _) => match n.as_i64() {
            Some(i) => Value::Int(i),
            None => Value::Float(n.as_f64().ok_or_else(bad)?),
        },
        (J::String(s), _) => Value::text(s),
        _ => return Err(bad()),
    })
}

fn table_from_json(name: &str, json: &serde_json::Value) -> Result<Relation, SessionError> {
    let bad = || SessionError::BadRequest(format!("argument {name}: expected {{\"columns\": [...], \"rows\": [...]}}"));
    let columns: Vec<String> = json
        .get("columns")
        .and_then(|c| c.as_array())
        .ok_or_else(bad)?
        .iter()
        .map(|c| c.as_str().map(str::to_string).ok_or_else(bad))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for r in json.get("rows").and_then(|r| r.as_array()).ok_or_else(bad)? {
        let cells = r.as_array().filter(|c| c.len() == columns.len()).ok_or_else(bad)?;
        rows.push(
            cells
                .iter()
                .map(|c| scalar_from_json(name, c, None))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    Ok(Relation::new(columns.iter().map(|c| Column::new(c.as_str(), None)).collect(), rows))
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateSession {
    /// Procedure text. Omit together with `trace_id` to re-open a stored run.
    #[serde(default)]
    pub procedure: Option<String>,
    #[serde(default)]
    pub args: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    pub fixture_dir: Option<PathBuf>,
    #[serde(default)]
    pub trace_id: Option<i64>,
}

/// All sessions of one server, plus one database per fixture directory.
pub struct Debugger {
    default_fixture: Option<PathBuf>,
    cfg: ExecutionConfig,
    databases: Mutex<HashMap<PathBuf, Arc<Database>>>,
    sessions: RwLock<HashMap<Uuid, Arc<Session>>>,
}

impl Debugger {
    pub fn new(default_fixture: Option<PathBuf>) -> Self {
        Debugger {
            default_fixture,
            cfg: ExecutionConfig::default(),
            databases: Mutex::new(HashMap::new()),
            sessions: RwLock::new(HashMap::new()),
        }
    }

    /// The database for `dir`, loading the fixture on first use. Later runs
    /// on the same fixture see the effects of earlier ones.
    pub fn database(&self, dir: Option<&Path>) -> Result<Arc<Database>, SessionError> {
        let dir = dir
            .or(self.default_fixture.as_deref())
            .ok_or_else(|| SessionError::BadRequest("no fixture_dir given and no default fixture".into()))?;
        let key = dir.canonicalize().map_err(|e| SessionError::BadRequest(format!("{}: {e}", dir.display())))?;
        let mut dbs = self.databases.lock();
        if let Some(db) = dbs.get(&key) {
            return Ok(db.clone());
        }
        let db = Arc::new(load_fixture(&key)?);
        dbs.insert(key, db.clone());
        Ok(db)
    }

    pub fn create_session(&self, req: &CreateSession) -> Result<Arc<Session>, SessionError> {
        let db = self.database(req.fixture_dir.as_deref())?;
        let session = match (&req.procedure, req.trace_id) {
            (Some(src), None) => {
                let proc_ = parse_procedure(src)?;
                let args = args_from_json(&proc_, &req.args)?;
                Session::create(db, src, args, self.cfg)?
            }
            (None, Some(id)) => Session::open(db, id)?,
            _ => {
                return Err(SessionError::BadRequest(
                    "give either procedure or trace_id".into(),
                ))
            }
        };
        let s = Arc::new(session);
        self.sessions.write().insert(s.id, s.clone());
        Ok(s)
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, SessionError> {
        let uuid = Uuid::parse_str(id).map_err(|_| SessionError::UnknownSession(id.to_string()))?;
        self.sessions
            .read()
            .get(&uuid)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }
}
