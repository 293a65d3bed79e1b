use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{EventKind, QueryRegistry, Trace, TraceError};
use crate::engine::{evaluate, Binding, Environment};
use crate::frontend::VarType;
use crate::storage::{Database, LogicalTime, Relation, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Prev,
    Next,
}

/// Reconstructed table results, shared between replays of the same trace.
///
/// Entries are keyed by trace id and event index. When the total number of
/// cached rows exceeds the budget the cache is emptied.
#[derive(Debug)]
pub struct ReplayCache {
    entries: Mutex<HashMap<(i64, usize), Arc<Relation>>>,
    rows: Mutex<usize>,
    budget: usize,
}

impl Default for ReplayCache {
    fn default() -> Self {
        ReplayCache::with_budget(2_000_000)
    }
}

impl ReplayCache {
    pub fn with_budget(rows: usize) -> Self {
        ReplayCache {
            entries: Mutex::new(HashMap::new()),
            rows: Mutex::new(0),
            budget: rows,
        }
    }

    fn get(&self, key: (i64, usize)) -> Option<Arc<Relation>> {
        self.entries.lock().get(&key).cloned()
    }

    fn put(&self, key: (i64, usize), rel: Arc<Relation>) {
        let mut entries = self.entries.lock();
        let mut rows = self.rows.lock();
        if *rows + rel.len() > self.budget {
            entries.clear();
            *rows = 0;
        }
        *rows += rel.len();
        entries.insert(key, rel);
    }

    pub fn clear(&self) {
        self.entries.lock().clear();
        *self.rows.lock() = 0;
    }
}

/// Read-only reconstruction of variable values from a recorded trace.
pub struct Replay<'a> {
    pub db: &'a Database,
    pub trace: &'a Trace,
    pub registry: &'a QueryRegistry,
    cache: &'a ReplayCache,
}

impl<'a> Replay<'a> {
    pub fn new(db: &'a Database, trace: &'a Trace, registry: &'a QueryRegistry, cache: &'a ReplayCache) -> Self {
        Replay {
            db,
            trace,
            registry,
            cache,
        }
    }

    fn var_type(&self, var: &str) -> Result<VarType, TraceError> {
        self.registry
            .var_type(var)
            .ok_or_else(|| TraceError::UnknownVariable(var.to_string()))
    }

    /// Value of the latest assignment to `var` at or before `step`.
    pub fn reconstruct_scalar(&self, var: &str, step: LogicalTime) -> Result<Value, TraceError> {
        if self.var_type(var)?.is_table() {
            return Err(TraceError::NotAScalar(var.to_string()));
        }
        self.scalar_unchecked(var, step)
    }

    fn scalar_unchecked(&self, var: &str, step: LogicalTime) -> Result<Value, TraceError> {
        if let Some(e) = self.trace.governing(var, step) {
            return e.scalar_value.clone().ok_or_else(|| {
                TraceError::MalformedTrace(format!("assignment at step {} has no value", e.step))
            });
        }
        match self.trace.params.get(var) {
            Some(Binding::Scalar(v)) => Ok(v.clone()),
            _ => Err(TraceError::UnboundAtStep {
                var: var.to_string(),
                step,
            }),
        }
    }

    /// Re-executes the query of the latest assignment to `var` at or before
    /// `step`, as of the assignment's time, with its arguments reconstructed
    /// just before the assignment.
    pub fn reconstruct_table(&self, var: &str, step: LogicalTime) -> Result<Relation, TraceError> {
        if !self.var_type(var)?.is_table() {
            return Err(TraceError::NotATable(var.to_string()));
        }
        Ok(self.table_shared(var, step)?.as_ref().clone())
    }

    /// Row count of `var` at `step` without cloning the relation.
    pub fn table_row_count(&self, var: &str, step: LogicalTime) -> Result<usize, TraceError> {
        if !self.var_type(var)?.is_table() {
            return Err(TraceError::NotATable(var.to_string()));
        }
        Ok(self.table_shared(var, step)?.len())
    }

    pub fn table_shared(&self, var: &str, step: LogicalTime) -> Result<Arc<Relation>, TraceError> {
        match self.trace.governing_index(var, step) {
            Some(i) => self.table_at_event(i),
            None => match self.trace.params.get(var) {
                Some(Binding::Table(r)) => Ok(Arc::new(r.clone())),
                _ => Err(TraceError::UnboundAtStep {
                    var: var.to_string(),
                    step,
                }),
            },
        }
    }

    /// Table arguments of event `idx` that resolve to earlier events.
    fn table_deps(&self, idx: usize) -> Result<Vec<usize>, TraceError> {
        let e = &self.trace.events[idx];
        let q = self.registry.get(e.query_id.as_deref().unwrap_or_default())?;
        let before = e.step.prev();
        let mut deps = Vec::new();
        for a in &q.args {
            if self.var_type(a)?.is_table() {
                if let Some(j) = self.trace.governing_index(a, before) {
                    deps.push(j);
                }
            }
        }
        Ok(deps)
    }

    /// Evaluates table assignment `idx`. Chains of self-referencing
    /// assignments can be long, so dependencies are resolved with an
    /// explicit stack rather than recursion.
    fn table_at_event(&self, idx: usize) -> Result<Arc<Relation>, TraceError> {
        let key = |i: usize| (self.trace.trace_id, i);
        if let Some(r) = self.cache.get(key(idx)) {
            return Ok(r);
        }
        let mut memo: HashMap<usize, Arc<Relation>> = HashMap::new();
        let mut stack = vec![(idx, false)];
        while let Some((i, expanded)) = stack.pop() {
            if memo.contains_key(&i) {
                continue;
            }
            if let Some(r) = self.cache.get(key(i)) {
                memo.insert(i, r);
                continue;
            }
            if !expanded {
                stack.push((i, true));
                for j in self.table_deps(i)? {
                    if j >= i {
                        return Err(TraceError::MalformedTrace(format!(
                            "step {} depends on a later assignment",
                            self.trace.events[i].step
                        )));
                    }
                    if !memo.contains_key(&j) {
                        stack.push((j, false));
                    }
                }
                continue;
            }
            let rel = Arc::new(self.evaluate_event(i, &memo)?);
            self.cache.put(key(i), rel.clone());
            memo.insert(i, rel);
        }
        Ok(memo.remove(&idx).expect("evaluated above"))
    }

    fn evaluate_event(&self, idx: usize, memo: &HashMap<usize, Arc<Relation>>) -> Result<Relation, TraceError> {
        let e = &self.trace.events[idx];
        if e.kind != EventKind::AssignTable {
            return Err(TraceError::MalformedTrace(format!(
                "step {} is not a table assignment",
                e.step
            )));
        }
        let q = self.registry.get(e.query_id.as_deref().unwrap_or_default())?;
        let before = e.step.prev();
        let mut env = Environment::new();
        for a in &q.args {
            let b = if self.var_type(a)?.is_table() {
                match self.trace.governing_index(a, before) {
                    Some(j) => Binding::Table(memo[&j].as_ref().clone()),
                    None => match self.trace.params.get(a) {
                        Some(b @ Binding::Table(_)) => b.clone(),
                        _ => {
                            return Err(TraceError::UnboundAtStep {
                                var: a.clone(),
                                step: before,
                            })
                        }
                    },
                }
            } else {
                Binding::Scalar(self.scalar_unchecked(a, before)?)
            };
            env.insert(a.clone(), b);
        }
        Ok(evaluate(self.db, &q.query, &env, e.db_time)?)
    }

    /// Reconstructs `var` at `step` as a binding of its declared kind.
    pub fn reconstruct(&self, var: &str, step: LogicalTime) -> Result<Binding, TraceError> {
        if self.var_type(var)?.is_table() {
            Ok(Binding::Table(self.table_shared(var, step)?.as_ref().clone()))
        } else {
            Ok(Binding::Scalar(self.scalar_unchecked(var, step)?))
        }
    }

    /// Every variable bound at `step`. Unbound variables are left out.
    pub fn environment_at(&self, step: LogicalTime) -> Result<Environment, TraceError> {
        let mut env = Environment::new();
        for (name, _) in &self.registry.variables {
            match self.reconstruct(name, step) {
                Ok(b) => {
                    env.insert(name.clone(), b);
                }
                Err(TraceError::UnboundAtStep { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(env)
    }

    /// The nearest assignment to `var` strictly before or after `step`.
    pub fn assignment_nav(
        &self,
        var: &str,
        step: LogicalTime,
        dir: Direction,
    ) -> Result<Option<LogicalTime>, TraceError> {
        self.var_type(var)?;
        Ok(assignment_nav(self.trace, var, step, dir))
    }
}

/// Nearest assignment step to `var` strictly before or after `step`.
pub fn assignment_nav(trace: &Trace, var: &str, step: LogicalTime, dir: Direction) -> Option<LogicalTime> {
    let idx = trace.assignments(var);
    let steps = |k: usize| trace.events[idx[k]].step;
    match dir {
        Direction::Prev => {
            let n = idx.partition_point(|&i| trace.events[i].step < step);
            (n > 0).then(|| steps(n - 1))
        }
        Direction::Next => {
            let n = idx.partition_point(|&i| trace.events[i].step <= step);
            (n < idx.len()).then(|| steps(n))
        }
    }
}
