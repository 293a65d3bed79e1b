//! Procedure interpreter.
//!
//! Every executed instruction advances the logical clock exactly once:
//! scalar and table assignments, DML statements, and each evaluation of an
//! IF or WHILE condition (including the final, failing WHILE check).
//! Declarations and trace probes do not.

use thiserror::Error;

use crate::engine::{
    evaluate, evaluate_scalar, evaluate_scalar_query, execute_dml, Binding, EngineError, Environment,
};
use crate::frontend::{Procedure, ScalarSource, Statement, StatementId, StatementKind, TraceProbe, VarType};
use crate::storage::{Database, LogicalTime, StorageError, Value, Writer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecutionConfig {
    pub max_steps: u64,
    pub tracing: bool,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        ExecutionConfig {
            max_steps: 1_000_000,
            tracing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("step limit of {0} exceeded")]
    StepLimitExceeded(u64),
    #[error("statement {statement}: {source}")]
    Statement {
        statement: StatementId,
        #[source]
        source: EngineError,
    },
    #[error("bad arguments: {0}")]
    Arguments(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("trace write failed: {0}")]
    Trace(#[from] StorageError),
}

impl RuntimeError {
    pub fn statement(&self) -> Option<StatementId> {
        match self {
            RuntimeError::Statement { statement, .. } => Some(*statement),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssignedValue {
    Scalar(Value),
    Table { rows: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Assigned { var: String, value: AssignedValue },
    DmlApplied { count: usize },
    Branched(bool),
    LoopIterated(bool),
}

/// The most recently executed instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct LastStep {
    pub step: LogicalTime,
    pub statement: StatementId,
    pub outcome: StepOutcome,
}

/// Called after every executed instruction.
pub trait StepObserver {
    fn after_step(&mut self, last: &LastStep, env: &Environment, db: &Database);
}

/// Receives trace probes inserted by instrumentation.
pub trait ProbeHandler {
    fn probe(
        &mut self,
        w: &mut Writer<'_>,
        probe: &TraceProbe,
        last: Option<&LastStep>,
        env: &Environment,
    ) -> Result<(), StorageError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub env: Environment,
    /// Number of executed instructions.
    pub steps: u64,
    /// Clock value before the first instruction.
    pub start: LogicalTime,
    /// Clock value after the last instruction.
    pub end: LogicalTime,
}

/// Runs `proc` untraced. With `cfg.tracing` set, use the tracer instead.
pub fn run(proc: &Procedure, args: Environment, db: &Database, cfg: ExecutionConfig) -> Result<RunResult, RuntimeError> {
    let mut w = db.writer();
    execute(proc, args, &mut w, cfg, None, None)
}

pub fn run_with_observer(
    proc: &Procedure,
    args: Environment,
    db: &Database,
    cfg: ExecutionConfig,
    observer: &mut dyn StepObserver,
) -> Result<RunResult, RuntimeError> {
    let mut w = db.writer();
    execute(proc, args, &mut w, cfg, Some(observer), None)
}

/// Checks arguments against the parameter list and coerces scalars to the
/// declared types. Table arguments are taken as given (a snapshot).
pub fn bind_arguments(proc: &Procedure, args: Environment) -> Result<Environment, RuntimeError> {
    let mut env = Environment::new();
    for name in args.keys() {
        if !proc.params.iter().any(|p| &p.name == name) {
            return Err(RuntimeError::Arguments(format!("unknown parameter {name}")));
        }
    }
    let mut args = args;
    for p in &proc.params {
        let arg = args
            .remove(&p.name)
            .ok_or_else(|| RuntimeError::Arguments(format!("missing argument {}", p.name)))?;
        let bound = match (p.ty, arg) {
            (VarType::Scalar(ty), Binding::Scalar(v)) => Binding::Scalar(v.coerce_to(ty).map_err(|e| {
                RuntimeError::Arguments(format!("argument {}: {e}", p.name))
            })?),
            (VarType::Table, Binding::Table(r)) => Binding::Table(r),
            (VarType::Table, _) => {
                return Err(RuntimeError::Arguments(format!("{} expects a table", p.name)))
            }
            (VarType::Scalar(_), _) => {
                return Err(RuntimeError::Arguments(format!("{} expects a scalar", p.name)))
            }
        };
        env.insert(p.name.clone(), bound);
    }
    Ok(env)
}

/// Runs `proc` on an already acquired writer. Probes are ignored unless a
/// handler is given.
pub fn execute<'o, 'p>(
    proc: &Procedure,
    args: Environment,
    w: &mut Writer<'_>,
    cfg: ExecutionConfig,
    observer: Option<&'o mut dyn StepObserver>,
    probes: Option<&'p mut dyn ProbeHandler>,
) -> Result<RunResult, RuntimeError> {
    if cfg.max_steps == 0 {
        return Err(RuntimeError::Config("max_steps must be positive".into()));
    }
    let env = bind_arguments(proc, args)?;
    let start = w.clock();
    let mut interp = Interpreter {
        w,
        env,
        types: proc.variables().into_iter().collect(),
        cfg,
        steps: 0,
        observer,
        probes,
        last: None,
    };
    interp.block(&proc.body)?;
    let end = interp.w.clock();
    Ok(RunResult {
        env: interp.env,
        steps: interp.steps,
        start,
        end,
    })
}

struct Interpreter<'a, 'o, 'p, 'd> {
    w: &'a mut Writer<'d>,
    env: Environment,
    types: std::collections::HashMap<String, VarType>,
    cfg: ExecutionConfig,
    steps: u64,
    observer: Option<&'o mut dyn StepObserver>,
    probes: Option<&'p mut dyn ProbeHandler>,
    last: Option<LastStep>,
}

impl Interpreter<'_, '_, '_, '_> {
    fn block(&mut self, stmts: &[Statement]) -> Result<(), RuntimeError> {
        for s in stmts {
            self.statement(s)?;
        }
        Ok(())
    }

    fn tick(&mut self) -> Result<LogicalTime, RuntimeError> {
        if self.steps >= self.cfg.max_steps {
            return Err(RuntimeError::StepLimitExceeded(self.cfg.max_steps));
        }
        self.steps += 1;
        Ok(self.w.advance_clock())
    }

    fn finish(&mut self, step: LogicalTime, statement: StatementId, outcome: StepOutcome) {
        let last = LastStep {
            step,
            statement,
            outcome,
        };
        if let Some(o) = self.observer.as_deref_mut() {
            o.after_step(&last, &self.env, self.w.db());
        }
        self.last = Some(last);
    }

    fn condition(&mut self, s: &Statement, cond: &crate::frontend::Expr) -> Result<(LogicalTime, bool), RuntimeError> {
        let step = self.tick()?;
        let v = evaluate_scalar(self.w.db(), cond, &self.env, step).map_err(|e| at(s, e))?;
        let b = match v {
            Value::Bool(b) => b,
            Value::Null => false,
            other => {
                return Err(at(
                    s,
                    EngineError::TypeMismatch(format!(
                        "condition must be boolean, found {}",
                        other.type_name()
                    )),
                ))
            }
        };
        Ok((step, b))
    }

    fn statement(&mut self, s: &Statement) -> Result<(), RuntimeError> {
        match &s.kind {
            StatementKind::Declare { .. } => Ok(()),
            StatementKind::Trace(p) => {
                if let Some(h) = self.probes.as_deref_mut() {
                    h.probe(self.w, p, self.last.as_ref(), &self.env)?;
                }
                Ok(())
            }
            StatementKind::AssignScalar { var, value } => {
                let step = self.tick()?;
                let db = self.w.db();
                let v = match value {
                    ScalarSource::Expr(e) => evaluate_scalar(db, e, &self.env, step),
                    ScalarSource::Query(q) => evaluate_scalar_query(db, q, &self.env, step),
                }
                .map_err(|e| at(s, e))?;
                let v = match self.types.get(var) {
                    Some(VarType::Scalar(ty)) => v.coerce_to(*ty).map_err(|e| at(s, e.into()))?,
                    _ => v,
                };
                self.env.insert(var.clone(), Binding::Scalar(v.clone()));
                self.finish(
                    step,
                    s.id,
                    StepOutcome::Assigned {
                        var: var.clone(),
                        value: AssignedValue::Scalar(v),
                    },
                );
                Ok(())
            }
            StatementKind::AssignTable { var, query } => {
                let step = self.tick()?;
                let rel = evaluate(self.w.db(), query, &self.env, step).map_err(|e| at(s, e))?;
                let rows = rel.len();
                self.env.insert(var.clone(), Binding::Table(rel));
                self.finish(
                    step,
                    s.id,
                    StepOutcome::Assigned {
                        var: var.clone(),
                        value: AssignedValue::Table { rows },
                    },
                );
                Ok(())
            }
            StatementKind::Dml(dml) => {
                if self.steps >= self.cfg.max_steps {
                    return Err(RuntimeError::StepLimitExceeded(self.cfg.max_steps));
                }
                self.steps += 1;
                let count = execute_dml(self.w, dml, &self.env).map_err(|e| at(s, e))?;
                let step = self.w.clock();
                self.finish(step, s.id, StepOutcome::DmlApplied { count });
                Ok(())
            }
            StatementKind::If {
                cond,
                then_branch,
                else_branch,
            } => {
                let (step, b) = self.condition(s, cond)?;
                self.finish(step, s.id, StepOutcome::Branched(b));
                self.block(if b { then_branch } else { else_branch })
            }
            StatementKind::While { cond, body } => loop {
                let (step, b) = self.condition(s, cond)?;
                self.finish(step, s.id, StepOutcome::LoopIterated(b));
                if !b {
                    return Ok(());
                }
                self.block(body)?;
            },
        }
    }
}

fn at(s: &Statement, source: EngineError) -> RuntimeError {
    RuntimeError::Statement {
        statement: s.id,
        source,
    }
}
