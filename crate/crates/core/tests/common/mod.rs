#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use tardisp_core::engine::{Binding, Environment};
use tardisp_core::frontend::{parse_procedure, Procedure};
use tardisp_core::runtime::{run_with_observer, ExecutionConfig, LastStep, StepObserver};
use tardisp_core::storage::{load_fixture, Database, LogicalTime, Relation, Value};
use tardisp_core::tracer::{is_trace_table, run_traced, QueryRegistry, Trace, TracedRun};

pub fn fixture_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn fixture_db(name: &str) -> Database {
    load_fixture(fixture_dir(name)).unwrap()
}

pub fn read_fixture(name: &str, file: &str) -> String {
    std::fs::read_to_string(fixture_dir(name).join(file)).unwrap()
}

pub struct Case {
    pub fixture: &'static str,
    pub file: &'static str,
    pub args: Vec<(&'static str, Value)>,
}

impl Case {
    pub fn source(&self) -> String {
        read_fixture(self.fixture, self.file)
    }

    pub fn procedure(&self) -> Procedure {
        parse_procedure(&self.source()).unwrap()
    }

    pub fn args(&self) -> Environment {
        self.args
            .iter()
            .map(|(k, v)| (k.to_string(), Binding::Scalar(v.clone())))
            .collect()
    }
}

/// The three fixture procedures: a long loop with DML, nested branches, and
/// the purchase-order example with a self-referencing table assignment.
pub fn cases() -> Vec<Case> {
    vec![
        Case {
            fixture: "loop",
            file: "accrue.proc",
            args: vec![("rounds", Value::Int(60)), ("rate", Value::Int(7))],
        },
        Case {
            fixture: "branches",
            file: "triage.proc",
            args: vec![("threshold", Value::Int(500))],
        },
        Case {
            fixture: "table1",
            file: "pay_orders.proc",
            args: vec![],
        },
    ]
}

/// Records the complete environment and every user table after each step.
#[derive(Default)]
pub struct Snapshots {
    pub envs: BTreeMap<LogicalTime, Environment>,
    pub tables: BTreeMap<LogicalTime, BTreeMap<String, Relation>>,
}

impl StepObserver for Snapshots {
    fn after_step(&mut self, last: &LastStep, env: &Environment, db: &Database) {
        self.envs.insert(last.step, env.clone());
        let tables = user_tables(db);
        self.tables.insert(last.step, tables);
    }
}

pub fn user_tables(db: &Database) -> BTreeMap<String, Relation> {
    db.table_names()
        .into_iter()
        .filter(|t| !is_trace_table(t))
        .map(|t| {
            let r = db.scan_current(&t).unwrap().sorted();
            (t, r)
        })
        .collect()
}

/// Runs `case` untraced while recording snapshots.
pub fn oracle_run(case: &Case) -> (Database, Snapshots, Environment) {
    let db = fixture_db(case.fixture);
    let mut snaps = Snapshots::default();
    let r = run_with_observer(&case.procedure(), case.args(), &db, ExecutionConfig::default(), &mut snaps).unwrap();
    (db, snaps, r.env)
}

pub struct Traced {
    pub db: Database,
    pub proc_: Procedure,
    pub run: TracedRun,
    pub trace: Trace,
    pub registry: QueryRegistry,
}

pub fn traced_run(case: &Case) -> Traced {
    let db = fixture_db(case.fixture);
    let proc_ = case.procedure();
    let run = run_traced(&proc_, &case.source(), case.args(), &db, ExecutionConfig::default()).unwrap();
    let trace = Trace::load(&db, run.trace_id).unwrap();
    let registry = QueryRegistry::from_procedure(&proc_);
    Traced {
        db,
        proc_,
        run,
        trace,
        registry,
    }
}

pub fn same_env(a: &Environment, b: &Environment) -> bool {
    a.len() == b.len() && a.iter().all(|(k, v)| b.get(k).is_some_and(|w| v.same_contents(w)))
}
