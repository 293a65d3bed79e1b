//! Timing harness: plain vs traced runs, reproducing the final state from the
//! trace, and single-step vs time-diff queries.

use std::time::Instant;

use serde::Serialize;
use tardisp_core::engine::{Binding, Environment};
use tardisp_core::frontend::{parse_procedure, parse_query, AtStep, Expr, FrontendError, Query, SyntaxError};
use tardisp_core::runtime::{run, ExecutionConfig, RuntimeError};
use tardisp_core::storage::{Database, LogicalTime, StorageError};
use tardisp_core::timetravel::{execute_time_diff, run_at_step, TimeTravelError};
use tardisp_core::tracer::{run_traced, QueryRegistry, Replay, ReplayCache, Trace, TraceError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    TimeTravel(#[from] TimeTravelError),
    #[error("{0}")]
    Setup(String),
}

pub struct BenchCase {
    pub name: String,
    pub source: String,
    pub args: Environment,
    /// Builds a fresh copy of the input database.
    pub build: Box<dyn Fn() -> Result<Database, BenchError>>,
    /// Time-diff queries. `{first}`, `{mid}` and `{last}` are replaced by
    /// the first step assigning a table variable, the middle step and the
    /// last step of the traced run.
    pub queries: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryReport {
    pub diff_sql: String,
    pub single_sql: String,
    pub steps: usize,
    pub single_rows: usize,
    pub diff_rows: usize,
    pub single_ms: f64,
    pub diff_ms: f64,
    pub diff_over_single: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseReport {
    pub case: String,
    pub base_rows: usize,
    pub steps: usize,
    pub plain_ms: f64,
    pub traced_ms: f64,
    pub reproduce_ms: f64,
    pub traced_over_plain: f64,
    pub reproduce_over_plain: f64,
    /// Whether the environment rebuilt from the trace equals the final one
    /// of the traced run, in every repetition.
    pub reproduce_matches: bool,
    pub queries: Vec<QueryReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub reps: usize,
    pub cases: Vec<CaseReport>,
    pub max_traced_over_plain: f64,
    pub max_diff_over_single: f64,
    pub all_reproduced: bool,
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => xs[n / 2],
        _ => (xs[n / 2 - 1] + xs[n / 2]) / 2.0,
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64() * 1000.0)
}

/// The same query pinned to its last named step, with step qualifiers
/// dropped.
pub fn single_step_version(q: &Query) -> Result<Query, BenchError> {
    let Some(AtStep::Named(named)) = &q.at_step else {
        return Err(BenchError::Setup("bench queries need named AT STEP clauses".into()));
    };
    let last = named.last().expect("parser requires at least one step").step;
    let mut single = q.clone();
    single.at_step = Some(AtStep::Single(last));
    single.visit_exprs_mut(&mut |e| {
        e.walk_mut(&mut |node| {
            if let Expr::Qualified { column, .. } = node {
                *node = Expr::Column(column.clone());
            }
        })
    });
    Ok(single)
}

fn fill_steps(sql: &str, trace: &Trace) -> String {
    let first_table = trace
        .events
        .iter()
        .find(|e| e.row_count.is_some() && e.var.is_some())
        .or(trace.events.first())
        .map_or(trace.start, |e| e.step);
    let last = trace.last_step().unwrap_or(trace.end);
    let mid = LogicalTime((first_table.get() + last.get()) / 2);
    sql.replace("{first}", &first_table.to_string())
        .replace("{mid}", &mid.to_string())
        .replace("{last}", &last.to_string())
}

fn same_env(a: &Environment, b: &Environment) -> bool {
    a.len() == b.len() && a.iter().all(|(k, v)| b.get(k).is_some_and(|w: &Binding| v.same_contents(w)))
}

fn base_rows(db: &Database) -> usize {
    db.table_names()
        .iter()
        .filter(|t| !tardisp_core::tracer::is_trace_table(t))
        .map(|t| db.scan_current(t).map_or(0, |r| r.len()))
        .sum()
}

pub fn run_case(case: &BenchCase, reps: usize, cfg: ExecutionConfig) -> Result<CaseReport, BenchError> {
    let proc_ = parse_procedure(&case.source)?;
    let registry = QueryRegistry::from_procedure(&proc_);
    let reps = reps.max(1);
    let mut plain = Vec::new();
    let mut traced = Vec::new();
    let mut reproduce = Vec::new();
    let mut matches = true;
    let mut q_times: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); case.queries.len()];
    let mut q_meta: Vec<(String, String, usize, usize, usize)> = Vec::new();
    let mut steps = 0;
    let mut rows = 0;

    for _ in 0..reps {
        let db = (case.build)()?;
        rows = base_rows(&db);
        let (r, ms) = timed(|| run(&proc_, case.args.clone(), &db, cfg));
        r?;
        plain.push(ms);
        drop(db);

        let db = (case.build)()?;
        let (r, ms) = timed(|| run_traced(&proc_, &case.source, case.args.clone(), &db, cfg));
        let r = r?;
        traced.push(ms);
        let final_env = r.result?.env;
        let trace = Trace::load(&db, r.trace_id)?;
        steps = trace.events.len();

        let end = trace.last_step().unwrap_or(trace.end);
        let cache = ReplayCache::default();
        let replay = Replay::new(&db, &trace, &registry, &cache);
        let (env, ms) = timed(|| replay.environment_at(end));
        reproduce.push(ms);
        matches &= same_env(&env?, &final_env);

        q_meta.clear();
        for (i, sql) in case.queries.iter().enumerate() {
            let diff_sql = fill_steps(sql, &trace);
            let diff_q = parse_query(&diff_sql)?;
            let single_q = single_step_version(&diff_q)?;

            let cache = ReplayCache::default();
            let replay = Replay::new(&db, &trace, &registry, &cache);
            let (single, ms) = timed(|| run_at_step(&replay, &single_q, None));
            let single = single?;
            q_times[i].0.push(ms);

            let cache = ReplayCache::default();
            let replay = Replay::new(&db, &trace, &registry, &cache);
            let (diff, ms) = timed(|| execute_time_diff(&replay, &diff_q));
            let diff = diff?;
            q_times[i].1.push(ms);
            let k = diff.steps.len();
            q_meta.push((
                diff_sql,
                tardisp_core::frontend::render_query(&single_q),
                k,
                single.len(),
                diff.rows.len(),
            ));
        }
    }

    let plain_ms = median(&mut plain);
    let traced_ms = median(&mut traced);
    let reproduce_ms = median(&mut reproduce);
    let queries = q_meta
        .into_iter()
        .zip(q_times.iter_mut())
        .map(|((diff_sql, single_sql, steps, single_rows, diff_rows), (s, d))| {
            let single_ms = median(s);
            let diff_ms = median(d);
            QueryReport {
                diff_sql,
                single_sql,
                steps,
                single_rows,
                diff_rows,
                single_ms,
                diff_ms,
                diff_over_single: diff_ms / single_ms,
            }
        })
        .collect();
    Ok(CaseReport {
        case: case.name.clone(),
        base_rows: rows,
        steps,
        plain_ms,
        traced_ms,
        reproduce_ms,
        traced_over_plain: traced_ms / plain_ms,
        reproduce_over_plain: reproduce_ms / plain_ms,
        reproduce_matches: matches,
        queries,
    })
}

pub fn run_bench(cases: &[BenchCase], reps: usize) -> Result<BenchReport, BenchError> {
    let cfg = ExecutionConfig::default();
    let cases = cases
        .iter()
        .map(|c| run_case(c, reps, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let max_traced_over_plain = cases.iter().map(|c| c.traced_over_plain).fold(0.0, f64::max);
    let max_diff_over_single = cases
        .iter()
        .flat_map(|c| c.queries.iter().map(|q| q.diff_over_single))
        .fold(0.0, f64::max);
    let all_reproduced = cases.iter().all(|c| c.reproduce_matches);
    Ok(BenchReport {
        reps: reps.max(1),
        cases,
        max_traced_over_plain,
        max_diff_over_single,
        all_reproduced,
    })
}

/// The generated settlement workload with `orders` rows, one case per
/// argument set.
pub fn workload_cases(orders: usize) -> Vec<BenchCase> {
    use crate::workload;
    workload::argument_sets()
        .into_iter()
        .map(|(label, args)| BenchCase {
            name: format!("settle/{label}/{orders}"),
            source: workload::SETTLE.to_string(),
            args,
            build: Box::new(move || Ok(workload::build(orders, 42))),
            queries: vec![workload::DIFF_QUERY.to_string()],
        })
        .collect()
}
