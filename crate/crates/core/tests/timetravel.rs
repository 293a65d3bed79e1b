mod common;

use std::collections::BTreeMap;

use common::*;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tardisp_core::engine::{evaluate, Environment};
use tardisp_core::frontend::{parse_ddl, parse_procedure, parse_query};
use tardisp_core::runtime::ExecutionConfig;
use tardisp_core::storage::{Database, LogicalTime, Relation, Value};
use tardisp_core::timetravel::{
    execute_query, execute_time_diff, find_change_origin, run_at_step, StepValue, TimeTravelError,
    TimeTravelResult,
};
use tardisp_core::tracer::{run_traced, QueryRegistry, Replay, ReplayCache, Trace};

fn p(v: impl Into<Value>) -> StepValue {
    StepValue::Present(v.into())
}

#[test]
fn purchase_order_diff() {
    let t = traced_run(&cases()[2]);
    let cache = ReplayCache::default();
    let replay = Replay::new(&t.db, &t.trace, &t.registry, &cache);
    let q = parse_query(&read_fixture("table1", "overspend.sql")).unwrap();
    let d = execute_time_diff(&replay, &q).unwrap();
    assert_eq!(d.step_names, vec!["before", "now", "after"]);
    assert_eq!(d.steps, vec![LogicalTime(3), LogicalTime(10), LogicalTime(17)]);
    assert_eq!(d.key_columns.len(), 2);
    assert_eq!(d.value_columns.len(), 5);
    assert_eq!(d.rows.len(), 2);

    let keys: Vec<Vec<Value>> = d.rows.iter().map(|r| r.key.clone()).collect();
    assert_eq!(keys, vec![vec![Value::Int(1), Value::Int(1)], vec![Value::Int(1), Value::Int(2)]]);
    for row in &d.rows {
        let budget = &row.cells[1];
        assert_eq!(budget.values, vec![p(1200), p(200), p(-300)]);
        assert_eq!(budget.changed_from_prev, vec![true, true]);
        let open_total = &row.cells[2];
        assert_eq!(open_total.values, vec![p(1500), p(500), p(0)]);
        assert_eq!(row.cells[0].changed_from_prev, vec![false, false]);
    }
    let first = &d.rows[0].cells[3];
    assert_eq!(first.values, vec![p("open"), p("paid"), p("paid")]);
    assert_eq!(first.changed_from_prev, vec![true, false]);
    assert_eq!(first.jump_step, Some(LogicalTime(8)));
    let second = &d.rows[1].cells[3];
    assert_eq!(second.values, vec![p("open"), p("open"), p("paid")]);
    assert_eq!(second.changed_from_prev, vec![false, true]);
    assert_eq!(second.jump_steps, vec![None, Some(LogicalTime(15))]);
    assert_eq!(second.jump_step, Some(LogicalTime(15)));
    assert_eq!(d.rows[1].cells[4].values, vec![p(500), p(500), p(500)]);
}

#[test]
fn single_step_query_on_a_variable() {
    let t = traced_run(&cases()[2]);
    let cache = ReplayCache::default();
    let replay = Replay::new(&t.db, &t.trace, &t.registry, &cache);
    let q = parse_query(&read_fixture("table1", "open_spend.sql")).unwrap();
    let r = run_at_step(&replay, &q, None).unwrap();
    assert_eq!(
        r.rows,
        vec![vec![Value::Int(1), Value::text("Project 1"), Value::Int(1200), Value::Int(1500)]]
    );
    // Unqualified queries fall back to the given step.
    let mut q2 = q.clone();
    q2.at_step = None;
    let r = run_at_step(&replay, &q2, Some(LogicalTime(10))).unwrap();
    assert_eq!(r.rows[0][2], Value::Int(200));
    assert_eq!(r.rows[0][3], Value::Int(500));
}

#[test]
fn final_step_equals_plain_evaluation() {
    for case in cases() {
        let t = traced_run(&case);
        let cache = ReplayCache::default();
        let replay = Replay::new(&t.db, &t.trace, &t.registry, &cache);
        let end = t.trace.end;
        let final_env = &t.run.result.as_ref().unwrap().env;
        for table in user_tables(&t.db).keys() {
            let q = parse_query(&format!("SELECT * FROM {table} AT STEP {end}")).unwrap();
            let got = run_at_step(&replay, &q, None).unwrap();
            assert_eq!(got.sorted().rows, t.db.scan_current(table).unwrap().sorted().rows, "{table}");
            let q = parse_query(&format!("SELECT * FROM {table} AT STEP 0")).unwrap();
            assert!(run_at_step(&replay, &q, None).unwrap().is_empty());
        }
        for (var, ty) in t.proc_.variables() {
            if ty.is_table() {
                let q = parse_query(&format!("SELECT * FROM :{var}")).unwrap();
                let got = run_at_step(&replay, &q, Some(end)).unwrap();
                let expected = final_env[&var].as_table().unwrap();
                assert_eq!(got.sorted().rows, expected.clone().sorted().rows, "{var}");
            }
        }
    }
}

#[test]
fn errors() {
    let t = traced_run(&cases()[2]);
    let cache = ReplayCache::default();
    let replay = Replay::new(&t.db, &t.trace, &t.registry, &cache);
    let run = |sql: &str| execute_query(&replay, &parse_query(sql).unwrap(), Some(LogicalTime(5)));

    assert_eq!(
        run("SELECT id FROM Projects AT STEP 19").unwrap_err(),
        TimeTravelError::UnknownStep { step: 19, last: 18 }
    );
    assert!(matches!(
        run("SELECT id FROM Projects AT STEP a=3, b=40"),
        Err(TimeTravelError::UnknownStep { step: 40, .. })
    ));
    assert_eq!(
        run("SELECT id, budget FROM Projects WHERE c!budget > 0 AT STEP a=3, b=4").unwrap_err(),
        TimeTravelError::UnknownStepName("c".into())
    );
    assert_eq!(
        run("SELECT budget FROM Projects AT STEP a=3, b=4").unwrap_err(),
        TimeTravelError::NoKeyColumns
    );
    assert!(matches!(
        run("SELECT id FROM Projects WHERE a!budget > 0 AT STEP 3"),
        Err(TimeTravelError::Invalid(_))
    ));
    // A variable before its first assignment.
    assert!(matches!(
        run("SELECT * FROM :selected_projects AT STEP 1"),
        Err(TimeTravelError::Trace(_))
    ));
}

#[test]
fn equal_steps_degenerate_to_one_query() {
    let t = traced_run(&cases()[0]);
    let cache = ReplayCache::default();
    let replay = Replay::new(&t.db, &t.trace, &t.registry, &cache);
    for step in [5u64, 40, 200, t.trace.end.get()] {
        let single = run_at_step(
            &replay,
            &parse_query(&format!("SELECT a.id, a.balance FROM :rich a AT STEP {step}")).unwrap(),
            None,
        )
        .unwrap()
        .sorted();
        let q = parse_query(&format!("SELECT a.id, a.balance FROM :rich a AT STEP x={step}, y={step}")).unwrap();
        let d = execute_time_diff(&replay, &q).unwrap();
        assert_eq!(d.rows.len(), single.len());
        for (row, expected) in d.rows.iter().zip(&single.rows) {
            assert_eq!(row.key, vec![expected[0].clone()]);
            let c = &row.cells[0];
            assert_eq!(c.values, vec![p(expected[1].clone()), p(expected[1].clone())]);
            assert_eq!(c.changed_from_prev, vec![false]);
            assert_eq!(c.jump_step, None);
        }
    }
}

/// A small run over `T(id, v)` that inserts, updates and deletes rows.
struct Shuffle {
    db: Database,
    trace: Trace,
    registry: QueryRegistry,
}

fn shuffle_run() -> Shuffle {
    let src = "PROCEDURE shuffle() BEGIN DECLARE i INT = 0;
      WHILE i < 12 DO
        i = i + 1;
        IF i % 4 = 0 THEN DELETE FROM T WHERE id = :i - 2;
        ELSEIF i % 3 = 0 THEN UPDATE T SET v = v * 2 WHERE id < :i;
        ELSE INSERT INTO T (id, v) VALUES (:i, :i * 10);
        END IF;
      END WHILE; END";
    let db = Database::new();
    {
        let mut w = db.writer();
        for def in parse_ddl("CREATE TABLE T (id INT PRIMARY KEY, v INT);").unwrap() {
            w.create_table(def).unwrap();
        }
    }
    let proc_ = parse_procedure(src).unwrap();
    let run = run_traced(&proc_, src, Environment::new(), &db, ExecutionConfig::default()).unwrap();
    run.result.unwrap();
    let trace = Trace::load(&db, run.trace_id).unwrap();
    Shuffle {
        db,
        trace,
        registry: QueryRegistry::from_procedure(&proc_),
    }
}

fn by_key(r: &Relation) -> BTreeMap<i64, Value> {
    r.rows.iter().map(|row| (row[0].as_int().unwrap(), row[1].clone())).collect()
}

#[test]
fn row_present_only_at_the_last_step() {
    let s = shuffle_run();
    let cache = ReplayCache::default();
    let replay = Replay::new(&s.db, &s.trace, &s.registry, &cache);
    // Row 5 is inserted in the fifth iteration; check steps around it.
    let born = s.db.versions_by_key("T", &[Value::Int(5)]).unwrap()[0].valid_from.get();
    let q = parse_query(&format!("SELECT id, v FROM T AT STEP a={}, b={}, c={}", born - 3, born - 1, born)).unwrap();
    let d = execute_time_diff(&replay, &q).unwrap();
    let row = d.rows.iter().find(|r| r.key == vec![Value::Int(5)]).unwrap();
    assert_eq!(row.cells[0].values, vec![StepValue::Absent, StepValue::Absent, p(50)]);
    assert_eq!(row.cells[0].changed_from_prev, vec![false, true]);
    assert_eq!(row.cells[0].jump_step, Some(LogicalTime(born)));
}

fn brute_force_diff(
    replay: &Replay<'_>,
    steps: &[u64],
    filter: Option<(usize, i64)>,
) -> BTreeMap<i64, Vec<StepValue>> {
    let per_step: Vec<BTreeMap<i64, Value>> = steps
        .iter()
        .map(|s| by_key(&run_at_step(replay, &parse_query(&format!("SELECT id, v FROM T AT STEP {s}")).unwrap(), None).unwrap()))
        .collect();
    let mut keys: Vec<i64> = per_step.iter().flat_map(|m| m.keys().copied()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| match filter {
            None => true,
            Some((i, bound)) => per_step[i].get(k).and_then(Value::as_int).is_some_and(|v| v > bound),
        })
        .map(|k| {
            let vals = per_step.iter().map(|m| m.get(&k).map_or(StepValue::Absent, |v| p(v.clone()))).collect();
            (k, vals)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn diff_matches_per_step_join(
        raw_steps in prop::collection::vec(0u64..200, 2..5),
        filter in prop::option::of((0usize..4, 0i64..200)),
    ) {
        thread_local!(static RUN: Shuffle = shuffle_run());
        RUN.with(|s| {
            let cache = ReplayCache::default();
            let replay = Replay::new(&s.db, &s.trace, &s.registry, &cache);
            let end = s.trace.end.get();
            let steps: Vec<u64> = raw_steps.iter().map(|x| x % (end + 1)).collect();
            let filter = filter.map(|(i, b)| (i % steps.len(), b));
            let names: Vec<String> = (0..steps.len()).map(|i| format!("s{i}")).collect();
            let at: Vec<String> = names.iter().zip(&steps).map(|(n, s)| format!("{n}={s}")).collect();
            let filter_sql = filter.map_or(String::new(), |(i, b)| format!(" WHERE s{i}!v > {b}"));
            let q = parse_query(&format!("SELECT id, v FROM T{filter_sql} AT STEP {}", at.join(", "))).unwrap();
            let d = execute_time_diff(&replay, &q).unwrap();
            let expected = brute_force_diff(&replay, &steps, filter);
            let got: BTreeMap<i64, Vec<StepValue>> = d.rows.iter()
                .map(|r| (r.key[0].as_int().unwrap(), r.cells[0].values.clone()))
                .collect();
            prop_assert_eq!(&got, &expected);
            for r in &d.rows {
                let c = &r.cells[0];
                let flags: Vec<bool> = c.values.windows(2).map(|w| w[0] != w[1]).collect();
                prop_assert_eq!(&c.changed_from_prev, &flags);
                // An attributed change lies inside its pair of steps and shows up there.
                for (i, j) in c.jump_steps.iter().enumerate() {
                    if let Some(j) = j {
                        prop_assert!(c.changed_from_prev[i]);
                        let (lo, hi) = (steps[i].min(steps[i + 1]), steps[i].max(steps[i + 1]));
                        prop_assert!(lo < j.get() && j.get() <= hi);
                        let before = by_key(&s.db.scan_asof("T", LogicalTime(j.get() - 1)).unwrap());
                        let after = by_key(&s.db.scan_asof("T", *j).unwrap());
                        let k = r.key[0].as_int().unwrap();
                        prop_assert_ne!(before.get(&k), after.get(&k));
                    }
                }
            }
            Ok(())
        })?;
    }
}

/// Earliest time in (lo, hi] at which the value differs from the time before.
fn origin_oracle(db: &Database, table: &str, key: i64, col: usize, lo: u64, hi: u64) -> Option<u64> {
    let value_at = |t: u64| {
        db.scan_asof(table, LogicalTime(t))
            .unwrap()
            .rows
            .into_iter()
            .find(|r| r[0] == Value::Int(key))
            .map(|r| r[col].clone())
    };
    (lo + 1..=hi).find(|&t| value_at(t).is_some() && value_at(t) != value_at(t - 1))
}

#[test]
fn change_origin_matches_scan_oracle() {
    let t = traced_run(&cases()[0]);
    let end = t.trace.end.get();
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..300 {
        let key = rng.gen_range(1..=5);
        let lo = rng.gen_range(0..end);
        let hi = rng.gen_range(lo..=end);
        let got = find_change_origin(&t.db, "Accounts", &[Value::Int(key)], "balance", LogicalTime(lo), LogicalTime(hi))
            .unwrap()
            .map(|t| t.get());
        assert_eq!(got, origin_oracle(&t.db, "Accounts", key, 2, lo, hi), "key {key} in ({lo}, {hi}]");
    }
    let s = shuffle_run();
    let end = s.trace.end.get();
    for key in 1..=12 {
        for lo in 0..end {
            let got = find_change_origin(&s.db, "T", &[Value::Int(key)], "v", LogicalTime(lo), LogicalTime(end))
                .unwrap()
                .map(|t| t.get());
            assert_eq!(got, origin_oracle(&s.db, "T", key, 1, lo, end), "key {key} from {lo}");
        }
    }
}

#[test]
fn console_results_have_the_right_shape() {
    let t = traced_run(&cases()[2]);
    let cache = ReplayCache::default();
    let replay = Replay::new(&t.db, &t.trace, &t.registry, &cache);
    let q = parse_query("SELECT id, budget FROM Projects AT STEP a=3, b=17").unwrap();
    assert!(matches!(execute_query(&replay, &q, None).unwrap(), TimeTravelResult::Diff(_)));
    let q = parse_query("SELECT id, budget FROM Projects").unwrap();
    match execute_query(&replay, &q, Some(LogicalTime(7))).unwrap() {
        TimeTravelResult::Relation(r) => {
            let plain = evaluate(&t.db, &q, &Environment::new(), LogicalTime(7)).unwrap();
            assert_eq!(r, plain);
            assert_eq!(r.rows[0][1], Value::Int(200));
        }
        other => panic!("{other:?}"),
    }
}
