//! Random write sequences checked against a model that keeps a full copy of
//! the table after every write.

use std::collections::BTreeMap;

use proptest::prelude::*;
use tardisp_core::storage::{DataType, Database, LogicalTime, StorageError, TableDef, Value};

#[derive(Debug, Clone)]
enum Op {
    Insert(Vec<(i64, i64)>),
    Update { m: i64, r: i64, delta: i64, shift: i64 },
    Delete { m: i64, r: i64 },
}

#[derive(Debug, Clone)]
struct Step {
    advance: bool,
    op: Op,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => prop::collection::vec((0i64..10, -50i64..50), 0..4).prop_map(Op::Insert),
        2 => (1i64..4, 0i64..3, -5i64..5, prop::sample::select(vec![0i64, 0, 0, 1, -1, 3]))
            .prop_map(|(m, r, delta, shift)| Op::Update { m, r: r % m, delta, shift }),
        1 => (1i64..4, 0i64..3).prop_map(|(m, r)| Op::Delete { m, r: r % m }),
    ]
}

fn steps() -> impl Strategy<Value = Vec<Step>> {
    prop::collection::vec(
        (prop::bool::weighted(0.85), op()).prop_map(|(advance, op)| Step { advance, op }),
        1..25,
    )
}

type Snapshot = BTreeMap<i64, (i64, String)>;

/// Current rows with the time each was last written.
#[derive(Default)]
struct Model {
    rows: BTreeMap<i64, (i64, String, u64)>,
}

impl Model {
    fn snapshot(&self) -> Snapshot {
        self.rows.iter().map(|(k, (v, s, _))| (*k, (*v, s.clone()))).collect()
    }

    /// Applies `op` at time `at`; returns false if the write must be rejected
    /// (in which case nothing changes).
    fn apply(&mut self, op: &Op, at: u64) -> bool {
        let matches = |k: i64, m: i64, r: i64| k.rem_euclid(m) == r;
        match op {
            Op::Insert(rows) => {
                let mut seen = Vec::new();
                for (k, _) in rows {
                    if self.rows.contains_key(k) || seen.contains(k) {
                        return false;
                    }
                    seen.push(*k);
                }
                for (k, v) in rows {
                    self.rows.insert(*k, (*v, format!("r{k}"), at));
                }
                true
            }
            Op::Update { m, r, delta, shift } => {
                let hit: Vec<i64> = self.rows.keys().copied().filter(|&k| matches(k, *m, *r)).collect();
                if hit.iter().any(|k| self.rows[k].2 >= at) {
                    return false;
                }
                let mut new_keys = Vec::new();
                for k in &hit {
                    let nk = k + shift;
                    let clashes = self.rows.contains_key(&nk) && !hit.contains(&nk);
                    if clashes || new_keys.contains(&nk) {
                        return false;
                    }
                    new_keys.push(nk);
                }
                let old: Vec<(i64, String)> = hit
                    .iter()
                    .map(|k| {
                        let (v, s, _) = self.rows.remove(k).unwrap();
                        (v, s)
                    })
                    .collect();
                for (nk, (v, s)) in new_keys.into_iter().zip(old) {
                    self.rows.insert(nk, (v + delta, s, at));
                }
                true
            }
            Op::Delete { m, r } => {
                let hit: Vec<i64> = self.rows.keys().copied().filter(|&k| matches(k, *m, *r)).collect();
                if hit.iter().any(|k| self.rows[k].2 >= at) {
                    return false;
                }
                for k in hit {
                    self.rows.remove(&k);
                }
                true
            }
        }
    }
}

fn table() -> TableDef {
    TableDef::new("T")
        .column("k", DataType::Int)
        .column("v", DataType::Int)
        .column("s", DataType::Text)
        .key("k")
}

fn apply_db(db: &Database, op: &Op, advance: bool) -> (LogicalTime, Result<usize, StorageError>) {
    let mut w = db.writer();
    let at = if advance { w.advance_clock() } else { w.clock() };
    let matches = |row: &[Value], m: i64, r: i64| row[0].as_int().unwrap().rem_euclid(m) == r;
    let res = match op {
        Op::Insert(rows) => w.apply_insert(
            "T",
            rows.iter()
                .map(|(k, v)| vec![Value::Int(*k), Value::Int(*v), Value::text(format!("r{k}"))])
                .collect(),
            at,
        ),
        Op::Update { m, r, delta, shift } => w.apply_update::<StorageError, _>("T", at, |row| {
            if !matches(row, *m, *r) {
                return Ok(None);
            }
            Ok(Some(vec![
                Value::Int(row[0].as_int().unwrap() + shift),
                Value::Int(row[1].as_int().unwrap() + delta),
                row[2].clone(),
            ]))
        }),
        Op::Delete { m, r } => w.apply_delete::<StorageError, _>("T", at, |row| Ok(matches(row, *m, *r))),
    };
    (at, res)
}

fn scan(db: &Database, at: u64) -> Snapshot {
    db.scan_asof("T", LogicalTime(at))
        .unwrap()
        .rows
        .into_iter()
        .map(|r| {
            (
                r[0].as_int().unwrap(),
                (r[1].as_int().unwrap(), r[2].as_str().unwrap().to_string()),
            )
        })
        .collect()
}

fn check_history(steps: &[Step]) -> Result<(), TestCaseError> {
    let db = Database::new();
    db.writer().create_table(table()).unwrap();
    let mut model = Model::default();
    // Snapshot valid from each time on, until the next entry.
    let mut history: BTreeMap<u64, Snapshot> = BTreeMap::new();
    history.insert(0, Snapshot::new());

    for s in steps {
        let (at, res) = apply_db(&db, &s.op, s.advance);
        let accepted = model.apply(&s.op, at.get());
        prop_assert_eq!(res.is_ok(), accepted, "step {:?} at {}: {:?}", s, at, res);
        history.insert(at.get(), model.snapshot());
    }

    let clock = db.clock().get();
    for t in 0..=clock + 1 {
        let expected = history.range(..=t).next_back().map(|(_, s)| s.clone()).unwrap();
        prop_assert_eq!(scan(&db, t), expected, "as of {}", t);
    }
    let current: Snapshot = db
        .scan_current("T")
        .unwrap()
        .rows
        .into_iter()
        .map(|r| (r[0].as_int().unwrap(), (r[1].as_int().unwrap(), r[2].as_str().unwrap().to_string())))
        .collect();
    prop_assert_eq!(current, model.snapshot());
    Ok(())
}

/// Runs `cases` random write sequences against the snapshot model.
pub fn run_storage_oracle(cases: u32) -> Result<(), String> {
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::with_cases(cases)
    });
    runner.run(&steps(), |s| check_history(&s)).map_err(|e| e.to_string())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn scan_asof_matches_snapshots(steps in steps()) {
        check_history(&steps)?;
    }

    #[test]
    fn versions_are_never_rewritten(steps in steps()) {
        let db = Database::new();
        db.writer().create_table(table()).unwrap();
        let mut seen: Vec<(LogicalTime, Option<LogicalTime>, Vec<Value>)> = Vec::new();
        for s in &steps {
            let _ = apply_db(&db, &s.op, s.advance);
            let versions = db.versions("T").unwrap();
            prop_assert!(versions.len() >= seen.len());
            for (old, new) in seen.iter().zip(&versions) {
                // Only an open end may be closed; nothing else changes.
                prop_assert_eq!(old.0, new.valid_from);
                prop_assert_eq!(&old.2, &new.values);
                if old.1.is_some() {
                    prop_assert_eq!(old.1, new.valid_to);
                }
            }
            for v in &versions {
                if let Some(to) = v.valid_to {
                    prop_assert!(v.valid_from < to);
                }
            }
            seen = versions.into_iter().map(|v| (v.valid_from, v.valid_to, v.values)).collect();
        }
    }
}

#[test]
fn versions_by_key_follows_key_changes() {
    let db = Database::new();
    let mut w = db.writer();
    w.create_table(table()).unwrap();
    let t = w.advance_clock();
    w.apply_insert("T", vec![vec![Value::Int(1), Value::Int(0), Value::text("a")]], t).unwrap();
    let t = w.advance_clock();
    w.apply_update::<StorageError, _>("T", t, |r| {
        Ok(Some(vec![Value::Int(2), r[1].clone(), r[2].clone()]))
    })
    .unwrap();
    let t = w.advance_clock();
    w.apply_insert("T", vec![vec![Value::Int(1), Value::Int(9), Value::text("b")]], t).unwrap();
    let one: Vec<u64> = db
        .versions_by_key("T", &[Value::Int(1)])
        .unwrap()
        .iter()
        .map(|v| v.valid_from.get())
        .collect();
    assert_eq!(one, vec![1, 3]);
    let two = db.versions_by_key("T", &[Value::Int(2)]).unwrap();
    assert_eq!(two.len(), 1);
    assert_eq!(two[0].valid_from, LogicalTime(2));
}
