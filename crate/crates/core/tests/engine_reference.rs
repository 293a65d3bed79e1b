//! Random small queries checked against a naive evaluator.
//!
//! The reference works on its own little query model: it forms the full
//! nested-loop product of the FROM items, applies ON and WHERE with
//! three-valued logic, groups by linear search, and sorts at the end. Each
//! generated query is rendered to SQL text, parsed, and run by the engine.

use std::cmp::Ordering;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tardisp_core::engine::{evaluate, Environment};
use tardisp_core::frontend::parse_query;
use tardisp_core::storage::{DataType, Database, LogicalTime, TableDef, Value};

const TABLES: [(&str, &str, [&str; 3]); 3] = [
    ("A", "a", ["id", "x", "y"]),
    ("B", "b", ["id", "a_id", "z"]),
    ("C", "c", ["id", "b_id", "w"]),
];

#[derive(Debug, Clone, PartialEq)]
enum E {
    Col(usize, usize),
    Int(i64),
    Text(&'static str),
    Null,
    Arith(char, Box<E>, Box<E>),
    Cmp(&'static str, Box<E>, Box<E>),
    And(Box<E>, Box<E>),
    Or(Box<E>, Box<E>),
    Not(Box<E>),
    IsNull(Box<E>, bool),
    In(Box<E>, Vec<E>, bool),
    /// `EXISTS (SELECT * FROM C e WHERE e.b_id = <outer> AND e.w > k)`
    Exists(Box<E>, Option<i64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Agg {
    CountStar,
    Count,
    Sum,
    Min,
    Max,
    Avg,
}

#[derive(Debug, Clone, PartialEq)]
enum Item {
    Expr(E),
    Agg(Agg, Option<E>),
}

#[derive(Debug, Clone)]
struct Join {
    left: bool,
    table: usize,
    on: E,
}

#[derive(Debug, Clone)]
struct Q {
    joins: Vec<Join>,
    select: Vec<Item>,
    filter: Option<E>,
    group_by: Vec<E>,
    grouped: bool,
    order: Vec<(usize, bool)>,
    limit: Option<usize>,
}

// ---------------------------------------------------------------- rendering

fn render(e: &E) -> String {
    match e {
        E::Col(t, c) => format!("{}.{}", TABLES[*t].1, TABLES[*t].2[*c]),
        E::Int(i) => i.to_string(),
        E::Text(s) => format!("'{s}'"),
        E::Null => "NULL".into(),
        E::Arith(op, l, r) => format!("({} {op} {})", render(l), render(r)),
        E::Cmp(op, l, r) => format!("({} {op} {})", render(l), render(r)),
        E::And(l, r) => format!("({} AND {})", render(l), render(r)),
        E::Or(l, r) => format!("({} OR {})", render(l), render(r)),
        E::Not(x) => format!("(NOT {})", render(x)),
        E::IsNull(x, neg) => format!("({} IS {}NULL)", render(x), if *neg { "NOT " } else { "" }),
        E::In(x, list, neg) => format!(
            "({} {}IN ({}))",
            render(x),
            if *neg { "NOT " } else { "" },
            list.iter().map(render).collect::<Vec<_>>().join(", ")
        ),
        E::Exists(outer, k) => {
            let extra = k.map(|k| format!(" AND e.w > {k}")).unwrap_or_default();
            format!("EXISTS (SELECT * FROM C e WHERE e.b_id = {}{extra})", render(outer))
        }
    }
}

fn render_item(i: &Item) -> String {
    match i {
        Item::Expr(e) => render(e),
        Item::Agg(Agg::CountStar, _) => "COUNT(*)".into(),
        Item::Agg(a, Some(e)) => {
            let name = match a {
                Agg::Count => "COUNT",
                Agg::Sum => "SUM",
                Agg::Min => "MIN",
                Agg::Max => "MAX",
                Agg::Avg => "AVG",
                Agg::CountStar => unreachable!(),
            };
            format!("{name}({})", render(e))
        }
        Item::Agg(_, None) => unreachable!(),
    }
}

fn render_query(q: &Q) -> String {
    let mut s = format!(
        "SELECT {} FROM A a",
        q.select.iter().map(render_item).collect::<Vec<_>>().join(", ")
    );
    for j in &q.joins {
        let (name, alias, _) = TABLES[j.table];
        s += &format!(
            " {}JOIN {name} {alias} ON {}",
            if j.left { "LEFT " } else { "" },
            render(&j.on)
        );
    }
    if let Some(f) = &q.filter {
        s += &format!(" WHERE {}", render(f));
    }
    if !q.group_by.is_empty() {
        s += &format!(
            " GROUP BY {}",
            q.group_by.iter().map(render).collect::<Vec<_>>().join(", ")
        );
    }
    if !q.order.is_empty() {
        let keys: Vec<String> = q
            .order
            .iter()
            .map(|(i, desc)| format!("{}{}", render_item(&q.select[*i]), if *desc { " DESC" } else { "" }))
            .collect();
        s += &format!(" ORDER BY {}", keys.join(", "));
    }
    if let Some(n) = q.limit {
        s += &format!(" LIMIT {n}");
    }
    s
}

// ---------------------------------------------------------------- generation

struct Gen<'r> {
    rng: &'r mut StdRng,
    /// Tables in scope (indices into TABLES).
    scope: Vec<usize>,
}

impl Gen<'_> {
    fn int_col(&mut self) -> E {
        let t = self.scope[self.rng.gen_range(0..self.scope.len())];
        let c = match t {
            0 => [0, 1][self.rng.gen_range(0..2)],
            _ => self.rng.gen_range(0..3),
        };
        E::Col(t, c)
    }

    fn int(&mut self, depth: u32) -> E {
        match self.rng.gen_range(0..10) {
            0..=4 => self.int_col(),
            5 | 6 => E::Int(self.rng.gen_range(-2..6)),
            7 if depth > 0 => E::Null,
            _ if depth > 0 => {
                let op = ['+', '-', '*'][self.rng.gen_range(0..3)];
                E::Arith(op, Box::new(self.int(depth - 1)), Box::new(self.int(depth - 1)))
            }
            _ => self.int_col(),
        }
    }

    fn text(&mut self) -> E {
        match self.rng.gen_range(0..6) {
            0..=2 if self.scope.contains(&0) => E::Col(0, 2),
            3 => E::Null,
            _ => E::Text(["p", "q", "r"][self.rng.gen_range(0..3)]),
        }
    }

    fn cmp_op(&mut self) -> &'static str {
        ["=", "<>", "<", "<=", ">", ">="][self.rng.gen_range(0..6)]
    }

    fn boolean(&mut self, depth: u32) -> E {
        let pick = if depth == 0 { self.rng.gen_range(0..5) } else { self.rng.gen_range(0..9) };
        match pick {
            0 | 1 => {
                let op = self.cmp_op();
                E::Cmp(op, Box::new(self.int(1)), Box::new(self.int(1)))
            }
            2 => {
                let op = self.cmp_op();
                E::Cmp(op, Box::new(self.text()), Box::new(self.text()))
            }
            3 => {
                let x = if self.rng.gen_bool(0.7) { self.int(0) } else { self.text() };
                E::IsNull(Box::new(x), self.rng.gen_bool(0.5))
            }
            4 => {
                let n = self.rng.gen_range(1..4);
                let list = (0..n)
                    .map(|_| if self.rng.gen_bool(0.15) { E::Null } else { E::Int(self.rng.gen_range(-1..5)) })
                    .collect();
                E::In(Box::new(self.int(0)), list, self.rng.gen_bool(0.3))
            }
            5 => E::And(Box::new(self.boolean(depth - 1)), Box::new(self.boolean(depth - 1))),
            6 => E::Or(Box::new(self.boolean(depth - 1)), Box::new(self.boolean(depth - 1))),
            7 => E::Not(Box::new(self.boolean(depth - 1))),
            _ => {
                let k = self.rng.gen_bool(0.5).then(|| self.rng.gen_range(-1..5));
                E::Exists(Box::new(self.int_col()), k)
            }
        }
    }

    fn any(&mut self) -> E {
        match self.rng.gen_range(0..6) {
            0..=2 => self.int(2),
            3 | 4 => self.text(),
            _ => self.boolean(1),
        }
    }
}

fn gen_join(g: &mut Gen<'_>, table: usize) -> Join {
    let left = g.rng.gen_bool(0.35);
    let fk = match table {
        1 => E::Cmp("=", Box::new(E::Col(1, 1)), Box::new(E::Col(0, 0))),
        _ => {
            let target = if g.scope.contains(&1) && g.rng.gen_bool(0.7) { E::Col(1, 0) } else { E::Col(0, 0) };
            E::Cmp("=", Box::new(E::Col(2, 1)), Box::new(target))
        }
    };
    g.scope.push(table);
    let on = match g.rng.gen_range(0..6) {
        0 => {
            // No equality: forces a nested-loop join.
            let op = ["<", ">=", "<>"][g.rng.gen_range(0..3)];
            E::Cmp(op, Box::new(E::Col(table, 2)), Box::new(g.int_col()))
        }
        1 | 2 => E::And(Box::new(fk), Box::new(g.boolean(0))),
        _ => fk,
    };
    Join { left, table, on }
}

fn gen_query(rng: &mut StdRng) -> Q {
    let mut g = Gen { rng, scope: vec![0] };
    let mut joins = Vec::new();
    let n_joins = g.rng.gen_range(0..=2);
    if n_joins >= 1 {
        let t = if g.rng.gen_bool(0.7) { 1 } else { 2 };
        joins.push(gen_join(&mut g, t));
        if n_joins == 2 {
            let t = if t == 1 { 2 } else { 1 };
            joins.push(gen_join(&mut g, t));
        }
    }
    let filter = g.rng.gen_bool(0.6).then(|| g.boolean(2));
    let mode = g.rng.gen_range(0..10);
    let (select, group_by, grouped) = if mode < 6 {
        let n = g.rng.gen_range(1..=4);
        ((0..n).map(|_| Item::Expr(g.any())).collect(), Vec::new(), false)
    } else {
        let keys: Vec<E> = if mode < 9 {
            let n = g.rng.gen_range(1..=2);
            let mut keys = Vec::new();
            for _ in 0..n {
                let k = if g.rng.gen_bool(0.75) { g.int_col() } else { g.text() };
                if matches!(k, E::Col(..)) && !keys.contains(&k) {
                    keys.push(k);
                }
            }
            keys
        } else {
            Vec::new()
        };
        let mut select: Vec<Item> = keys.iter().cloned().map(Item::Expr).collect();
        let n = g.rng.gen_range(1..=3);
        for _ in 0..n {
            let agg = [Agg::CountStar, Agg::Count, Agg::Sum, Agg::Min, Agg::Max, Agg::Avg][g.rng.gen_range(0..6)];
            let arg = match agg {
                Agg::CountStar => None,
                Agg::Min | Agg::Max if g.rng.gen_bool(0.3) => Some(g.text()),
                _ => Some(g.int(1)),
            };
            select.push(Item::Agg(agg, arg));
        }
        (select, keys.clone(), true)
    };
    let mut order = Vec::new();
    if g.rng.gen_bool(0.4) {
        let i = g.rng.gen_range(0..select.len());
        order.push((i, g.rng.gen_bool(0.5)));
        if g.rng.gen_bool(0.3) {
            let j = g.rng.gen_range(0..select.len());
            if j != i {
                order.push((j, g.rng.gen_bool(0.5)));
            }
        }
    }
    let limit = g.rng.gen_bool(0.2).then(|| g.rng.gen_range(0..4));
    Q {
        joins,
        select,
        filter,
        group_by,
        grouped,
        order,
        limit,
    }
}

type Tables = [Vec<[Value; 3]>; 3];

fn gen_data(rng: &mut StdRng) -> Tables {
    let mut out: Tables = Default::default();
    for (t, rows) in out.iter_mut().enumerate() {
        let n = if rng.gen_bool(0.9) { rng.gen_range(2..=5) } else { rng.gen_range(0..2) };
        let mut ids: Vec<i64> = (1..=6).collect();
        for _ in 0..n {
            let id = ids.remove(rng.gen_range(0..ids.len()));
            let nullable_int = |rng: &mut StdRng, lo: i64, hi: i64| {
                if rng.gen_bool(0.2) {
                    Value::Null
                } else {
                    Value::Int(rng.gen_range(lo..hi))
                }
            };
            let row = match t {
                0 => [
                    Value::Int(id),
                    nullable_int(rng, -2, 5),
                    if rng.gen_bool(0.2) {
                        Value::Null
                    } else {
                        Value::text(["p", "q", "r"][rng.gen_range(0..3)])
                    },
                ],
                _ => [Value::Int(id), nullable_int(rng, 1, 5), nullable_int(rng, -2, 5)],
            };
            rows.push(row);
        }
    }
    out
}

fn load(data: &Tables) -> Database {
    let db = Database::new();
    let mut w = db.writer();
    for (t, (name, _, cols)) in TABLES.iter().enumerate() {
        let third = if t == 0 { DataType::Text } else { DataType::Int };
        w.create_table(
            TableDef::new(*name)
                .column(cols[0], DataType::Int)
                .column(cols[1], DataType::Int)
                .column(cols[2], third)
                .key(cols[0]),
        )
        .unwrap();
    }
    let at = w.advance_clock();
    for (t, (name, ..)) in TABLES.iter().enumerate() {
        w.apply_insert(name, data[t].iter().map(|r| r.to_vec()).collect(), at).unwrap();
    }
    drop(w);
    db
}

// ---------------------------------------------------------------- reference

/// One row of the product: the current row of each table, `None` when the
/// table is not joined yet or was padded by a LEFT JOIN.
type Ctx<'a> = [Option<&'a [Value; 3]>; 3];

/// Three-valued truth: `None` is unknown.
type Truth = Option<bool>;

fn col(ctx: &Ctx<'_>, t: usize, c: usize) -> Value {
    ctx[t].map_or(Value::Null, |r| r[c].clone())
}

fn eval(e: &E, ctx: &Ctx<'_>, data: &Tables) -> Value {
    match e {
        E::Col(t, c) => col(ctx, *t, *c),
        E::Int(i) => Value::Int(*i),
        E::Text(s) => Value::text(*s),
        E::Null => Value::Null,
        E::Arith(op, l, r) => match (eval(l, ctx, data), eval(r, ctx, data)) {
            (Value::Int(a), Value::Int(b)) => Value::Int(match op {
                '+' => a + b,
                '-' => a - b,
                _ => a * b,
            }),
            _ => Value::Null,
        },
        _ => match truth(e, ctx, data) {
            Some(b) => Value::Bool(b),
            None => Value::Null,
        },
    }
}

fn compare(op: &str, a: &Value, b: &Value) -> Truth {
    let o = match (a, b) {
        (Value::Int(x), Value::Int(y)) => x.cmp(y),
        (Value::Text(x), Value::Text(y)) => x.as_bytes().cmp(y.as_bytes()),
        _ => return None,
    };
    Some(match op {
        "=" => o == Ordering::Equal,
        "<>" => o != Ordering::Equal,
        "<" => o == Ordering::Less,
        "<=" => o != Ordering::Greater,
        ">" => o == Ordering::Greater,
        _ => o != Ordering::Less,
    })
}

fn truth(e: &E, ctx: &Ctx<'_>, data: &Tables) -> Truth {
    match e {
        E::Cmp(op, l, r) => compare(op, &eval(l, ctx, data), &eval(r, ctx, data)),
        E::And(l, r) => match (truth(l, ctx, data), truth(r, ctx, data)) {
            (Some(false), _) | (_, Some(false)) => Some(false),
            (Some(true), Some(true)) => Some(true),
            _ => None,
        },
        E::Or(l, r) => match (truth(l, ctx, data), truth(r, ctx, data)) {
            (Some(true), _) | (_, Some(true)) => Some(true),
            (Some(false), Some(false)) => Some(false),
            _ => None,
        },
        E::Not(x) => truth(x, ctx, data).map(|b| !b),
        E::IsNull(x, neg) => Some(eval(x, ctx, data).is_null() != *neg),
        E::In(x, list, neg) => {
            let v = eval(x, ctx, data);
            let mut result = Some(false);
            for item in list {
                match compare("=", &v, &eval(item, ctx, data)) {
                    Some(true) => {
                        result = Some(true);
                        break;
                    }
                    None => result = None,
                    Some(false) => {}
                }
            }
            if *neg {
                result.map(|b| !b)
            } else {
                result
            }
        }
        E::Exists(outer, k) => {
            let o = eval(outer, ctx, data);
            Some(data[2].iter().any(|r| {
                compare("=", &r[1], &o) == Some(true)
                    && k.map_or(true, |k| compare(">", &r[2], &Value::Int(k)) == Some(true))
            }))
        }
        E::Null => None,
        other => match eval(other, ctx, data) {
            Value::Bool(b) => Some(b),
            _ => None,
        },
    }
}

fn aggregate(agg: Agg, arg: Option<&E>, rows: &[Ctx<'_>], data: &Tables) -> Value {
    let vals: Vec<Value> = match arg {
        None => return Value::Int(rows.len() as i64),
        Some(e) => rows.iter().map(|c| eval(e, c, data)).filter(|v| !v.is_null()).collect(),
    };
    match agg {
        Agg::CountStar | Agg::Count => Value::Int(vals.len() as i64),
        _ if vals.is_empty() => Value::Null,
        Agg::Sum => Value::Int(vals.iter().map(|v| v.as_int().unwrap()).sum()),
        Agg::Avg => {
            let s: i64 = vals.iter().map(|v| v.as_int().unwrap()).sum();
            Value::Float(s as f64 / vals.len() as f64)
        }
        Agg::Min => vals.into_iter().reduce(|a, b| if compare("<", &b, &a) == Some(true) { b } else { a }).unwrap(),
        Agg::Max => vals.into_iter().reduce(|a, b| if compare(">", &b, &a) == Some(true) { b } else { a }).unwrap(),
    }
}

fn reference(q: &Q, data: &Tables) -> Vec<Vec<Value>> {
    let mut product: Vec<Ctx<'_>> = data[0].iter().map(|r| [Some(r), None, None]).collect();
    for j in &q.joins {
        let mut next = Vec::new();
        for ctx in &product {
            let mut matched = false;
            for r in &data[j.table] {
                let mut c = *ctx;
                c[j.table] = Some(r);
                if truth(&j.on, &c, data) == Some(true) {
                    next.push(c);
                    matched = true;
                }
            }
            if j.left && !matched {
                next.push(*ctx);
            }
        }
        product = next;
    }
    if let Some(f) = &q.filter {
        product.retain(|c| truth(f, c, data) == Some(true));
    }

    let rows: Vec<Vec<Value>> = if !q.grouped {
        product
            .iter()
            .map(|c| {
                q.select
                    .iter()
                    .map(|i| match i {
                        Item::Expr(e) => eval(e, c, data),
                        Item::Agg(..) => unreachable!(),
                    })
                    .collect()
            })
            .collect()
    } else {
        let mut groups: Vec<(Vec<Value>, Vec<Ctx<'_>>)> = Vec::new();
        for c in &product {
            let key: Vec<Value> = q.group_by.iter().map(|e| eval(e, c, data)).collect();
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, members)) => members.push(*c),
                None => groups.push((key, vec![*c])),
            }
        }
        if groups.is_empty() && q.group_by.is_empty() {
            groups.push((Vec::new(), Vec::new()));
        }
        groups
            .iter()
            .map(|(_, members)| {
                q.select
                    .iter()
                    .map(|i| match i {
                        Item::Expr(e) => eval(e, &members[0], data),
                        Item::Agg(a, arg) => aggregate(*a, arg.as_ref(), members, data),
                    })
                    .collect()
            })
            .collect()
    };

    let mut rows = rows;
    rows.sort_by(|a, b| {
        for &(i, desc) in &q.order {
            let o = a[i].cmp(&b[i]);
            let o = if desc { o.reverse() } else { o };
            if o != Ordering::Equal {
                return o;
            }
        }
        a.cmp(b)
    });
    if let Some(n) = q.limit {
        rows.truncate(n);
    }
    rows
}

/// Checks one generated instance per seed; returns how many had a non-empty
/// reference result.
pub fn check_seeds(seeds: std::ops::Range<u64>) -> Result<usize, String> {
    let mut nonempty = 0;
    for seed in seeds {
        let mut rng = StdRng::seed_from_u64(seed);
        let data = gen_data(&mut rng);
        let q = gen_query(&mut rng);
        let sql = render_query(&q);
        let parsed = parse_query(&sql).map_err(|e| format!("seed {seed}: {sql}: {e}"))?;
        let db = load(&data);
        let got = evaluate(&db, &parsed, &Environment::new(), LogicalTime(1))
            .map_err(|e| format!("seed {seed}: {sql}: {e}"))?;
        let want = reference(&q, &data);
        if got.rows != want {
            return Err(format!("seed {seed}: {sql}\ngot {:?}\nwant {want:?}", got.rows));
        }
        nonempty += !want.is_empty() as usize;
    }
    Ok(nonempty)
}

#[test]
fn engine_matches_reference_on_random_queries() {
    let nonempty = check_seeds(0..1000).unwrap_or_else(|e| panic!("{e}"));
    // Guard against a generator that only produces empty results.
    assert!(nonempty > 400, "only {nonempty} non-empty results");
}

#[test]
fn queries_before_population_see_nothing() {
    let mut rng = StdRng::seed_from_u64(7);
    let data = gen_data(&mut rng);
    let db = load(&data);
    let q = parse_query("SELECT a.id FROM A a").unwrap();
    assert!(evaluate(&db, &q, &Environment::new(), LogicalTime(0)).unwrap().rows.is_empty());
    let q = parse_query("SELECT COUNT(*), SUM(a.x) FROM A a").unwrap();
    let r = evaluate(&db, &q, &Environment::new(), LogicalTime(0)).unwrap();
    assert_eq!(r.rows, vec![vec![Value::Int(0), Value::Null]]);
}

