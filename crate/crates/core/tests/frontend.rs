use std::path::PathBuf;

use proptest::prelude::*;
use tardisp_core::frontend::*;
use tardisp_core::storage::Value;

const OPEN_SPEND: &str = "SELECT pr.id, pr.name, pr.budget, SUM(po.total)
FROM :selected_projects pr
JOIN PurchaseOrders po ON po.project_id = pr.id
WHERE po.status = 'open'
GROUP BY pr.id, pr.name, pr.budget
AT STEP 1623";

const OVERSPEND: &str = "SELECT pr.id, pr.name, pr.budget, SUM(po.total), po2.id, po2.status, po2.total
FROM :selectedProjects pr
JOIN PurchaseOrders po ON po.project_id = pr.id
JOIN PurchaseOrders po2 ON po2.project_id = pr.id
WHERE po.status = 'open'
  AND now!pr.budget > 0 AND after!pr.budget < 0
  AND before!po2.status != after!po2.status
GROUP BY pr.id, pr.name, pr.budget,
         po2.id, po2.status, po2.total
AT STEP before=817, now=1623, after=2043";

fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// Compares `actual` with a committed golden file. Set `UPDATE_GOLDEN=1`
/// to rewrite the files.
fn golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "golden {name} differs");
}

fn ast_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).unwrap() + "\n"
}

fn col(t: &str, c: &str) -> Expr {
    Expr::column(Some(t), c)
}

#[test]
fn open_spend_golden() {
    let q = parse_query(OPEN_SPEND).unwrap();
    assert_eq!(q.at_step, Some(AtStep::Single(1623)));
    assert_eq!(q.select.len(), 4);
    assert_eq!(q.group_by, vec![col("pr", "id"), col("pr", "name"), col("pr", "budget")]);
    let from = q.from.as_ref().unwrap();
    assert_eq!(from.base.source, Source::Variable("selected_projects".into()));
    assert_eq!(from.base.alias.as_deref(), Some("pr"));
    assert_eq!(q.variables(), vec!["selected_projects".to_string()]);
    golden("open_spend.json", &ast_json(&q));
}

#[test]
fn overspend_golden() {
    let q = parse_query(OVERSPEND).unwrap();
    let steps: Vec<(String, u64)> = match &q.at_step {
        Some(AtStep::Named(n)) => n.iter().map(|s| (s.name.clone(), s.step)).collect(),
        other => panic!("{other:?}"),
    };
    assert_eq!(
        steps,
        vec![("before".into(), 817), ("now".into(), 1623), ("after".into(), 2043)]
    );
    let mut qualifiers = Vec::new();
    q.where_clause.as_ref().unwrap().walk(&mut |e| {
        if let Expr::Qualified { step, column } = e {
            qualifiers.push(format!("{step}!{}.{}", column.table.as_deref().unwrap(), column.column));
        }
    });
    assert_eq!(
        qualifiers,
        ["now!pr.budget", "after!pr.budget", "before!po2.status", "after!po2.status"]
    );
    let conjuncts = q.where_clause.clone().unwrap().conjuncts();
    assert_eq!(conjuncts.len(), 4);
    assert_eq!(conjuncts.iter().filter(|c| c.contains_qualifier()).count(), 3);
    golden("overspend.json", &ast_json(&q));
}

#[test]
fn qualifier_binds_tighter_than_comparison() {
    let e = parse_expr("now!pr.budget > 0").unwrap();
    assert_eq!(
        e,
        Expr::binary(
            BinaryOp::Gt,
            Expr::Qualified {
                step: "now".into(),
                column: ColumnRef::new(Some("pr"), "budget")
            },
            Expr::Literal(Value::Int(0))
        )
    );
    let e = parse_expr("a!x + 1").unwrap();
    assert!(matches!(e, Expr::Binary { op: BinaryOp::Add, ref left, .. } if matches!(**left, Expr::Qualified { .. })));
}

#[test]
fn keywords_are_case_insensitive_identifiers_are_not() {
    let a = parse_query("select Id from T where x = 1 at step 4").unwrap();
    let b = parse_query("SELECT Id FROM T WHERE x = 1 AT STEP 4").unwrap();
    assert_eq!(a, b);
    let c = parse_query("SELECT id FROM T WHERE x = 1 AT STEP 4").unwrap();
    assert_ne!(a, c);
}

#[test]
fn syntax_errors_carry_position_and_expectations() {
    let e = parse_query("SELECT a\nFROM t WHERE").unwrap_err();
    assert_eq!((e.line, e.col), (2, 13));
    assert!(!e.expected.is_empty(), "{e:?}");

    let e = parse_query("SELECT a FROM t AT STEP").unwrap_err();
    assert_eq!(e.line, 1);
    assert_eq!(e.col, 24);

    let e = parse_query("SELECT a FROM t LIMIT x").unwrap_err();
    assert_eq!(e.col, 23);

    // No HAVING, no DISTINCT, no scalar subqueries.
    assert!(parse_query("SELECT a FROM t GROUP BY a HAVING COUNT(*) > 1").is_err());
    assert!(parse_query("SELECT DISTINCT a FROM t").is_err());
    assert!(parse_query("SELECT a FROM t WHERE a = (SELECT b FROM u)").is_err());
    assert!(parse_query("SELECT a FROM t WHERE EXISTS (SELECT b FROM u WHERE u.b = t.a)").is_ok());
}

#[test]
fn duplicate_step_names_are_rejected() {
    let e = parse_query("SELECT a FROM t AT STEP x=1, x=2").unwrap_err();
    assert!(e.message.contains('x'), "{e}");
}

#[test]
fn pay_orders_procedure_golden() {
    let src = std::fs::read_to_string(repo_path("fixtures/table1/pay_orders.proc")).unwrap();
    let p = parse_procedure(&src).unwrap();
    assert_eq!(p.name, "pay_orders");
    let ids: Vec<u32> = p.statements().iter().map(|s| s.id.0).collect();
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    assert_eq!(ids, sorted, "statement ids follow source order");
    let starts: Vec<usize> = p.statements().iter().map(|s| s.span.start).collect();
    assert!(starts.windows(2).all(|w| w[0] <= w[1]));
    golden("pay_orders.json", &ast_json(&p));
}

#[test]
fn procedure_errors() {
    let e = parse_procedure("PROCEDURE p() BEGIN\n  x = 1;\nEND").unwrap_err();
    match e {
        FrontendError::UndeclaredVariable { name, line, col } => {
            assert_eq!(name, "x");
            assert_eq!((line, col), (2, 3));
        }
        other => panic!("{other:?}"),
    }
    let e = parse_procedure("PROCEDURE p() BEGIN DECLARE t TABLE; t = SELECT a FROM :u; END").unwrap_err();
    assert!(matches!(e, FrontendError::UndeclaredVariable { ref name, .. } if name == "u"), "{e:?}");
    let e = parse_procedure("PROCEDURE p() BEGIN DECLARE x INT; x = 1 END").unwrap_err();
    assert!(matches!(e, FrontendError::Syntax(_)), "{e:?}");
    // AT STEP belongs to the debugger console, not to procedures.
    let e = parse_procedure("PROCEDURE p() BEGIN DECLARE t TABLE; t = SELECT a FROM u AT STEP 3; END").unwrap_err();
    assert!(matches!(e, FrontendError::Invalid { .. }), "{e:?}");
}

#[test]
fn declare_with_initializer_is_an_assignment() {
    let p = parse_procedure("PROCEDURE p() BEGIN DECLARE x INT = 1; x = x + 1; END").unwrap();
    let kinds: Vec<&StatementKind> = p.statements().iter().map(|s| &s.kind).collect();
    assert!(matches!(kinds[0], StatementKind::Declare { .. }));
    assert!(matches!(kinds[1], StatementKind::AssignScalar { .. }));
    assert!(matches!(kinds[2], StatementKind::AssignScalar { .. }));
    assert_eq!(p.statements().iter().filter(|s| s.is_instruction()).count(), 2);
}

// ------------------------------------------------------------- round trip

const IDENTS: &[&str] = &["a", "b", "po", "pr", "id", "total", "Status", "x_1", "order", "my col", "select"];

fn ident() -> impl Strategy<Value = String> {
    prop::sample::select(IDENTS).prop_map(str::to_string)
}

fn plain_ident() -> impl Strategy<Value = String> {
    prop::sample::select(&["a", "b", "po", "pr", "id", "t2", "before", "now"][..]).prop_map(str::to_string)
}

fn literal() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<i64>().prop_map(Value::Int),
        (-1000i64..1000).prop_map(Value::Int),
        prop::sample::select(vec![0.5f64, -2.25, 1e20, 3.0, 0.1, 1e-7]).prop_map(Value::Float),
        "[a-z' ]{0,6}".prop_map(Value::Text),
        any::<bool>().prop_map(Value::Bool),
        Just(Value::Null),
    ]
}

fn column_ref() -> impl Strategy<Value = ColumnRef> {
    (prop::option::of(ident()), ident()).prop_map(|(table, column)| ColumnRef { table, column })
}

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        3 => literal().prop_map(Expr::Literal),
        3 => column_ref().prop_map(Expr::Column),
        1 => (plain_ident(), column_ref()).prop_map(|(step, column)| Expr::Qualified { step, column }),
        1 => plain_ident().prop_map(Expr::Variable),
    ]
}

fn binary_op() -> impl Strategy<Value = BinaryOp> {
    use BinaryOp::*;
    prop::sample::select(vec![Or, And, Eq, NotEq, Lt, LtEq, Gt, GtEq, Add, Sub, Mul, Div, Mod, Concat])
}

fn expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            3 => (binary_op(), inner.clone(), inner.clone()).prop_map(|(op, l, r)| Expr::binary(op, l, r)),
            1 => inner.clone().prop_map(|e| Expr::Unary { op: UnaryOp::Not, expr: Box::new(e) }),
            1 => inner.clone().prop_map(|e| Expr::Unary { op: UnaryOp::Neg, expr: Box::new(e) }),
            1 => (inner.clone(), any::<bool>()).prop_map(|(e, negated)| Expr::IsNull { expr: Box::new(e), negated }),
            1 => (inner.clone(), prop::collection::vec(inner.clone(), 1..3), any::<bool>())
                .prop_map(|(e, list, negated)| Expr::InList { expr: Box::new(e), list, negated }),
            1 => prop::collection::vec(inner.clone(), 1..3)
                .prop_map(|args| Expr::Function { func: ScalarFunc::Coalesce, args }),
            1 => inner.clone().prop_map(|e| Expr::Function { func: ScalarFunc::Abs, args: vec![e] }),
            1 => (prop::sample::select(vec![AggFunc::Sum, AggFunc::Count, AggFunc::Min, AggFunc::Max, AggFunc::Avg]), inner.clone())
                .prop_map(|(func, a)| Expr::Aggregate { func, arg: Some(Box::new(a)) }),
            1 => Just(Expr::Aggregate { func: AggFunc::Count, arg: None }),
            1 => (column_ref(), inner.clone()).prop_map(|(c, w)| Expr::Exists(Box::new(Query {
                select: vec![SelectItem::Expr { expr: Expr::Column(c), alias: None }],
                from: Some(FromClause { base: TableRef { source: Source::Table("u".into()), alias: None }, joins: vec![] }),
                where_clause: Some(w),
                ..Query::default()
            }))),
        ]
    })
}

fn table_ref() -> impl Strategy<Value = TableRef> {
    (
        prop_oneof![ident().prop_map(Source::Table), ident().prop_map(Source::Variable)],
        prop::option::of(ident()),
    )
        .prop_map(|(source, alias)| TableRef { source, alias })
}

fn at_step() -> impl Strategy<Value = Option<AtStep>> {
    prop_oneof![
        2 => Just(None),
        1 => (0u64..5000).prop_map(|s| Some(AtStep::Single(s))),
        1 => prop::collection::btree_map(plain_ident(), 0u64..5000, 1..4).prop_map(|m| {
            Some(AtStep::Named(m.into_iter().map(|(name, step)| NamedStep { name, step }).collect()))
        }),
    ]
}

fn query() -> impl Strategy<Value = Query> {
    let select_item = prop_oneof![
        1 => Just(SelectItem::Wildcard),
        4 => (expr(), prop::option::of(ident())).prop_map(|(expr, alias)| SelectItem::Expr { expr, alias }),
    ];
    let join = (any::<bool>(), table_ref(), expr()).prop_map(|(left, table, on)| Join {
        kind: if left { JoinKind::Left } else { JoinKind::Inner },
        table,
        on,
    });
    let from = prop::option::of((table_ref(), prop::collection::vec(join, 0..3)).prop_map(|(base, joins)| FromClause { base, joins }));
    (
        prop::collection::vec(select_item, 1..4),
        from,
        prop::option::of(expr()),
        prop::collection::vec(expr(), 0..3),
        prop::collection::vec((expr(), any::<bool>()).prop_map(|(expr, descending)| OrderItem { expr, descending }), 0..3),
        prop::option::of(0u64..100),
        at_step(),
    )
        .prop_map(|(select, from, where_clause, group_by, order_by, limit, at_step)| Query {
            select,
            from,
            where_clause,
            group_by,
            order_by,
            limit,
            at_step,
        })
}

fn round_trip(q: Query) -> Result<(), TestCaseError> {
    let text = render_query(&q);
    let back = parse_query(&text).map_err(|e| TestCaseError::fail(format!("{text}\n{e}")))?;
    prop_assert_eq!(back, q, "{}", text);
    Ok(())
}

/// Renders and re-parses `cases` generated queries.
pub fn run_round_trip(cases: u32) -> Result<(), String> {
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::with_cases(cases)
    });
    runner.run(&query(), round_trip).map_err(|e| e.to_string())
}

/// Parses both console queries and compares them with the committed goldens.
pub fn console_queries_match_goldens() -> Result<(), String> {
    for (name, text) in [("open_spend.json", OPEN_SPEND), ("overspend.json", OVERSPEND)] {
        let q = parse_query(text).map_err(|e| format!("{name}: {e}"))?;
        let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden").join(name);
        let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        if ast_json(&q) != expected {
            return Err(format!("{name} differs from its golden"));
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn render_then_parse_is_identity(q in query()) {
        round_trip(q)?;
    }
}
