//! Compilation of query ASTs into index-resolved plans, and their execution.

use std::cmp::Ordering;
use std::collections::HashMap;

use super::{ops, Binding, EngineError, Environment};
use crate::frontend::{
    render_expr, AggFunc, BinaryOp, ColumnRef, Expr, JoinKind, Query, ScalarFunc, SelectItem, Source,
    UnaryOp,
};
use crate::storage::{Column, ColumnOrigin, DataType, Database, LogicalTime, Relation, Row, Value};

type Result<T> = std::result::Result<T, EngineError>;

/// Origins from different FROM items must never share a group.
const GROUP_STRIDE: u32 = 1024;

#[derive(Debug, Clone, PartialEq)]
struct ScopeCol {
    binding: String,
    name: String,
    ty: Option<DataType>,
    origin: Option<ColumnOrigin>,
}

#[derive(Debug, Clone, PartialEq)]
enum CExpr {
    Lit(Value),
    Col(usize),
    /// A column of an enclosing query; depth 1 is the immediate parent.
    Outer { depth: usize, idx: usize },
    Key(usize),
    Agg(usize),
    Unary(UnaryOp, Box<CExpr>),
    Binary(BinaryOp, Box<CExpr>, Box<CExpr>),
    IsNull(Box<CExpr>, bool),
    InList(Box<CExpr>, Vec<CExpr>, bool),
    Func(ScalarFunc, Vec<CExpr>),
    Exists(Box<Plan>),
}

impl CExpr {
    fn any(&self, f: &dyn Fn(&CExpr) -> bool) -> bool {
        if f(self) {
            return true;
        }
        match self {
            CExpr::Unary(_, e) | CExpr::IsNull(e, _) => e.any(f),
            CExpr::Binary(_, a, b) => a.any(f) || b.any(f),
            CExpr::InList(e, l, _) => e.any(f) || l.iter().any(|x| x.any(f)),
            CExpr::Func(_, args) => args.iter().any(|x| x.any(f)),
            _ => false,
        }
    }

    /// Whether the expression depends only on the current row's columns.
    fn is_local(&self) -> bool {
        !self.any(&|e| matches!(e, CExpr::Outer { .. } | CExpr::Exists(_) | CExpr::Key(_) | CExpr::Agg(_)))
    }

    fn max_col(&self) -> Option<usize> {
        let mut cols = Vec::new();
        self.collect_cols(&mut cols);
        cols.into_iter().max()
    }

    fn min_col(&self) -> Option<usize> {
        let mut cols = Vec::new();
        self.collect_cols(&mut cols);
        cols.into_iter().min()
    }

    fn collect_cols(&self, out: &mut Vec<usize>) {
        match self {
            CExpr::Col(i) => out.push(*i),
            CExpr::Unary(_, e) | CExpr::IsNull(e, _) => e.collect_cols(out),
            CExpr::Binary(_, a, b) => {
                a.collect_cols(out);
                b.collect_cols(out);
            }
            CExpr::InList(e, l, _) => {
                e.collect_cols(out);
                l.iter().for_each(|x| x.collect_cols(out));
            }
            CExpr::Func(_, args) => args.iter().for_each(|x| x.collect_cols(out)),
            _ => {}
        }
    }

    fn shift(&self, by: usize) -> CExpr {
        match self {
            CExpr::Col(i) => CExpr::Col(i - by),
            CExpr::Unary(op, e) => CExpr::Unary(*op, Box::new(e.shift(by))),
            CExpr::Binary(op, a, b) => CExpr::Binary(*op, Box::new(a.shift(by)), Box::new(b.shift(by))),
            CExpr::IsNull(e, n) => CExpr::IsNull(Box::new(e.shift(by)), *n),
            CExpr::InList(e, l, n) => {
                CExpr::InList(Box::new(e.shift(by)), l.iter().map(|x| x.shift(by)).collect(), *n)
            }
            CExpr::Func(f, args) => CExpr::Func(*f, args.iter().map(|x| x.shift(by)).collect()),
            other => other.clone(),
        }
    }

    fn eval(&self, cx: &Ctx) -> Result<Value> {
        match self {
            CExpr::Lit(v) => Ok(v.clone()),
            CExpr::Col(i) => Ok(cx.row[*i].clone()),
            CExpr::Outer { depth, idx } => Ok(cx.outer[cx.outer.len() - depth][*idx].clone()),
            CExpr::Key(i) => Ok(cx.keys[*i].clone()),
            CExpr::Agg(i) => Ok(cx.aggs[*i].clone()),
            CExpr::Unary(UnaryOp::Not, e) => ops::not(&e.eval(cx)?),
            CExpr::Unary(UnaryOp::Neg, e) => ops::neg(&e.eval(cx)?),
            CExpr::Binary(op, a, b) => {
                let (a, b) = (a.eval(cx)?, b.eval(cx)?);
                ops::binary(*op, &a, &b)
            }
            CExpr::IsNull(e, negated) => Ok(Value::Bool(e.eval(cx)?.is_null() != *negated)),
            CExpr::InList(e, list, negated) => {
                let needle = e.eval(cx)?;
                let items = list.iter().map(|x| x.eval(cx)).collect::<Result<Vec<_>>>()?;
                let r = ops::in_list(&needle, &items)?;
                if *negated {
                    ops::not(&r)
                } else {
                    Ok(r)
                }
            }
            CExpr::Func(f, args) => {
                let vals = args.iter().map(|x| x.eval(cx)).collect::<Result<Vec<_>>>()?;
                ops::function(*f, &vals)
            }
            CExpr::Exists(plan) => {
                let mut stack: Vec<&[Value]> = cx.outer.to_vec();
                stack.push(cx.row);
                Ok(Value::Bool(plan.exists(&stack)?))
            }
        }
    }

    fn test(&self, cx: &Ctx) -> Result<bool> {
        match self.eval(cx)? {
            Value::Bool(b) => Ok(b),
            Value::Null => Ok(false),
            other => Err(EngineError::TypeMismatch(format!(
                "condition must be boolean, found {}",
                other.type_name()
            ))),
        }
    }
}

struct Ctx<'a> {
    row: &'a [Value],
    outer: &'a [&'a [Value]],
    keys: &'a [Value],
    aggs: &'a [Value],
}

impl<'a> Ctx<'a> {
    fn row(row: &'a [Value], outer: &'a [&'a [Value]]) -> Self {
        Ctx {
            row,
            outer,
            keys: &[],
            aggs: &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct JoinPlan {
    kind: JoinKind,
    source: usize,
    /// Equi-join keys: `left[i]` over the left row, `right[i]` over the
    /// right source row alone.
    left: Vec<CExpr>,
    right: Vec<CExpr>,
    residual: Option<CExpr>,
}

#[derive(Debug, Clone, PartialEq)]
struct AggSpec {
    func: AggFunc,
    arg: Option<CExpr>,
}

#[derive(Debug, Clone, PartialEq)]
enum Projection {
    Plain(Vec<CExpr>),
    Grouped {
        keys: Vec<CExpr>,
        aggs: Vec<AggSpec>,
        items: Vec<CExpr>,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum OrderKey {
    Output(usize),
    Expr(CExpr),
}

#[derive(Debug, Clone, PartialEq)]
struct Plan {
    sources: Vec<Relation>,
    joins: Vec<JoinPlan>,
    filter: Option<CExpr>,
    projection: Projection,
    order: Vec<(OrderKey, bool)>,
    limit: Option<u64>,
    columns: Vec<Column>,
}

pub(crate) struct Planner<'a> {
    db: &'a Database,
    env: &'a Environment,
    at: LogicalTime,
}

impl<'a> Planner<'a> {
    pub fn new(db: &'a Database, env: &'a Environment, at: LogicalTime) -> Self {
        Planner { db, env, at }
    }

    pub fn run(&self, q: &Query) -> Result<Relation> {
        let plan = self.plan(q, &[])?;
        let rows = plan.run(&[])?;
        Ok(Relation::new(plan.columns, rows))
    }

    pub fn scalar(&self, e: &Expr) -> Result<Value> {
        let c = self.compile(e, &[], &[])?;
        c.eval(&Ctx::row(&[], &[]))
    }

    /// Compiles expressions over the rows of a single relation bound as
    /// `binding`, for per-row evaluation by DML.
    pub fn row_program(&self, binding: &str, columns: &[Column], exprs: &[&Expr]) -> Result<RowProgram> {
        let scope: Vec<ScopeCol> = columns
            .iter()
            .map(|c| ScopeCol {
                binding: binding.to_string(),
                name: c.name.clone(),
                ty: c.ty,
                origin: None,
            })
            .collect();
        let exprs = exprs
            .iter()
            .map(|e| self.compile(e, &scope, &[]))
            .collect::<Result<Vec<_>>>()?;
        Ok(RowProgram { exprs })
    }

    fn load(&self, source: &Source, index: usize) -> Result<Relation> {
        let offset = index as u32 * GROUP_STRIDE;
        let mut rel = match source {
            Source::Table(t) => self.db.scan_asof(t, self.at)?,
            Source::Variable(v) => match self.env.get(v) {
                Some(Binding::Table(r)) => {
                    let mut r = r.clone();
                    for c in &mut r.columns {
                        if let Some(o) = &mut c.origin {
                            o.direct = false;
                        }
                    }
                    r
                }
                Some(Binding::Scalar(_)) => return Err(EngineError::NotATable(v.clone())),
                None => return Err(EngineError::UnboundVariable(v.clone())),
            },
        };
        for c in &mut rel.columns {
            if let Some(o) = &mut c.origin {
                o.group = offset + o.group % GROUP_STRIDE;
            }
        }
        Ok(rel)
    }

    fn plan(&self, q: &Query, outer: &[&[ScopeCol]]) -> Result<Plan> {
        if q.has_qualifiers() {
            return Err(EngineError::Invalid(
                "step qualifiers are only allowed in time-diff queries".into(),
            ));
        }
        let mut sources = Vec::new();
        let mut scope: Vec<ScopeCol> = Vec::new();
        let mut joins = Vec::new();
        match &q.from {
            None => sources.push(Relation::new(Vec::new(), vec![Vec::new()])),
            Some(from) => {
                let mut seen: Vec<&str> = Vec::new();
                for (i, item) in from.items().enumerate() {
                    let name = item.binding_name();
                    if seen.contains(&name) {
                        return Err(EngineError::DuplicateAlias(name.to_string()));
                    }
                    seen.push(name);
                    let rel = self.load(&item.source, i)?;
                    let left_width = scope.len();
                    scope.extend(rel.columns.iter().map(|c| ScopeCol {
                        binding: name.to_string(),
                        name: c.name.clone(),
                        ty: c.ty,
                        origin: c.origin.clone(),
                    }));
                    if i > 0 {
                        let join = &from.joins[i - 1];
                        let on = self.compile(&join.on, &scope, outer)?;
                        joins.push(split_join(join.kind, i, on, left_width, &scope));
                    }
                    sources.push(rel);
                }
            }
        }
        let filter = q
            .where_clause
            .as_ref()
            .map(|w| self.compile(w, &scope, outer))
            .transpose()?;

        let grouped = !q.group_by.is_empty() || q.has_aggregates();
        let mut columns = Vec::new();
        let mut items = Vec::new();
        let mut keys = Vec::new();
        let mut aggs = Vec::new();
        for g in &q.group_by {
            if g.contains_aggregate() {
                return Err(EngineError::Invalid("aggregate in GROUP BY".into()));
            }
            keys.push(self.compile(g, &scope, outer)?);
        }
        for item in &q.select {
            match item {
                SelectItem::Wildcard => {
                    if grouped {
                        return Err(EngineError::Invalid("* in a grouped query".into()));
                    }
                    for (i, c) in scope.iter().enumerate() {
                        items.push(CExpr::Col(i));
                        columns.push(Column {
                            name: c.name.clone(),
                            ty: c.ty,
                            origin: c.origin.clone(),
                        });
                    }
                }
                SelectItem::Expr { expr, alias } => {
                    let c = if grouped {
                        self.compile_grouped(expr, &scope, outer, &keys, &mut aggs)?
                    } else {
                        self.compile(expr, &scope, outer)?
                    };
                    let name = alias.clone().unwrap_or_else(|| match expr {
                        Expr::Column(r) => r.column.clone(),
                        e => render_expr(e),
                    });
                    let source_col = match &c {
                        CExpr::Col(i) => Some(*i),
                        CExpr::Key(k) => match &keys[*k] {
                            CExpr::Col(i) => Some(*i),
                            _ => None,
                        },
                        _ => None,
                    };
                    let (ty, origin) = match (source_col, &c) {
                        (Some(i), _) => (scope[i].ty, scope[i].origin.clone()),
                        (None, CExpr::Lit(v)) => (v.data_type(), None),
                        (None, CExpr::Agg(a)) => {
                            let spec = &aggs[*a];
                            let arg_ty = match &spec.arg {
                                Some(CExpr::Col(i)) => scope[*i].ty,
                                _ => None,
                            };
                            let ty = match spec.func {
                                AggFunc::Count => Some(DataType::Int),
                                AggFunc::Avg => Some(DataType::Float),
                                _ => arg_ty,
                            };
                            (ty, None)
                        }
                        _ => (None, None),
                    };
                    items.push(c);
                    columns.push(Column { name, ty, origin });
                }
            }
        }

        let mut order = Vec::new();
        for o in &q.order_by {
            let by_output = match &o.expr {
                Expr::Column(ColumnRef { table: None, column }) => q.select.iter().position(|s| {
                    matches!(s, SelectItem::Expr { alias: Some(a), .. } if a == column)
                }),
                _ => None,
            }
            .or_else(|| {
                q.select
                    .iter()
                    .position(|s| matches!(s, SelectItem::Expr { expr, .. } if *expr == o.expr))
            });
            // Output positions shift when a wildcard precedes the item.
            let key = match by_output {
                Some(pos) if !q.select[..pos].iter().any(|s| matches!(s, SelectItem::Wildcard)) => {
                    OrderKey::Output(pos)
                }
                _ if grouped => {
                    OrderKey::Expr(self.compile_grouped(&o.expr, &scope, outer, &keys, &mut aggs)?)
                }
                _ => OrderKey::Expr(self.compile(&o.expr, &scope, outer)?),
            };
            order.push((key, o.descending));
        }

        let projection = if grouped {
            Projection::Grouped { keys, aggs, items }
        } else {
            Projection::Plain(items)
        };
        Ok(Plan {
            sources,
            joins,
            filter,
            projection,
            order,
            limit: q.limit,
            columns,
        })
    }

    fn compile(&self, e: &Expr, scope: &[ScopeCol], outer: &[&[ScopeCol]]) -> Result<CExpr> {
        Ok(match e {
            Expr::Literal(v) => CExpr::Lit(v.clone()),
            Expr::Column(c) => {
                if let Some(i) = resolve(c, scope)? {
                    CExpr::Col(i)
                } else {
                    let mut found = None;
                    for depth in 1..=outer.len() {
                        if let Some(idx) = resolve(c, outer[outer.len() - depth])? {
                            found = Some(CExpr::Outer { depth, idx });
                            break;
                        }
                    }
                    found.ok_or_else(|| EngineError::UnknownColumn(render_expr(e)))?
                }
            }
            Expr::Qualified { .. } => {
                return Err(EngineError::Invalid(
                    "step qualifiers are only allowed in time-diff queries".into(),
                ))
            }
            Expr::Variable(name) => match self.env.get(name) {
                Some(Binding::Scalar(v)) => CExpr::Lit(v.clone()),
                Some(Binding::Table(_)) => return Err(EngineError::NotAScalar(name.clone())),
                None => return Err(EngineError::UnboundVariable(name.clone())),
            },
            Expr::Unary { op, expr } => CExpr::Unary(*op, Box::new(self.compile(expr, scope, outer)?)),
            Expr::Binary { op, left, right } => CExpr::Binary(
                *op,
                Box::new(self.compile(left, scope, outer)?),
                Box::new(self.compile(right, scope, outer)?),
            ),
            Expr::IsNull { expr, negated } => {
                CExpr::IsNull(Box::new(self.compile(expr, scope, outer)?), *negated)
            }
            Expr::InList { expr, list, negated } => CExpr::InList(
                Box::new(self.compile(expr, scope, outer)?),
                list.iter()
                    .map(|x| self.compile(x, scope, outer))
                    .collect::<Result<_>>()?,
                *negated,
            ),
            Expr::Function { func, args } => CExpr::Func(
                *func,
                args.iter()
                    .map(|x| self.compile(x, scope, outer))
                    .collect::<Result<_>>()?,
            ),
            Expr::Aggregate { .. } => {
                return Err(EngineError::Invalid(format!(
                    "aggregate {} is not allowed here",
                    render_expr(e)
                )))
            }
            Expr::Exists(q) => {
                let mut stack = outer.to_vec();
                stack.push(scope);
                CExpr::Exists(Box::new(self.plan(q, &stack)?))
            }
        })
    }

    fn compile_grouped(
        &self,
        e: &Expr,
        scope: &[ScopeCol],
        outer: &[&[ScopeCol]],
        keys: &[CExpr],
        aggs: &mut Vec<AggSpec>,
    ) -> Result<CExpr> {
        if let Expr::Aggregate { func, arg } = e {
            let arg = match arg {
                Some(a) if a.contains_aggregate() => {
                    return Err(EngineError::Invalid("nested aggregate".into()))
                }
                Some(a) => Some(self.compile(a, scope, outer)?),
                None => None,
            };
            let spec = AggSpec { func: *func, arg };
            let idx = match aggs.iter().position(|s| *s == spec) {
                Some(i) => i,
                None => {
                    aggs.push(spec);
                    aggs.len() - 1
                }
            };
            return Ok(CExpr::Agg(idx));
        }
        if matches!(e, Expr::Exists(_)) {
            return Err(EngineError::Invalid("EXISTS in a grouped select list".into()));
        }
        if !e.contains_aggregate() {
            let c = self.compile(e, scope, outer)?;
            if let Some(i) = keys.iter().position(|k| *k == c) {
                return Ok(CExpr::Key(i));
            }
            if !c.any(&|x| matches!(x, CExpr::Col(_))) {
                return Ok(c);
            }
        }
        let mut rec = |x: &Expr| self.compile_grouped(x, scope, outer, keys, aggs);
        Ok(match e {
            Expr::Unary { op, expr } => CExpr::Unary(*op, Box::new(rec(expr)?)),
            Expr::Binary { op, left, right } => {
                let l = rec(left)?;
                CExpr::Binary(*op, Box::new(l), Box::new(rec(right)?))
            }
            Expr::IsNull { expr, negated } => CExpr::IsNull(Box::new(rec(expr)?), *negated),
            Expr::InList { expr, list, negated } => {
                let needle = rec(expr)?;
                let items = list.iter().map(&mut rec).collect::<Result<_>>()?;
                CExpr::InList(Box::new(needle), items, *negated)
            }
            Expr::Function { func, args } => {
                CExpr::Func(*func, args.iter().map(&mut rec).collect::<Result<_>>()?)
            }
            other => return Err(EngineError::NotGrouped(render_expr(other))),
        })
    }
}

fn resolve(c: &ColumnRef, scope: &[ScopeCol]) -> Result<Option<usize>> {
    let mut hits = scope.iter().enumerate().filter(|(_, s)| {
        s.name == c.column && c.table.as_ref().map_or(true, |t| *t == s.binding)
    });
    let first = hits.next().map(|(i, _)| i);
    if first.is_some() && hits.next().is_some() {
        let name = match &c.table {
            Some(t) => format!("{t}.{}", c.column),
            None => c.column.clone(),
        };
        return Err(EngineError::AmbiguousColumn(name));
    }
    Ok(first)
}

fn comparable(a: Option<DataType>, b: Option<DataType>) -> bool {
    let numeric = |t| matches!(t, DataType::Int | DataType::Float);
    match (a, b) {
        (Some(x), Some(y)) => x == y || (numeric(x) && numeric(y)),
        _ => false,
    }
}

fn expr_type(e: &CExpr, scope: &[ScopeCol]) -> Option<DataType> {
    match e {
        CExpr::Col(i) => scope[*i].ty,
        CExpr::Lit(v) => v.data_type(),
        _ => None,
    }
}

/// Splits an ON condition into hashable equi-join keys and a residual
/// predicate. Keys are used only when both sides have known, comparable
/// types, so that hashing agrees with SQL equality.
fn split_join(kind: JoinKind, source: usize, on: CExpr, left_width: usize, scope: &[ScopeCol]) -> JoinPlan {
    let mut conjuncts = Vec::new();
    let mut stack = vec![on];
    while let Some(c) = stack.pop() {
        match c {
            CExpr::Binary(BinaryOp::And, a, b) => {
                stack.push(*b);
                stack.push(*a);
            }
            other => conjuncts.push(other),
        }
    }
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut rest = Vec::new();
    for c in conjuncts {
        if let CExpr::Binary(BinaryOp::Eq, a, b) = &c {
            let side = |e: &CExpr| -> Option<bool> {
                if !e.is_local() {
                    return None;
                }
                match (e.min_col(), e.max_col()) {
                    (Some(_), Some(hi)) if hi < left_width => Some(false),
                    (Some(lo), Some(_)) if lo >= left_width => Some(true),
                    _ => None,
                }
            };
            let typed = comparable(expr_type(a, scope), expr_type(b, scope));
            match (side(a), side(b)) {
                (Some(false), Some(true)) if typed => {
                    left.push((**a).clone());
                    right.push(b.shift(left_width));
                    continue;
                }
                (Some(true), Some(false)) if typed => {
                    left.push((**b).clone());
                    right.push(a.shift(left_width));
                    continue;
                }
                _ => {}
            }
        }
        rest.push(c);
    }
    let residual = rest
        .into_iter()
        .reduce(|a, b| CExpr::Binary(BinaryOp::And, Box::new(a), Box::new(b)));
    JoinPlan {
        kind,
        source,
        left,
        right,
        residual,
    }
}

enum Acc {
    Sum(Value),
    Count(i64),
    Min(Value),
    Max(Value),
    Avg(Value, i64),
}

impl Acc {
    fn new(func: AggFunc) -> Acc {
        match func {
            AggFunc::Sum => Acc::Sum(Value::Null),
            AggFunc::Count => Acc::Count(0),
            AggFunc::Min => Acc::Min(Value::Null),
            AggFunc::Max => Acc::Max(Value::Null),
            AggFunc::Avg => Acc::Avg(Value::Null, 0),
        }
    }

    fn add_numeric(sum: &mut Value, v: Value) -> Result<()> {
        if !matches!(v, Value::Int(_) | Value::Float(_)) {
            return Err(EngineError::TypeMismatch(format!(
                "cannot sum {}",
                v.type_name()
            )));
        }
        *sum = if sum.is_null() {
            v
        } else {
            ops::binary(BinaryOp::Add, sum, &v)?
        };
        Ok(())
    }

    /// `v` is `None` for `COUNT(*)`.
    fn update(&mut self, v: Option<Value>) -> Result<()> {
        let v = match (self, v) {
            (Acc::Count(n), None) => {
                *n += 1;
                return Ok(());
            }
            (_, None) => return Ok(()),
            (_, Some(Value::Null)) => return Ok(()),
            (acc, Some(v)) => (acc, v),
        };
        match v {
            (Acc::Count(n), _) => *n += 1,
            (Acc::Sum(s), v) => Acc::add_numeric(s, v)?,
            (Acc::Avg(s, n), v) => {
                Acc::add_numeric(s, v)?;
                *n += 1;
            }
            (Acc::Min(m), v) => {
                if m.is_null() || v.sql_cmp(m)? == Some(Ordering::Less) {
                    *m = v;
                }
            }
            (Acc::Max(m), v) => {
                if m.is_null() || v.sql_cmp(m)? == Some(Ordering::Greater) {
                    *m = v;
                }
            }
        }
        Ok(())
    }

    fn finish(self) -> Value {
        match self {
            Acc::Sum(v) | Acc::Min(v) | Acc::Max(v) => v,
            Acc::Count(n) => Value::Int(n),
            Acc::Avg(_, 0) => Value::Null,
            Acc::Avg(s, n) => Value::Float(s.as_f64().unwrap_or(f64::NAN) / n as f64),
        }
    }
}

impl Plan {
    /// Joined and filtered input rows.
    fn input(&self, outer: &[&[Value]]) -> Result<Vec<Row>> {
        let base = &self.sources[0].rows;
        let filter = |row: &[Value]| -> Result<bool> {
            match &self.filter {
                Some(f) => f.test(&Ctx::row(row, outer)),
                None => Ok(true),
            }
        };
        if self.joins.is_empty() {
            let mut out = Vec::new();
            for r in base {
                if filter(r)? {
                    out.push(r.clone());
                }
            }
            return Ok(out);
        }
        let mut current: Option<Vec<Row>> = None;
        for join in &self.joins {
            let left: &[Row] = current.as_deref().unwrap_or(base);
            let joined = self.join(join, left, outer)?;
            current = Some(joined);
        }
        let mut rows = current.unwrap_or_default();
        let mut keep = Vec::with_capacity(rows.len());
        for r in &rows {
            keep.push(filter(r)?);
        }
        let mut it = keep.into_iter();
        rows.retain(|_| it.next().unwrap_or(false));
        Ok(rows)
    }

    fn join(&self, join: &JoinPlan, left: &[Row], outer: &[&[Value]]) -> Result<Vec<Row>> {
        let right = &self.sources[join.source];
        let width = right.columns.len();
        let mut out = Vec::new();
        let emit = |l: &Row, r: &Row, out: &mut Vec<Row>| -> Result<bool> {
            let mut combined = Vec::with_capacity(l.len() + r.len());
            combined.extend_from_slice(l);
            combined.extend_from_slice(r);
            let ok = match &join.residual {
                Some(p) => p.test(&Ctx::row(&combined, outer))?,
                None => true,
            };
            if ok {
                out.push(combined);
            }
            Ok(ok)
        };
        let pad = |l: &Row, out: &mut Vec<Row>| {
            let mut combined = l.clone();
            combined.extend(std::iter::repeat(Value::Null).take(width));
            out.push(combined);
        };
        if join.left.is_empty() {
            for l in left {
                let mut matched = false;
                for r in &right.rows {
                    matched |= emit(l, r, &mut out)?;
                }
                if !matched && join.kind == JoinKind::Left {
                    pad(l, &mut out);
                }
            }
            return Ok(out);
        }
        let key_of = |exprs: &[CExpr], row: &[Value]| -> Result<Option<Vec<Value>>> {
            let mut key = Vec::with_capacity(exprs.len());
            for e in exprs {
                let v = e.eval(&Ctx::row(row, outer))?;
                if v.is_null() {
                    return Ok(None);
                }
                key.push(v.canonical_key());
            }
            Ok(Some(key))
        };
        let mut table: HashMap<Vec<Value>, Vec<usize>> = HashMap::new();
        for (i, r) in right.rows.iter().enumerate() {
            if let Some(k) = key_of(&join.right, r)? {
                table.entry(k).or_default().push(i);
            }
        }
        for l in left {
            let mut matched = false;
            if let Some(k) = key_of(&join.left, l)? {
                if let Some(hits) = table.get(&k) {
                    for &i in hits {
                        matched |= emit(l, &right.rows[i], &mut out)?;
                    }
                }
            }
            if !matched && join.kind == JoinKind::Left {
                pad(l, &mut out);
            }
        }
        Ok(out)
    }

    fn exists(&self, outer: &[&[Value]]) -> Result<bool> {
        if self.limit == Some(0) {
            return Ok(false);
        }
        if let Projection::Grouped { keys, .. } = &self.projection {
            if keys.is_empty() {
                return Ok(true);
            }
        }
        Ok(!self.input(outer)?.is_empty())
    }

    fn run(&self, outer: &[&[Value]]) -> Result<Vec<Row>> {
        let input = self.input(outer)?;
        let mut out: Vec<(Vec<Value>, Row)> = Vec::new();
        let order_keys = |cx: &Ctx, projected: &Row| -> Result<Vec<Value>> {
            self.order
                .iter()
                .map(|(k, _)| match k {
                    OrderKey::Output(i) => Ok(projected[*i].clone()),
                    OrderKey::Expr(e) => e.eval(cx),
                })
                .collect()
        };
        match &self.projection {
            Projection::Plain(items) => {
                for row in &input {
                    let cx = Ctx::row(row, outer);
                    let projected = items.iter().map(|e| e.eval(&cx)).collect::<Result<Row>>()?;
                    let keys = order_keys(&cx, &projected)?;
                    out.push((keys, projected));
                }
            }
            Projection::Grouped { keys, aggs, items } => {
                let mut index: HashMap<Vec<Value>, usize> = HashMap::new();
                let mut groups: Vec<(Vec<Value>, Vec<Acc>)> = Vec::new();
                for row in &input {
                    let cx = Ctx::row(row, outer);
                    let key = keys.iter().map(|e| e.eval(&cx)).collect::<Result<Vec<_>>>()?;
                    let g = match index.get(&key) {
                        Some(&g) => g,
                        None => {
                            index.insert(key.clone(), groups.len());
                            groups.push((key, aggs.iter().map(|a| Acc::new(a.func)).collect()));
                            groups.len() - 1
                        }
                    };
                    for (acc, spec) in groups[g].1.iter_mut().zip(aggs) {
                        let v = spec.arg.as_ref().map(|a| a.eval(&cx)).transpose()?;
                        acc.update(v)?;
                    }
                }
                if groups.is_empty() && keys.is_empty() {
                    groups.push((Vec::new(), aggs.iter().map(|a| Acc::new(a.func)).collect()));
                }
                for (key, accs) in groups {
                    let values: Vec<Value> = accs.into_iter().map(Acc::finish).collect();
                    let cx = Ctx {
                        row: &[],
                        outer,
                        keys: &key,
                        aggs: &values,
                    };
                    let projected = items.iter().map(|e| e.eval(&cx)).collect::<Result<Row>>()?;
                    let okeys = order_keys(&cx, &projected)?;
                    out.push((okeys, projected));
                }
            }
        }
        out.sort_by(|(ka, ra), (kb, rb)| {
            for ((a, b), (_, desc)) in ka.iter().zip(kb).zip(&self.order) {
                let o = a.cmp(b);
                let o = if *desc { o.reverse() } else { o };
                if o != Ordering::Equal {
                    return o;
                }
            }
            ra.cmp(rb)
        });
        let mut rows: Vec<Row> = out.into_iter().map(|(_, r)| r).collect();
        if let Some(n) = self.limit {
            rows.truncate(n as usize);
        }
        Ok(rows)
    }
}

/// Expressions compiled against the columns of one relation.
pub(crate) struct RowProgram {
    exprs: Vec<CExpr>,
}

impl RowProgram {
    pub fn eval(&self, i: usize, row: &[Value]) -> Result<Value> {
        self.exprs[i].eval(&Ctx::row(row, &[]))
    }

    pub fn test(&self, i: usize, row: &[Value]) -> Result<bool> {
        self.exprs[i].test(&Ctx::row(row, &[]))
    }
}
