use serde::Serialize;

use crate::storage::{DataType, Value};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ColumnRef {
    pub table: Option<String>,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: Option<&str>, column: &str) -> Self {
        ColumnRef {
            table: table.map(str::to_string),
            column: column.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum BinaryOp {
    Or,
    And,
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Concat,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Or => "OR",
            BinaryOp::And => "AND",
            BinaryOp::Eq => "=",
            BinaryOp::NotEq => "!=",
            BinaryOp::Lt => "<",
            BinaryOp::LtEq => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::GtEq => ">=",
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Mod => "%",
            BinaryOp::Concat => "||",
        }
    }

    /// Binding strength; higher binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            BinaryOp::Eq
            | BinaryOp::NotEq
            | BinaryOp::Lt
            | BinaryOp::LtEq
            | BinaryOp::Gt
            | BinaryOp::GtEq => 4,
            BinaryOp::Add | BinaryOp::Sub | BinaryOp::Concat => 5,
            BinaryOp::Mul | BinaryOp::Div | BinaryOp::Mod => 6,
        }
    }

    pub fn is_comparison(self) -> bool {
        self.precedence() == 4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum AggFunc {
    Sum,
    Count,
    Min,
    Max,
    Avg,
}

impl AggFunc {
    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Sum => "SUM",
            AggFunc::Count => "COUNT",
            AggFunc::Min => "MIN",
            AggFunc::Max => "MAX",
            AggFunc::Avg => "AVG",
        }
    }

    pub fn from_name(name: &str) -> Option<AggFunc> {
        match name.to_ascii_uppercase().as_str() {
            "SUM" => Some(AggFunc::Sum),
            "COUNT" => Some(AggFunc::Count),
            "MIN" => Some(AggFunc::Min),
            "MAX" => Some(AggFunc::Max),
            "AVG" => Some(AggFunc::Avg),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ScalarFunc {
    Coalesce,
    Abs,
}

impl ScalarFunc {
    pub fn name(self) -> &'static str {
        match self {
            ScalarFunc::Coalesce => "COALESCE",
            ScalarFunc::Abs => "ABS",
        }
    }

    pub fn from_name(name: &str) -> Option<ScalarFunc> {
        match name.to_ascii_uppercase().as_str() {
            "COALESCE" => Some(ScalarFunc::Coalesce),
            "ABS" => Some(ScalarFunc::Abs),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Expr {
    Literal(Value),
    Column(ColumnRef),
    /// `step!table.column`: a column read at a named step of a time-diff query.
    Qualified { step: String, column: ColumnRef },
    /// `:name`, a scalar procedure variable.
    Variable(String),
    Unary { op: UnaryOp, expr: Box<Expr> },
    Binary { op: BinaryOp, left: Box<Expr>, right: Box<Expr> },
    IsNull { expr: Box<Expr>, negated: bool },
    InList { expr: Box<Expr>, list: Vec<Expr>, negated: bool },
    Function { func: ScalarFunc, args: Vec<Expr> },
    /// `arg == None` is `COUNT(*)`.
    Aggregate { func: AggFunc, arg: Option<Box<Expr>> },
    Exists(Box<Query>),
}

impl Expr {
    pub fn column(table: Option<&str>, column: &str) -> Expr {
        Expr::Column(ColumnRef::new(table, column))
    }

    pub fn binary(op: BinaryOp, left: Expr, right: Expr) -> Expr {
        Expr::Binary {
            op,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Visits this expression and all sub-expressions, not descending into
    /// `EXISTS` subqueries.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Unary { expr, .. } | Expr::IsNull { expr, .. } => expr.walk(f),
            Expr::Binary { left, right, .. } => {
                left.walk(f);
                right.walk(f);
            }
            Expr::InList { expr, list, .. } => {
                expr.walk(f);
                list.iter().for_each(|e| e.walk(f));
            }
            Expr::Function { args, .. } => args.iter().for_each(|e| e.walk(f)),
            Expr::Aggregate { arg: Some(a), .. } => a.walk(f),
            _ => {}
        }
    }

    pub fn walk_mut(&mut self, f: &mut dyn FnMut(&mut Expr)) {
        f(self);
        match self {
            Expr::Unary { expr, .. } | Expr::IsNull { expr, .. } => expr.walk_mut(f),
            Expr::Binary { left, right, .. } => {
                left.walk_mut(f);
                right.walk_mut(f);
            }
            Expr::InList { expr, list, .. } => {
                expr.walk_mut(f);
                list.iter_mut().for_each(|e| e.walk_mut(f));
            }
            Expr::Function { args, .. } => args.iter_mut().for_each(|e| e.walk_mut(f)),
            Expr::Aggregate { arg: Some(a), .. } => a.walk_mut(f),
            _ => {}
        }
    }

    pub fn contains_aggregate(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| found |= matches!(e, Expr::Aggregate { .. }));
        found
    }

    pub fn contains_qualifier(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| found |= matches!(e, Expr::Qualified { .. }));
        found
    }

    /// Splits a conjunction into its conjuncts.
    pub fn conjuncts(self) -> Vec<Expr> {
        match self {
            Expr::Binary {
                op: BinaryOp::And,
                left,
                right,
            } => {
                let mut out = left.conjuncts();
                out.extend(right.conjuncts());
                out
            }
            e => vec![e],
        }
    }

    pub fn conjoin(parts: Vec<Expr>) -> Option<Expr> {
        parts
            .into_iter()
            .reduce(|acc, e| Expr::binary(BinaryOp::And, acc, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum SelectItem {
    Wildcard,
    Expr { expr: Expr, alias: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Source {
    Table(String),
    /// `:name`, a table-valued procedure variable.
    Variable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct TableRef {
    pub source: Source,
    pub alias: Option<String>,
}

impl TableRef {
    /// The name columns of this item are qualified with.
    pub fn binding_name(&self) -> &str {
        match (&self.alias, &self.source) {
            (Some(a), _) => a,
            (None, Source::Table(t)) | (None, Source::Variable(t)) => t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum JoinKind {
    Inner,
    Left,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Join {
    pub kind: JoinKind,
    pub table: TableRef,
    pub on: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct FromClause {
    pub base: TableRef,
    pub joins: Vec<Join>,
}

impl FromClause {
    pub fn items(&self) -> impl Iterator<Item = &TableRef> {
        std::iter::once(&self.base).chain(self.joins.iter().map(|j| &j.table))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct OrderItem {
    pub expr: Expr,
    pub descending: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct NamedStep {
    pub name: String,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum AtStep {
    Single(u64),
    Named(Vec<NamedStep>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Default)]
pub struct Query {
    pub select: Vec<SelectItem>,
    pub from: Option<FromClause>,
    pub where_clause: Option<Expr>,
    pub group_by: Vec<Expr>,
    pub order_by: Vec<OrderItem>,
    pub limit: Option<u64>,
    pub at_step: Option<AtStep>,
}

impl Query {
    /// Every expression directly in this query (not in subqueries).
    pub fn expressions(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        for item in &self.select {
            if let SelectItem::Expr { expr, .. } = item {
                out.push(expr);
            }
        }
        if let Some(from) = &self.from {
            out.extend(from.joins.iter().map(|j| &j.on));
        }
        out.extend(self.where_clause.iter());
        out.extend(self.group_by.iter());
        out.extend(self.order_by.iter().map(|o| &o.expr));
        out
    }

    fn expressions_mut(&mut self) -> Vec<&mut Expr> {
        let mut out = Vec::new();
        for item in &mut self.select {
            if let SelectItem::Expr { expr, .. } = item {
                out.push(expr);
            }
        }
        if let Some(from) = &mut self.from {
            out.extend(from.joins.iter_mut().map(|j| &mut j.on));
        }
        out.extend(self.where_clause.iter_mut());
        out.extend(self.group_by.iter_mut());
        out.extend(self.order_by.iter_mut().map(|o| &mut o.expr));
        out
    }

    /// Applies `f` to every expression node, including inside subqueries.
    pub fn visit_exprs_mut(&mut self, f: &mut dyn FnMut(&mut Expr)) {
        for e in self.expressions_mut() {
            e.walk_mut(&mut |node| {
                if let Expr::Exists(q) = node {
                    q.visit_exprs_mut(f);
                }
                f(node);
            });
        }
    }

    /// Names of procedure variables this query reads, table and scalar,
    /// including inside `EXISTS` subqueries. Sorted and deduplicated.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_variables(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_variables(&self, out: &mut Vec<String>) {
        if let Some(from) = &self.from {
            for item in from.items() {
                if let Source::Variable(v) = &item.source {
                    out.push(v.clone());
                }
            }
        }
        for e in self.expressions() {
            e.walk(&mut |node| match node {
                Expr::Variable(v) => out.push(v.clone()),
                Expr::Exists(q) => q.collect_variables(out),
                _ => {}
            });
        }
    }

    pub fn has_aggregates(&self) -> bool {
        self.select.iter().any(|s| match s {
            SelectItem::Expr { expr, .. } => expr.contains_aggregate(),
            SelectItem::Wildcard => false,
        }) || self.order_by.iter().any(|o| o.expr.contains_aggregate())
    }

    pub fn has_qualifiers(&self) -> bool {
        self.expressions().iter().any(|e| e.contains_qualifier())
    }
}

/// Byte range of a statement in its source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct StatementId(pub u32);

impl std::fmt::Display for StatementId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum VarType {
    Scalar(DataType),
    Table,
}

impl VarType {
    pub fn is_table(self) -> bool {
        matches!(self, VarType::Table)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Param {
    pub name: String,
    pub ty: VarType,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum InsertSource {
    Values(Vec<Vec<Expr>>),
    Query(Query),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Insert {
    pub table: String,
    pub columns: Option<Vec<String>>,
    pub source: InsertSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Update {
    pub table: String,
    pub alias: Option<String>,
    pub assignments: Vec<(String, Expr)>,
    pub where_clause: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Delete {
    pub table: String,
    pub alias: Option<String>,
    pub where_clause: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Dml {
    Insert(Insert),
    Update(Update),
    Delete(Delete),
}

impl Dml {
    pub fn table(&self) -> &str {
        match self {
            Dml::Insert(i) => &i.table,
            Dml::Update(u) => &u.table,
            Dml::Delete(d) => &d.table,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum ScalarSource {
    Expr(Expr),
    /// A query yielding at most one row of one column.
    Query(Query),
}

/// Tracing hook inserted by the instrumentation pass. Never produced by the
/// parser.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct TraceProbe {
    pub statement: StatementId,
    pub kind: ProbeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum ProbeKind {
    AssignScalar { var: String },
    AssignTable { var: String, query_id: String },
    Dml,
    /// Records a branch decision and opens a scope for the taken branch.
    Branch { taken: bool },
    /// Records one loop-condition evaluation; a `true` outcome opens a scope
    /// for the iteration body.
    LoopIter { continues: bool },
    /// Closes the innermost open scope.
    EndScope,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum StatementKind {
    /// Not an executed instruction; introduces an unbound variable.
    Declare { name: String, ty: VarType },
    AssignScalar { var: String, value: ScalarSource },
    AssignTable { var: String, query: Query },
    If {
        cond: Expr,
        then_branch: Vec<Statement>,
        else_branch: Vec<Statement>,
    },
    While { cond: Expr, body: Vec<Statement> },
    Dml(Dml),
    Trace(TraceProbe),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Statement {
    pub id: StatementId,
    pub span: Span,
    pub kind: StatementKind,
}

impl Statement {
    /// Whether executing this statement consumes a step.
    pub fn is_instruction(&self) -> bool {
        !matches!(
            self.kind,
            StatementKind::Declare { .. } | StatementKind::Trace(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Procedure {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Vec<Statement>,
}

impl Procedure {
    /// Pre-order walk over all statements.
    pub fn statements(&self) -> Vec<&Statement> {
        fn go<'a>(stmts: &'a [Statement], out: &mut Vec<&'a Statement>) {
            for s in stmts {
                out.push(s);
                match &s.kind {
                    StatementKind::If {
                        then_branch,
                        else_branch,
                        ..
                    } => {
                        go(then_branch, out);
                        go(else_branch, out);
                    }
                    StatementKind::While { body, .. } => go(body, out),
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        go(&self.body, &mut out);
        out
    }

    pub fn statement(&self, id: StatementId) -> Option<&Statement> {
        self.statements().into_iter().find(|s| s.id == id)
    }

    /// Declared variables and parameters with their types, in declaration
    /// order.
    pub fn variables(&self) -> Vec<(String, VarType)> {
        let mut out: Vec<(String, VarType)> =
            self.params.iter().map(|p| (p.name.clone(), p.ty)).collect();
        for s in self.statements() {
            if let StatementKind::Declare { name, ty } = &s.kind {
                if !out.iter().any(|(n, _)| n == name) {
                    out.push((name.clone(), *ty));
                }
            }
        }
        out
    }
}
