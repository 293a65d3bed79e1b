//! Turns parser output into a [`Procedure`]: numbers statements in pre-order,
//! resolves bare identifiers in procedure expressions to variables and
//! checks that every variable is declared before use.

use std::collections::HashMap;

use super::ast::*;
use super::parser::{AssignSource, RawKind, RawProcedure, RawStatement};
use super::{line_col, FrontendError};

pub(crate) fn check(src: &str, raw: RawProcedure) -> Result<Procedure, FrontendError> {
    let mut cx = Checker {
        src,
        vars: HashMap::new(),
        next_id: 1,
    };
    let mut params = Vec::new();
    for (p, end) in raw.params {
        cx.declare(&p.name, p.ty, end)?;
        params.push(p);
    }
    let body = cx.block(raw.body)?;
    Ok(Procedure {
        name: raw.name,
        params,
        body,
    })
}

struct Checker<'a> {
    src: &'a str,
    vars: HashMap<String, VarType>,
    next_id: u32,
}

impl Checker<'_> {
    fn id(&mut self) -> StatementId {
        let id = StatementId(self.next_id);
        self.next_id += 1;
        id
    }

    fn invalid(&self, at: usize, message: impl Into<String>) -> FrontendError {
        let (line, col) = line_col(self.src, at);
        FrontendError::Invalid {
            message: message.into(),
            line,
            col,
        }
    }

    fn undeclared(&self, at: usize, name: &str) -> FrontendError {
        let (line, col) = line_col(self.src, at);
        FrontendError::UndeclaredVariable {
            name: name.to_string(),
            line,
            col,
        }
    }

    fn declare(&mut self, name: &str, ty: VarType, at: usize) -> Result<(), FrontendError> {
        if self.vars.insert(name.to_string(), ty).is_some() {
            return Err(self.invalid(at, format!("variable {name} is declared twice")));
        }
        Ok(())
    }

    fn lookup(&self, name: &str, at: usize) -> Result<VarType, FrontendError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| self.undeclared(at, name))
    }

    fn block(&mut self, stmts: Vec<RawStatement>) -> Result<Vec<Statement>, FrontendError> {
        let mut out = Vec::new();
        for s in stmts {
            self.statement(s, &mut out)?;
        }
        Ok(out)
    }

    fn statement(&mut self, s: RawStatement, out: &mut Vec<Statement>) -> Result<(), FrontendError> {
        let at = s.span.start;
        let span = s.span;
        match s.kind {
            RawKind::Declare { name, ty, init } => {
                let id = self.id();
                if let Some(source) = &init {
                    // The initializer may not read the variable it initializes.
                    self.source_ok(source, at)?;
                }
                self.declare(&name, ty, at)?;
                out.push(Statement {
                    id,
                    span,
                    kind: StatementKind::Declare {
                        name: name.clone(),
                        ty,
                    },
                });
                if let Some(source) = init {
                    let id = self.id();
                    let kind = self.assign(name, source, at)?;
                    out.push(Statement { id, span, kind });
                }
            }
            RawKind::Assign { var, source } => {
                let id = self.id();
                let kind = self.assign(var, source, at)?;
                out.push(Statement { id, span, kind });
            }
            RawKind::ElseIf(inner) => {
                self.statement(
                    RawStatement {
                        span,
                        kind: *inner,
                    },
                    out,
                )?;
            }
            RawKind::If {
                mut cond,
                then_branch,
                else_branch,
            } => {
                let id = self.id();
                self.scalar_expr(&mut cond, at)?;
                let then_branch = self.block(then_branch)?;
                let else_branch = self.block(else_branch)?;
                out.push(Statement {
                    id,
                    span,
                    kind: StatementKind::If {
                        cond,
                        then_branch,
                        else_branch,
                    },
                });
            }
            RawKind::While { mut cond, body } => {
                let id = self.id();
                self.scalar_expr(&mut cond, at)?;
                let body = self.block(body)?;
                out.push(Statement {
                    id,
                    span,
                    kind: StatementKind::While { cond, body },
                });
            }
            RawKind::Dml(mut dml) => {
                let id = self.id();
                self.dml(&mut dml, at)?;
                out.push(Statement {
                    id,
                    span,
                    kind: StatementKind::Dml(dml),
                });
            }
        }
        Ok(())
    }

    fn source_ok(&self, source: &AssignSource, at: usize) -> Result<(), FrontendError> {
        match source {
            AssignSource::Query(q) => self.query(q, at),
            AssignSource::Expr(e) => {
                let mut e = e.clone();
                self.scalar_expr(&mut e, at)
            }
        }
    }

    fn assign(
        &self,
        var: String,
        source: AssignSource,
        at: usize,
    ) -> Result<StatementKind, FrontendError> {
        let ty = self.lookup(&var, at)?;
        match (ty, source) {
            (VarType::Table, AssignSource::Query(query)) => {
                self.query(&query, at)?;
                Ok(StatementKind::AssignTable { var, query })
            }
            (VarType::Table, AssignSource::Expr(_)) => Err(self.invalid(
                at,
                format!("table variable {var} must be assigned a query"),
            )),
            (VarType::Scalar(_), AssignSource::Query(query)) => {
                self.query(&query, at)?;
                Ok(StatementKind::AssignScalar {
                    var,
                    value: ScalarSource::Query(query),
                })
            }
            (VarType::Scalar(_), AssignSource::Expr(mut e)) => {
                self.scalar_expr(&mut e, at)?;
                Ok(StatementKind::AssignScalar {
                    var,
                    value: ScalarSource::Expr(e),
                })
            }
        }
    }

    /// Procedure-level expression: bare names are variables.
    fn scalar_expr(&self, e: &mut Expr, at: usize) -> Result<(), FrontendError> {
        let mut err = None;
        e.walk_mut(&mut |node| {
            if err.is_some() {
                return;
            }
            match node {
                Expr::Column(ColumnRef { table: None, column }) => {
                    *node = Expr::Variable(std::mem::take(column));
                }
                Expr::Column(c) => {
                    err = Some(format!(
                        "column {}.{} outside a query",
                        c.table.as_deref().unwrap_or(""),
                        c.column
                    ));
                }
                Expr::Qualified { .. } => err = Some("step qualifier outside a query".into()),
                Expr::Aggregate { .. } => err = Some("aggregate outside a query".into()),
                _ => {}
            }
        });
        if let Some(m) = err {
            return Err(self.invalid(at, m));
        }
        self.expr_vars(e, at)
    }

    /// Checks variable references in an expression that is part of a query
    /// or DML statement.
    fn expr_vars(&self, e: &Expr, at: usize) -> Result<(), FrontendError> {
        let mut result = Ok(());
        e.walk(&mut |node| {
            if result.is_err() {
                return;
            }
            result = match node {
                Expr::Variable(v) => match self.lookup(v, at) {
                    Ok(VarType::Scalar(_)) => Ok(()),
                    Ok(VarType::Table) => Err(self.invalid(
                        at,
                        format!("table variable {v} used as a scalar"),
                    )),
                    Err(e) => Err(e),
                },
                Expr::Qualified { .. } => {
                    Err(self.invalid(at, "step qualifier inside a procedure"))
                }
                Expr::Exists(q) => self.query(q, at),
                _ => Ok(()),
            };
        });
        result
    }

    fn query(&self, q: &Query, at: usize) -> Result<(), FrontendError> {
        if q.at_step.is_some() {
            return Err(self.invalid(at, "AT STEP inside a procedure"));
        }
        if let Some(from) = &q.from {
            for item in from.items() {
                if let Source::Variable(v) = &item.source {
                    if self.lookup(v, at)? != VarType::Table {
                        return Err(self.invalid(
                            at,
                            format!("scalar variable {v} used as a table"),
                        ));
                    }
                }
            }
        }
        for e in q.expressions() {
            self.expr_vars(e, at)?;
        }
        Ok(())
    }

    fn dml(&self, dml: &mut Dml, at: usize) -> Result<(), FrontendError> {
        match dml {
            Dml::Insert(ins) => match &mut ins.source {
                InsertSource::Values(rows) => {
                    for row in rows {
                        for e in row {
                            self.scalar_expr(e, at)?;
                        }
                    }
                    Ok(())
                }
                InsertSource::Query(q) => self.query(q, at),
            },
            Dml::Update(u) => {
                for (_, e) in &u.assignments {
                    self.expr_vars(e, at)?;
                }
                if let Some(w) = &u.where_clause {
                    self.expr_vars(w, at)?;
                }
                Ok(())
            }
            Dml::Delete(d) => match &d.where_clause {
                Some(w) => self.expr_vars(w, at),
                None => Ok(()),
            },
        }
    }
}
