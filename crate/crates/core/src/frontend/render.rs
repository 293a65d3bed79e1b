use std::fmt::Write;

use super::ast::*;
use super::parser::is_reserved;
use crate::storage::Value;

/// Renders a query so that parsing the text yields an equal AST.
pub fn render_query(q: &Query) -> String {
    render_query_with(q, &|_| None)
}

/// Like [`render_query`], but `var` may replace the text of each `:name`
/// reference (scalar or table) with something else.
pub fn render_query_with(q: &Query, var: &dyn Fn(&str) -> Option<String>) -> String {
    let mut r = Renderer { out: String::new(), var };
    r.query(q);
    r.out
}

pub fn render_expr(e: &Expr) -> String {
    let mut r = Renderer {
        out: String::new(),
        var: &|_| None,
    };
    r.expr(e);
    r.out
}

pub fn quote_ident(name: &str) -> String {
    let plain = name
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    if plain && !is_reserved(name) {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

pub(crate) fn render_literal(v: &Value) -> String {
    match v {
        Value::Null => "NULL".into(),
        Value::Bool(true) => "TRUE".into(),
        Value::Bool(false) => "FALSE".into(),
        Value::Int(i) => i.to_string(),
        Value::Float(f) => format!("{f:?}"),
        Value::Text(s) => format!("'{}'", s.replace('\'', "''")),
    }
}

/// Precedence of the construct at the top of `e`, used to decide on
/// parentheses. Atoms get the highest value.
fn expr_prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary { op, .. } => op.precedence(),
        Expr::Unary { op: UnaryOp::Not, .. } => 3,
        Expr::IsNull { .. } | Expr::InList { .. } => 4,
        _ => 10,
    }
}

struct Renderer<'a> {
    out: String,
    var: &'a dyn Fn(&str) -> Option<String>,
}

impl Renderer<'_> {
    fn push(&mut self, s: &str) {
        self.out.push_str(s);
    }

    fn variable(&mut self, name: &str) {
        match (self.var)(name) {
            Some(text) => self.push(&text),
            None => {
                self.push(":");
                self.push(&quote_ident(name));
            }
        }
    }

    fn column(&mut self, c: &ColumnRef) {
        if let Some(t) = &c.table {
            self.push(&quote_ident(t));
            self.push(".");
        }
        self.push(&quote_ident(&c.column));
    }

    fn wrapped(&mut self, e: &Expr, parens: bool) {
        if parens {
            self.push("(");
            self.expr(e);
            self.push(")");
        } else {
            self.expr(e);
        }
    }

    fn expr(&mut self, e: &Expr) {
        match e {
            Expr::Literal(v) => {
                let text = render_literal(v);
                self.push(&text);
            }
            Expr::Column(c) => self.column(c),
            Expr::Qualified { step, column } => {
                self.push(&quote_ident(step));
                self.push("!");
                self.column(column);
            }
            Expr::Variable(name) => self.variable(name),
            Expr::Unary { op: UnaryOp::Neg, expr } => {
                self.push("-");
                self.wrapped(expr, true);
            }
            Expr::Unary { op: UnaryOp::Not, expr } => {
                self.push("NOT ");
                self.wrapped(expr, true);
            }
            Expr::Binary { op, left, right } => {
                let p = op.precedence();
                let lp = expr_prec(left);
                let rp = expr_prec(right);
                let cmp = op.is_comparison();
                self.wrapped(left, lp < p || (cmp && lp == p));
                let _ = write!(self.out, " {} ", op.symbol());
                self.wrapped(right, rp <= p);
            }
            Expr::IsNull { expr, negated } => {
                self.wrapped(expr, expr_prec(expr) < 5);
                self.push(if *negated { " IS NOT NULL" } else { " IS NULL" });
            }
            Expr::InList { expr, list, negated } => {
                self.wrapped(expr, expr_prec(expr) < 5);
                self.push(if *negated { " NOT IN (" } else { " IN (" });
                for (i, item) in list.iter().enumerate() {
                    if i > 0 {
                        self.push(", ");
                    }
                    self.expr(item);
                }
                self.push(")");
            }
            Expr::Function { func, args } => {
                self.push(func.name());
                self.push("(");
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        self.push(", ");
                    }
                    self.expr(a);
                }
                self.push(")");
            }
            Expr::Aggregate { func, arg } => {
                self.push(func.name());
                self.push("(");
                match arg {
                    Some(a) => self.expr(a),
                    None => self.push("*"),
                }
                self.push(")");
            }
            Expr::Exists(q) => {
                self.push("EXISTS (");
                self.query(q);
                self.push(")");
            }
        }
    }

    fn table_ref(&mut self, t: &TableRef) {
        match &t.source {
            Source::Table(name) => self.push(&quote_ident(name)),
            Source::Variable(name) => self.variable(name),
        }
        if let Some(a) = &t.alias {
            self.push(" ");
            self.push(&quote_ident(a));
        }
    }

    fn query(&mut self, q: &Query) {
        self.push("SELECT ");
        for (i, item) in q.select.iter().enumerate() {
            if i > 0 {
                self.push(", ");
            }
            match item {
                SelectItem::Wildcard => self.push("*"),
                SelectItem::Expr { expr, alias } => {
                    self.expr(expr);
                    if let Some(a) = alias {
                        self.push(" AS ");
                        self.push(&quote_ident(a));
                    }
                }
            }
        }
        if let Some(from) = &q.from {
            self.push(" FROM ");
            self.table_ref(&from.base);
            for j in &from.joins {
                self.push(match j.kind {
                    JoinKind::Inner => " JOIN ",
                    JoinKind::Left => " LEFT JOIN ",
                });
                self.table_ref(&j.table);
                self.push(" ON ");
                self.expr(&j.on);
            }
        }
        if let Some(w) = &q.where_clause {
            self.push(" WHERE ");
            self.expr(w);
        }
        if !q.group_by.is_empty() {
            self.push(" GROUP BY ");
            for (i, g) in q.group_by.iter().enumerate() {
                if i > 0 {
                    self.push(", ");
                }
                self.expr(g);
            }
        }
        if !q.order_by.is_empty() {
            self.push(" ORDER BY ");
            for (i, o) in q.order_by.iter().enumerate() {
                if i > 0 {
                    self.push(", ");
                }
                self.expr(&o.expr);
                if o.descending {
                    self.push(" DESC");
                }
            }
        }
        if let Some(n) = q.limit {
            let _ = write!(self.out, " LIMIT {n}");
        }
        match &q.at_step {
            None => {}
            Some(AtStep::Single(s)) => {
                let _ = write!(self.out, " AT STEP {s}");
            }
            Some(AtStep::Named(list)) => {
                self.push(" AT STEP ");
                for (i, n) in list.iter().enumerate() {
                    if i > 0 {
                        self.push(", ");
                    }
                    let _ = write!(self.out, "{}={}", quote_ident(&n.name), n.step);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_expr, parse_query};

    fn round_trip(src: &str) {
        let q = parse_query(src).unwrap();
        let text = render_query(&q);
        assert_eq!(parse_query(&text).unwrap(), q, "{text}");
    }

    #[test]
    fn simple_round_trips() {
        round_trip("SELECT 1");
        round_trip("SELECT a - -5, -(b), NOT (x = 1) FROM t WHERE a IN (1, 2) AND b IS NOT NULL");
        round_trip("SELECT \"select\".\"a b\" AS \"from\" FROM \"select\"");
        round_trip("SELECT (a = b) = c, a - (b - c), a * (b + c) FROM t");
    }

    #[test]
    fn min_int_literal() {
        let e = parse_expr("-9223372036854775808").unwrap();
        assert_eq!(e, Expr::Literal(Value::Int(i64::MIN)));
        assert_eq!(parse_expr(&render_expr(&e)).unwrap(), e);
    }
}
