use std::collections::HashSet;

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::SyntaxError;
use crate::storage::{ColumnDef, DataType, TableDef, Value};

/// Words that end an expression or clause and so can never be implicit
/// aliases.
const CLAUSE_WORDS: &[&str] = &[
    "SELECT", "FROM", "WHERE", "GROUP", "BY", "ORDER", "LIMIT", "AT", "STEP", "JOIN", "INNER",
    "LEFT", "OUTER", "ON", "AS", "AND", "OR", "NOT", "IS", "IN", "ASC", "DESC", "THEN", "ELSE",
    "END", "DO", "SET", "VALUES", "WHILE", "IF", "ELSEIF", "BEGIN", "DECLARE", "INSERT", "UPDATE",
    "DELETE", "INTO", "NULL", "TRUE", "FALSE", "EXISTS", "PROCEDURE", "CREATE", "TABLE",
    "PRIMARY", "KEY", "DISTINCT", "HAVING", "UNION",
];

pub(crate) fn is_reserved(word: &str) -> bool {
    CLAUSE_WORDS.iter().any(|k| k.eq_ignore_ascii_case(word))
}

pub(crate) struct Parser<'a> {
    src: &'a str,
    tokens: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, SyntaxError>;

impl<'a> Parser<'a> {
    pub fn new(src: &'a str) -> PResult<Self> {
        Ok(Parser {
            src,
            tokens: tokenize(src)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn offset(&self) -> usize {
        self.tokens[self.pos].start
    }

    fn prev_end(&self) -> usize {
        if self.pos == 0 {
            0
        } else {
            self.tokens[self.pos - 1].end
        }
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> SyntaxError {
        let found = self.peek().describe();
        let message = if expected.is_empty() {
            format!("unexpected {found}")
        } else {
            format!("expected {}, found {found}", expected.join(" or "))
        };
        SyntaxError::at(
            self.src,
            self.offset(),
            message,
            expected.iter().map(|s| s.to_string()).collect(),
        )
    }

    fn error_msg(&self, message: impl Into<String>) -> SyntaxError {
        SyntaxError::at(self.src, self.offset(), message, vec![])
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(w) if w.eq_ignore_ascii_case(kw))
    }

    fn is_kw_at(&self, n: usize, kw: &str) -> bool {
        matches!(self.peek_at(n), Tok::Ident(w) if w.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.error(&[kw]))
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, label: &str) -> PResult<()> {
        if self.eat(&tok) {
            Ok(())
        } else {
            Err(self.error(&[label]))
        }
    }

    fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    pub fn eat_semi(&mut self) -> bool {
        self.eat(&Tok::Semi)
    }

    pub fn is_eof(&self) -> bool {
        self.at_eof()
    }

    pub fn expect_eof(&mut self) -> PResult<()> {
        self.eat(&Tok::Semi);
        if self.at_eof() {
            Ok(())
        } else {
            Err(self.error(&["end of input"]))
        }
    }

    /// Any identifier, quoted or not, including keyword-like words.
    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) | Tok::QuotedIdent(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    /// An identifier that is not a reserved word (quoted identifiers always
    /// qualify).
    fn plain_ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::QuotedIdent(s) => {
                self.bump();
                Ok(s)
            }
            Tok::Ident(s) if !is_reserved(&s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn optional_alias(&mut self) -> PResult<Option<String>> {
        if self.eat_kw("AS") {
            return self.ident().map(Some);
        }
        match self.peek() {
            Tok::QuotedIdent(_) => self.ident().map(Some),
            Tok::Ident(w) if !is_reserved(w) => self.ident().map(Some),
            _ => Ok(None),
        }
    }

    fn unsigned(&mut self) -> PResult<u64> {
        match self.peek().clone() {
            Tok::Int(s) => {
                let v = s
                    .parse::<u64>()
                    .map_err(|_| self.error_msg(format!("integer {s} out of range")))?;
                self.bump();
                Ok(v)
            }
            _ => Err(self.error(&["integer"])),
        }
    }

    // ---- queries -------------------------------------------------------

    pub fn query(&mut self) -> PResult<Query> {
        self.expect_kw("SELECT")?;
        let mut q = Query {
            select: self.select_list()?,
            ..Query::default()
        };
        if self.eat_kw("FROM") {
            q.from = Some(self.from_clause()?);
        }
        if self.eat_kw("WHERE") {
            q.where_clause = Some(self.expr()?);
        }
        if self.is_kw("GROUP") {
            self.bump();
            self.expect_kw("BY")?;
            q.group_by = self.expr_list()?;
        }
        if self.is_kw("ORDER") {
            self.bump();
            self.expect_kw("BY")?;
            loop {
                let expr = self.expr()?;
                let descending = if self.eat_kw("DESC") {
                    true
                } else {
                    self.eat_kw("ASC");
                    false
                };
                q.order_by.push(OrderItem { expr, descending });
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        if self.eat_kw("LIMIT") {
            q.limit = Some(self.unsigned()?);
        }
        if self.is_kw("AT") && self.is_kw_at(1, "STEP") {
            self.bump();
            self.bump();
            q.at_step = Some(self.at_step()?);
        }
        Ok(q)
    }

    fn at_step(&mut self) -> PResult<AtStep> {
        if matches!(self.peek(), Tok::Int(_)) {
            return Ok(AtStep::Single(self.unsigned()?));
        }
        let mut named = Vec::new();
        let mut seen = HashSet::new();
        loop {
            let at = self.offset();
            let name = self.plain_ident()?;
            if !seen.insert(name.clone()) {
                return Err(SyntaxError::at(
                    self.src,
                    at,
                    format!("step name {name} is bound twice"),
                    vec![],
                ));
            }
            self.expect(Tok::Eq, "'='")?;
            let step = self.unsigned()?;
            named.push(NamedStep { name, step });
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        Ok(AtStep::Named(named))
    }

    fn select_list(&mut self) -> PResult<Vec<SelectItem>> {
        let mut items = Vec::new();
        loop {
            if self.eat(&Tok::Star) {
                items.push(SelectItem::Wildcard);
            } else {
                let expr = self.expr()?;
                let alias = self.optional_alias()?;
                items.push(SelectItem::Expr { expr, alias });
            }
            if !self.eat(&Tok::Comma) {
                return Ok(items);
            }
        }
    }

    fn table_ref(&mut self) -> PResult<TableRef> {
        let source = if self.eat(&Tok::Colon) {
            Source::Variable(self.ident()?)
        } else {
            Source::Table(self.plain_ident()?)
        };
        let alias = self.optional_alias()?;
        Ok(TableRef { source, alias })
    }

    fn from_clause(&mut self) -> PResult<FromClause> {
        let base = self.table_ref()?;
        let mut joins = Vec::new();
        loop {
            let kind = if self.eat_kw("JOIN") {
                JoinKind::Inner
            } else if self.is_kw("INNER") {
                self.bump();
                self.expect_kw("JOIN")?;
                JoinKind::Inner
            } else if self.is_kw("LEFT") {
                self.bump();
                self.eat_kw("OUTER");
                self.expect_kw("JOIN")?;
                JoinKind::Left
            } else {
                break;
            };
            let table = self.table_ref()?;
            self.expect_kw("ON")?;
            let on = self.expr()?;
            joins.push(Join { kind, table, on });
        }
        Ok(FromClause { base, joins })
    }

    fn expr_list(&mut self) -> PResult<Vec<Expr>> {
        let mut out = vec![self.expr()?];
        while self.eat(&Tok::Comma) {
            out.push(self.expr()?);
        }
        Ok(out)
    }

    // ---- expressions ---------------------------------------------------

    pub fn expr(&mut self) -> PResult<Expr> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> PResult<Expr> {
        let mut left = self.and_expr()?;
        while self.eat_kw("OR") {
            let right = self.and_expr()?;
            left = Expr::binary(BinaryOp::Or, left, right);
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut left = self.not_expr()?;
        while self.eat_kw("AND") {
            let right = self.not_expr()?;
            left = Expr::binary(BinaryOp::And, left, right);
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if self.eat_kw("NOT") {
            let inner = self.not_expr()?;
            return Ok(Expr::Unary {
                op: UnaryOp::Not,
                expr: Box::new(inner),
            });
        }
        self.comparison()
    }

    fn comparison(&mut self) -> PResult<Expr> {
        let mut left = self.additive()?;
        loop {
            let op = match self.peek() {
                Tok::Eq => BinaryOp::Eq,
                Tok::NotEq => BinaryOp::NotEq,
                Tok::Lt => BinaryOp::Lt,
                Tok::LtEq => BinaryOp::LtEq,
                Tok::Gt => BinaryOp::Gt,
                Tok::GtEq => BinaryOp::GtEq,
                _ => {
                    if self.is_kw("IS") {
                        self.bump();
                        let negated = self.eat_kw("NOT");
                        self.expect_kw("NULL")?;
                        left = Expr::IsNull {
                            expr: Box::new(left),
                            negated,
                        };
                        continue;
                    }
                    let negated = self.is_kw("NOT") && self.is_kw_at(1, "IN");
                    if negated || self.is_kw("IN") {
                        if negated {
                            self.bump();
                        }
                        self.bump();
                        self.expect(Tok::LParen, "'('")?;
                        let list = self.expr_list()?;
                        self.expect(Tok::RParen, "')'")?;
                        left = Expr::InList {
                            expr: Box::new(left),
                            list,
                            negated,
                        };
                        continue;
                    }
                    return Ok(left);
                }
            };
            self.bump();
            let right = self.additive()?;
            left = Expr::binary(op, left, right);
        }
    }

    fn additive(&mut self) -> PResult<Expr> {
        let mut left = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                Tok::Concat => BinaryOp::Concat,
                _ => return Ok(left),
            };
            self.bump();
            let right = self.multiplicative()?;
            left = Expr::binary(op, left, right);
        }
    }

    fn multiplicative(&mut self) -> PResult<Expr> {
        let mut left = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                Tok::Percent => BinaryOp::Mod,
                _ => return Ok(left),
            };
            self.bump();
            let right = self.unary()?;
            left = Expr::binary(op, left, right);
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.eat(&Tok::Minus) {
            // A minus directly before a number literal folds into the literal.
            match self.peek().clone() {
                Tok::Int(s) => {
                    let text = format!("-{s}");
                    let v = text
                        .parse::<i64>()
                        .map_err(|_| self.error_msg(format!("integer {text} out of range")))?;
                    self.bump();
                    return Ok(Expr::Literal(Value::Int(v)));
                }
                Tok::Float(s) => {
                    let v: f64 = s.parse().map_err(|_| self.error_msg("bad number"))?;
                    self.bump();
                    return Ok(Expr::Literal(Value::Float(-v)));
                }
                _ => {}
            }
            let inner = self.unary()?;
            return Ok(Expr::Unary {
                op: UnaryOp::Neg,
                expr: Box::new(inner),
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Int(s) => {
                let v = s
                    .parse::<i64>()
                    .map_err(|_| self.error_msg(format!("integer {s} out of range")))?;
                self.bump();
                Ok(Expr::Literal(Value::Int(v)))
            }
            Tok::Float(s) => {
                let v: f64 = s.parse().map_err(|_| self.error_msg("bad number"))?;
                self.bump();
                Ok(Expr::Literal(Value::Float(v)))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Literal(Value::Text(s)))
            }
            Tok::Colon => {
                self.bump();
                Ok(Expr::Variable(self.ident()?))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Tok::QuotedIdent(_) => self.column_or_qualified(),
            Tok::Ident(word) => {
                let upper = word.to_ascii_uppercase();
                match upper.as_str() {
                    "NULL" => {
                        self.bump();
                        return Ok(Expr::Literal(Value::Null));
                    }
                    "TRUE" | "FALSE" => {
                        self.bump();
                        return Ok(Expr::Literal(Value::Bool(upper == "TRUE")));
                    }
                    "EXISTS" if self.peek_at(1) == &Tok::LParen => {
                        self.bump();
                        self.bump();
                        let q = self.query()?;
                        self.expect(Tok::RParen, "')'")?;
                        return Ok(Expr::Exists(Box::new(q)));
                    }
                    _ => {}
                }
                if self.peek_at(1) == &Tok::LParen {
                    return self.function_call(&word);
                }
                if is_reserved(&word) {
                    return Err(self.error(&["expression"]));
                }
                self.column_or_qualified()
            }
            _ => Err(self.error(&["expression"])),
        }
    }

    fn function_call(&mut self, name: &str) -> PResult<Expr> {
        let at = self.offset();
        self.bump();
        self.bump();
        if let Some(func) = AggFunc::from_name(name) {
            if func == AggFunc::Count && self.eat(&Tok::Star) {
                self.expect(Tok::RParen, "')'")?;
                return Ok(Expr::Aggregate { func, arg: None });
            }
            let arg = self.expr()?;
            self.expect(Tok::RParen, "')'")?;
            return Ok(Expr::Aggregate {
                func,
                arg: Some(Box::new(arg)),
            });
        }
        if let Some(func) = ScalarFunc::from_name(name) {
            let args = if self.peek() == &Tok::RParen {
                Vec::new()
            } else {
                self.expr_list()?
            };
            self.expect(Tok::RParen, "')'")?;
            return Ok(Expr::Function { func, args });
        }
        Err(SyntaxError::at(self.src, at, format!("unknown function {name}"), vec![]))
    }

    fn column_ref(&mut self) -> PResult<ColumnRef> {
        let first = self.ident()?;
        if self.peek() == &Tok::Dot {
            self.bump();
            let column = self.ident()?;
            Ok(ColumnRef {
                table: Some(first),
                column,
            })
        } else {
            Ok(ColumnRef {
                table: None,
                column: first,
            })
        }
    }

    fn column_or_qualified(&mut self) -> PResult<Expr> {
        if self.peek_at(1) == &Tok::Bang {
            let step = self.ident()?;
            self.bump();
            if !matches!(self.peek(), Tok::Ident(_) | Tok::QuotedIdent(_)) {
                return Err(self.error(&["column reference"]));
            }
            let column = self.column_ref()?;
            return Ok(Expr::Qualified { step, column });
        }
        Ok(Expr::Column(self.column_ref()?))
    }

    // ---- DDL -----------------------------------------------------------

    pub fn create_table(&mut self) -> PResult<TableDef> {
        self.expect_kw("CREATE")?;
        self.expect_kw("TABLE")?;
        let name = self.plain_ident()?;
        self.expect(Tok::LParen, "'('")?;
        let mut def = TableDef::new(name);
        loop {
            if self.is_kw("PRIMARY") {
                self.bump();
                self.expect_kw("KEY")?;
                self.expect(Tok::LParen, "'('")?;
                loop {
                    def.primary_key.push(self.ident()?);
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
                self.expect(Tok::RParen, "')'")?;
            } else {
                let col = self.ident()?;
                let ty = self.data_type()?;
                def.columns.push(ColumnDef {
                    name: col.clone(),
                    ty,
                });
                loop {
                    if self.is_kw("PRIMARY") {
                        self.bump();
                        self.expect_kw("KEY")?;
                        def.primary_key.push(col.clone());
                    } else if self.is_kw("NOT") && self.is_kw_at(1, "NULL") {
                        self.bump();
                        self.bump();
                    } else {
                        break;
                    }
                }
            }
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(Tok::RParen, "')'")?;
        Ok(def)
    }

    fn data_type(&mut self) -> PResult<DataType> {
        let at = self.offset();
        let name = self.ident()?;
        let ty = DataType::parse(&name)
            .ok_or_else(|| SyntaxError::at(self.src, at, format!("unknown type {name}"), vec!["type".into()]))?;
        // VARCHAR(20) and friends: the length is accepted and ignored.
        if self.eat(&Tok::LParen) {
            self.unsigned()?;
            while self.eat(&Tok::Comma) {
                self.unsigned()?;
            }
            self.expect(Tok::RParen, "')'")?;
        }
        Ok(ty)
    }

    fn var_type(&mut self) -> PResult<VarType> {
        if self.eat_kw("TABLE") {
            Ok(VarType::Table)
        } else {
            Ok(VarType::Scalar(self.data_type()?))
        }
    }

    // ---- procedures ----------------------------------------------------

    pub fn procedure(&mut self) -> PResult<RawProcedure> {
        self.eat_kw("CREATE");
        self.expect_kw("PROCEDURE")?;
        let name = self.plain_ident()?;
        self.expect(Tok::LParen, "'('")?;
        let mut params = Vec::new();
        if self.peek() != &Tok::RParen {
            loop {
                self.eat_kw("IN");
                let pname = self.plain_ident()?;
                let ty = self.var_type()?;
                params.push((Param { name: pname, ty }, self.prev_end()));
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "')'")?;
        self.eat_kw("AS");
        self.expect_kw("BEGIN")?;
        let body = self.block(&["END"])?;
        self.expect_kw("END")?;
        self.expect_eof()?;
        Ok(RawProcedure { name, params, body })
    }

    /// Statements up to (not including) one of the `terminators` keywords.
    fn block(&mut self, terminators: &[&str]) -> PResult<Vec<RawStatement>> {
        let mut out = Vec::new();
        while !terminators.iter().any(|t| self.is_kw(t)) {
            if self.at_eof() {
                return Err(self.error(terminators));
            }
            out.push(self.statement()?);
        }
        Ok(out)
    }

    fn statement(&mut self) -> PResult<RawStatement> {
        let start = self.offset();
        let kind = if self.eat_kw("DECLARE") {
            let name = self.plain_ident()?;
            let ty = self.var_type()?;
            let init = if self.eat(&Tok::Eq) || self.eat(&Tok::Assign) || self.eat_kw("DEFAULT") {
                Some(self.assign_source()?)
            } else {
                None
            };
            self.expect(Tok::Semi, "';'")?;
            RawKind::Declare { name, ty, init }
        } else if self.eat_kw("IF") {
            self.if_rest()?
        } else if self.eat_kw("WHILE") {
            let cond = self.expr()?;
            self.expect_kw("DO")?;
            let body = self.block(&["END"])?;
            self.expect_kw("END")?;
            self.expect_kw("WHILE")?;
            self.expect(Tok::Semi, "';'")?;
            RawKind::While { cond, body }
        } else if self.is_kw("INSERT") || self.is_kw("UPDATE") || self.is_kw("DELETE") {
            let dml = self.dml()?;
            self.expect(Tok::Semi, "';'")?;
            RawKind::Dml(dml)
        } else if matches!(self.peek(), Tok::Ident(_) | Tok::QuotedIdent(_))
            && matches!(self.peek_at(1), Tok::Eq | Tok::Assign)
        {
            let var = self.ident()?;
            self.bump();
            let source = self.assign_source()?;
            self.expect(Tok::Semi, "';'")?;
            RawKind::Assign { var, source }
        } else {
            return Err(self.error(&["statement"]));
        };
        Ok(RawStatement {
            span: Span {
                start,
                end: self.prev_end(),
            },
            kind,
        })
    }

    fn if_rest(&mut self) -> PResult<RawKind> {
        let cond = self.expr()?;
        self.expect_kw("THEN")?;
        let then_branch = self.block(&["ELSE", "ELSEIF", "END"])?;
        let else_branch = if self.is_kw("ELSEIF") {
            let start = self.offset();
            self.bump();
            let nested = self.if_rest_nested()?;
            vec![RawStatement {
                span: Span {
                    start,
                    end: self.prev_end(),
                },
                kind: nested,
            }]
        } else if self.eat_kw("ELSE") {
            self.block(&["END"])?
        } else {
            Vec::new()
        };
        if !matches!(else_branch.last(), Some(RawStatement { kind: RawKind::ElseIf(_), .. })) {
            self.expect_kw("END")?;
            self.expect_kw("IF")?;
            self.expect(Tok::Semi, "';'")?;
        }
        Ok(RawKind::If {
            cond,
            then_branch,
            else_branch,
        })
    }

    /// `ELSEIF` chains share the outer `END IF;`.
    fn if_rest_nested(&mut self) -> PResult<RawKind> {
        let inner = self.if_rest()?;
        Ok(RawKind::ElseIf(Box::new(inner)))
    }

    fn assign_source(&mut self) -> PResult<AssignSource> {
        if self.is_kw("SELECT") {
            Ok(AssignSource::Query(self.query()?))
        } else {
            Ok(AssignSource::Expr(self.expr()?))
        }
    }

    pub fn dml(&mut self) -> PResult<Dml> {
        if self.eat_kw("INSERT") {
            self.expect_kw("INTO")?;
            let table = self.plain_ident()?;
            let columns = if self.peek() == &Tok::LParen && !self.is_kw_at(1, "SELECT") {
                self.bump();
                let mut cols = vec![self.ident()?];
                while self.eat(&Tok::Comma) {
                    cols.push(self.ident()?);
                }
                self.expect(Tok::RParen, "')'")?;
                Some(cols)
            } else {
                None
            };
            let source = if self.eat_kw("VALUES") {
                let mut rows = Vec::new();
                loop {
                    self.expect(Tok::LParen, "'('")?;
                    rows.push(self.expr_list()?);
                    self.expect(Tok::RParen, "')'")?;
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
                InsertSource::Values(rows)
            } else if self.is_kw("SELECT") {
                InsertSource::Query(self.query()?)
            } else {
                return Err(self.error(&["VALUES", "SELECT"]));
            };
            Ok(Dml::Insert(Insert {
                table,
                columns,
                source,
            }))
        } else if self.eat_kw("UPDATE") {
            let table = self.plain_ident()?;
            let alias = if self.is_kw("SET") {
                None
            } else {
                self.optional_alias()?
            };
            self.expect_kw("SET")?;
            let mut assignments = Vec::new();
            loop {
                let mut col = self.ident()?;
                // Allow `SET alias.col = ...`.
                if self.eat(&Tok::Dot) {
                    col = self.ident()?;
                }
                self.expect(Tok::Eq, "'='")?;
                assignments.push((col, self.expr()?));
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
            let where_clause = if self.eat_kw("WHERE") {
                Some(self.expr()?)
            } else {
                None
            };
            Ok(Dml::Update(Update {
                table,
                alias,
                assignments,
                where_clause,
            }))
        } else if self.eat_kw("DELETE") {
            self.expect_kw("FROM")?;
            let table = self.plain_ident()?;
            let alias = self.optional_alias()?;
            let where_clause = if self.eat_kw("WHERE") {
                Some(self.expr()?)
            } else {
                None
            };
            Ok(Dml::Delete(Delete {
                table,
                alias,
                where_clause,
            }))
        } else {
            Err(self.error(&["INSERT", "UPDATE", "DELETE"]))
        }
    }
}

// Parser output before variable checking and statement numbering.

pub(crate) struct RawProcedure {
    pub name: String,
    /// Parameters with the offset just after their declaration.
    pub params: Vec<(Param, usize)>,
    pub body: Vec<RawStatement>,
}

pub(crate) struct RawStatement {
    pub span: Span,
    pub kind: RawKind,
}

pub(crate) enum AssignSource {
    Expr(Expr),
    Query(Query),
}

pub(crate) enum RawKind {
    Declare {
        name: String,
        ty: VarType,
        init: Option<AssignSource>,
    },
    Assign {
        var: String,
        source: AssignSource,
    },
    If {
        cond: Expr,
        then_branch: Vec<RawStatement>,
        else_branch: Vec<RawStatement>,
    },
    ElseIf(Box<RawKind>),
    While {
        cond: Expr,
        body: Vec<RawStatement>,
    },
    Dml(Dml),
}
