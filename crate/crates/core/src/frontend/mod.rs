//! Lexer, parser and renderer for the query dialect and the procedure
//! language.

pub mod ast;
mod check;
mod lexer;
mod parser;
mod render;

use thiserror::Error;

pub use ast::*;
pub use render::{quote_ident, render_expr, render_query, render_query_with};

use crate::storage::TableDef;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {col}: {message}")]
pub struct SyntaxError {
    pub message: String,
    /// Byte offset into the source.
    pub offset: usize,
    /// 1-based.
    pub line: usize,
    /// 1-based, counted in characters.
    pub col: usize,
    pub expected: Vec<String>,
}

impl SyntaxError {
    pub fn at(src: &str, offset: usize, message: impl Into<String>, expected: Vec<String>) -> Self {
        let (line, col) = line_col(src, offset);
        SyntaxError {
            message: message.into(),
            offset,
            line,
            col,
            expected,
        }
    }
}

pub fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(src.len());
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    (line, before[line_start..].chars().count() + 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrontendError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("line {line}, column {col}: undeclared variable {name}")]
    UndeclaredVariable { name: String, line: usize, col: usize },
    #[error("line {line}, column {col}: {message}")]
    Invalid { message: String, line: usize, col: usize },
}

impl FrontendError {
    pub fn position(&self) -> (usize, usize) {
        match self {
            FrontendError::Syntax(e) => (e.line, e.col),
            FrontendError::UndeclaredVariable { line, col, .. }
            | FrontendError::Invalid { line, col, .. } => (*line, *col),
        }
    }
}

pub fn parse_query(src: &str) -> Result<Query, SyntaxError> {
    let mut p = parser::Parser::new(src)?;
    let q = p.query()?;
    p.expect_eof()?;
    Ok(q)
}

/// Parses a standalone expression (used for tests and scalar console input).
pub fn parse_expr(src: &str) -> Result<Expr, SyntaxError> {
    let mut p = parser::Parser::new(src)?;
    let e = p.expr()?;
    p.expect_eof()?;
    Ok(e)
}

/// Parses a single INSERT, UPDATE or DELETE statement.
pub fn parse_dml(src: &str) -> Result<Dml, SyntaxError> {
    let mut p = parser::Parser::new(src)?;
    let d = p.dml()?;
    p.expect_eof()?;
    Ok(d)
}

/// Whether the text starts with a DML keyword.
pub fn is_dml(src: &str) -> bool {
    let first = src
        .lines()
        .map(|l| l.split("--").next().unwrap_or(""))
        .flat_map(str::split_whitespace)
        .next()
        .unwrap_or("");
    ["INSERT", "UPDATE", "DELETE"]
        .iter()
        .any(|k| first.eq_ignore_ascii_case(k))
}

pub fn parse_procedure(src: &str) -> Result<Procedure, FrontendError> {
    let raw = parser::Parser::new(src)?.procedure()?;
    check::check(src, raw)
}

/// Parses a sequence of `CREATE TABLE` statements.
pub fn parse_ddl(src: &str) -> Result<Vec<TableDef>, SyntaxError> {
    let mut p = parser::Parser::new(src)?;
    let mut defs = Vec::new();
    loop {
        while p.eat_semi() {}
        if p.is_eof() {
            return Ok(defs);
        }
        defs.push(p.create_table()?);
    }
}
