//! Fixture loading: one DDL file plus one CSV per table.
//!
//! The DDL file is `schema.sql` if present, otherwise the only `.sql` file in
//! the directory. Each table's rows come from `<Table>.csv` (header row =
//! column names, empty field = NULL). All rows are inserted at logical time 1.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{DataType, Database, LogicalTime, Row, StorageError, TableDef, Value};
use crate::frontend::{parse_ddl, SyntaxError};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no DDL file found in {0}")]
    NoSchema(PathBuf),
    #[error("{path}: {source}")]
    Ddl {
        path: PathBuf,
        #[source]
        source: SyntaxError,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}, line {line}: {message}")]
    Value {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("fixture must be loaded into an empty database (clock is at {0})")]
    NotEmpty(LogicalTime),
}

pub fn load_fixture(dir: impl AsRef<Path>) -> Result<Database, FixtureError> {
    let db = Database::new();
    load_fixture_into(&db, dir)?;
    Ok(db)
}

pub fn load_fixture_into(db: &Database, dir: impl AsRef<Path>) -> Result<(), FixtureError> {
    let dir = dir.as_ref();
    let schema = find_schema(dir)?;
    let ddl = fs::read_to_string(&schema).map_err(|source| FixtureError::Io {
        path: schema.clone(),
        source,
    })?;
    let defs = parse_ddl(&ddl).map_err(|source| FixtureError::Ddl {
        path: schema.clone(),
        source,
    })?;

    let mut w = db.writer();
    if w.clock() != LogicalTime::ZERO {
        return Err(FixtureError::NotEmpty(w.clock()));
    }
    for def in &defs {
        w.create_table(def.clone())?;
    }
    let at = w.advance_clock();
    for def in &defs {
        let path = dir.join(format!("{}.csv", def.name));
        if !path.exists() {
            continue;
        }
        let rows = read_csv(&path, def)?;
        w.apply_insert(&def.name, rows, at)?;
    }
    Ok(())
}

fn find_schema(dir: &Path) -> Result<PathBuf, FixtureError> {
    let preferred = dir.join("schema.sql");
    if preferred.exists() {
        return Ok(preferred);
    }
    let entries = fs::read_dir(dir).map_err(|source| FixtureError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut sql: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "sql"))
        .collect();
    sql.sort();
    match sql.len() {
        1 => Ok(sql.remove(0)),
        _ => Err(FixtureError::NoSchema(dir.to_path_buf())),
    }
}

fn read_csv(path: &Path, def: &TableDef) -> Result<Vec<Row>, FixtureError> {
    let csv_err = |source| FixtureError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let mut positions = Vec::with_capacity(headers.len());
    for h in headers.iter() {
        let idx = def.column_index(h.trim()).ok_or_else(|| FixtureError::Value {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unknown column {h}"),
        })?;
        positions.push(idx);
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let mut row = vec![Value::Null; def.columns.len()];
        for (field, &idx) in record.iter().zip(&positions) {
            row[idx] = parse_field(field, def.columns[idx].ty).ok_or_else(|| FixtureError::Value {
                path: path.to_path_buf(),
                line,
                message: format!("cannot read {field:?} as {}", def.columns[idx].ty),
            })?;
        }
        rows.push(row);
    }
    Ok(rows)
}

pub(crate) fn parse_field(field: &str, ty: DataType) -> Option<Value> {
    if field.is_empty() {
        return Some(Value::Null);
    }
    match ty {
        DataType::Text => Some(Value::text(field)),
        DataType::Int => field.trim().parse().ok().map(Value::Int),
        DataType::Float => field.trim().parse().ok().map(Value::Float),
        DataType::Bool => match field.trim().to_ascii_lowercase().as_str() {
            "true" | "t" | "1" => Some(Value::Bool(true)),
            "false" | "f" | "0" => Some(Value::Bool(false)),
            _ => None,
        },
    }
}
