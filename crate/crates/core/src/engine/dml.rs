use super::plan::Planner;
use super::{evaluate, evaluate_scalar, EngineError, Environment};
use crate::frontend::{Dml, Expr, InsertSource};
use crate::storage::{Column, Row, TableDef, Value, Writer};

fn column_position(def: &TableDef, name: &str) -> Result<usize, EngineError> {
    def.column_index(name)
        .ok_or_else(|| EngineError::UnknownColumn(format!("{}.{name}", def.name)))
}

fn table_columns(def: &TableDef) -> Vec<Column> {
    def.columns
        .iter()
        .map(|c| Column::new(c.name.clone(), Some(c.ty)))
        .collect()
}

/// Advances the clock once, then applies the statement at the new time.
/// Expressions and queries read the database as of that time, which still
/// shows the state before this statement. Returns the affected row count.
pub fn execute_dml(w: &mut Writer<'_>, dml: &Dml, env: &Environment) -> Result<usize, EngineError> {
    let at = w.advance_clock();
    let db = w.db();
    let def = db.table_def(dml.table())?;
    match dml {
        Dml::Insert(ins) => {
            let positions = match &ins.columns {
                Some(cols) => cols
                    .iter()
                    .map(|c| column_position(&def, c))
                    .collect::<Result<Vec<_>, _>>()?,
                None => (0..def.columns.len()).collect(),
            };
            let values: Vec<Row> = match &ins.source {
                InsertSource::Values(rows) => rows
                    .iter()
                    .map(|r| r.iter().map(|e| evaluate_scalar(db, e, env, at)).collect())
                    .collect::<Result<_, _>>()?,
                InsertSource::Query(q) => evaluate(db, q, env, at)?.rows,
            };
            let mut rows = Vec::with_capacity(values.len());
            for v in values {
                if v.len() != positions.len() {
                    return Err(EngineError::Invalid(format!(
                        "INSERT into {} expects {} values, got {}",
                        def.name,
                        positions.len(),
                        v.len()
                    )));
                }
                let mut row = vec![Value::Null; def.columns.len()];
                for (value, &p) in v.into_iter().zip(&positions) {
                    row[p] = value;
                }
                rows.push(row);
            }
            Ok(w.apply_insert(&def.name, rows, at)?)
        }
        Dml::Update(u) => {
            let binding = u.alias.as_deref().unwrap_or(&u.table);
            let targets = u
                .assignments
                .iter()
                .map(|(c, _)| column_position(&def, c))
                .collect::<Result<Vec<_>, _>>()?;
            let truth = Expr::Literal(Value::Bool(true));
            let mut exprs: Vec<&Expr> = vec![u.where_clause.as_ref().unwrap_or(&truth)];
            exprs.extend(u.assignments.iter().map(|(_, e)| e));
            let program = Planner::new(db, env, at).row_program(binding, &table_columns(&def), &exprs)?;
            w.apply_update::<EngineError, _>(&def.name, at, |row| {
                if !program.test(0, row)? {
                    return Ok(None);
                }
                let mut new = row.to_vec();
                for (k, &p) in targets.iter().enumerate() {
                    new[p] = program.eval(k + 1, row)?;
                }
                Ok(Some(new))
            })
        }
        Dml::Delete(d) => {
            let binding = d.alias.as_deref().unwrap_or(&d.table);
            let truth = Expr::Literal(Value::Bool(true));
            let pred = d.where_clause.as_ref().unwrap_or(&truth);
            let program = Planner::new(db, env, at).row_program(binding, &table_columns(&def), &[pred])?;
            w.apply_delete::<EngineError, _>(&def.name, at, |row| program.test(0, row))
        }
    }
}
