use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::relation::{Column, ColumnOrigin, Relation, Row};
use super::{DataType, LogicalTime, StorageError, Value};

/// Surrogate id of a logical row. Updates keep the id of the version they
/// supersede.
pub type RowId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub ty: DataType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    pub primary_key: Vec<String>,
}

impl TableDef {
    pub fn new(name: impl Into<String>) -> Self {
        TableDef {
            name: name.into(),
            columns: Vec::new(),
            primary_key: Vec::new(),
        }
    }

    pub fn column(mut self, name: impl Into<String>, ty: DataType) -> Self {
        self.columns.push(ColumnDef {
            name: name.into(),
            ty,
        });
        self
    }

    pub fn key(mut self, name: impl Into<String>) -> Self {
        self.primary_key.push(name.into());
        self
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn is_key_column(&self, name: &str) -> bool {
        self.primary_key.iter().any(|k| k == name)
    }

    pub(crate) fn validate(&self) -> Result<(), StorageError> {
        let invalid = |reason: String| StorageError::InvalidTableDef {
            table: self.name.clone(),
            reason,
        };
        if self.columns.is_empty() {
            return Err(invalid("no columns".into()));
        }
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(invalid(format!("duplicate column {}", c.name)));
            }
        }
        if self.primary_key.is_empty() {
            return Err(invalid("a primary key is required".into()));
        }
        let mut seen_key = HashSet::new();
        for k in &self.primary_key {
            if !seen.contains(k.as_str()) {
                return Err(invalid(format!("primary key column {k} is not a column")));
            }
            if !seen_key.insert(k.as_str()) {
                return Err(invalid(format!("primary key column {k} listed twice")));
            }
        }
        Ok(())
    }
}

/// One immutable row version, valid over `[valid_from, valid_to)`.
/// `valid_to == None` stands for +infinity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TupleVersion {
    pub row_id: RowId,
    pub valid_from: LogicalTime,
    pub valid_to: Option<LogicalTime>,
    pub values: Row,
}

impl TupleVersion {
    pub fn is_valid_at(&self, at: LogicalTime) -> bool {
        self.valid_from <= at && self.valid_to.map_or(true, |to| at < to)
    }

    pub fn is_current(&self) -> bool {
        self.valid_to.is_none()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Table {
    pub def: TableDef,
    pub versions: Vec<TupleVersion>,
    key_positions: Vec<usize>,
    /// Primary key -> index of the currently valid version.
    current: HashMap<Vec<Value>, usize>,
    /// Row id -> index of the currently valid version.
    live: HashMap<RowId, usize>,
    /// Primary key -> indices of every version that carried it, oldest first.
    history: HashMap<Vec<Value>, Vec<usize>>,
    next_row_id: RowId,
}

impl Table {
    pub fn new(def: TableDef) -> Self {
        let key_positions = def
            .primary_key
            .iter()
            .map(|k| def.column_index(k).expect("validated"))
            .collect();
        Table {
            def,
            versions: Vec::new(),
            key_positions,
            current: HashMap::new(),
            live: HashMap::new(),
            history: HashMap::new(),
            next_row_id: 1,
        }
    }

    pub fn key_of(&self, row: &[Value]) -> Vec<Value> {
        self.key_positions.iter().map(|&i| row[i].clone()).collect()
    }

    /// Versions that carried primary key `key`, oldest first.
    pub fn history(&self, key: &[Value]) -> Vec<TupleVersion> {
        let key: Option<Vec<Value>> = self
            .key_positions
            .iter()
            .zip(key)
            .map(|(&i, v)| v.clone().coerce_to(self.def.columns[i].ty).ok())
            .collect();
        key.and_then(|k| self.history.get(&k))
            .map(|idx| idx.iter().map(|&i| self.versions[i].clone()).collect())
            .unwrap_or_default()
    }

    pub fn key_positions(&self) -> &[usize] {
        &self.key_positions
    }

    pub fn columns(&self) -> Vec<Column> {
        self.def
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                ty: Some(c.ty),
                origin: Some(ColumnOrigin {
                    table: self.def.name.clone(),
                    column: c.name.clone(),
                    primary_key: self.def.is_key_column(&c.name),
                    group: 0,
                    direct: true,
                }),
            })
            .collect()
    }

    pub fn scan_asof(&self, at: LogicalTime) -> Relation {
        let rows = self
            .versions
            .iter()
            .filter(|v| v.is_valid_at(at))
            .map(|v| v.values.clone())
            .collect();
        Relation::new(self.columns(), rows)
    }

    /// Currently valid versions as `(row_id, values)`, in version order.
    pub fn current_rows(&self) -> Vec<(RowId, Row)> {
        self.versions
            .iter()
            .filter(|v| v.is_current())
            .map(|v| (v.row_id, v.values.clone()))
            .collect()
    }

    /// Checks arity, coerces types, and rejects NULL keys.
    pub fn conform(&self, row: Row) -> Result<Row, StorageError> {
        if row.len() != self.def.columns.len() {
            return Err(StorageError::ArityMismatch {
                table: self.def.name.clone(),
                expected: self.def.columns.len(),
                found: row.len(),
            });
        }
        let row = row
            .into_iter()
            .zip(&self.def.columns)
            .map(|(v, c)| v.coerce_to(c.ty))
            .collect::<Result<Row, _>>()?;
        if self.key_positions.iter().any(|&i| row[i].is_null()) {
            return Err(StorageError::NullKey {
                table: self.def.name.clone(),
            });
        }
        Ok(row)
    }

    pub fn insert(&mut self, rows: Vec<Row>, at: LogicalTime) -> Result<usize, StorageError> {
        let rows = rows
            .into_iter()
            .map(|r| self.conform(r))
            .collect::<Result<Vec<_>, _>>()?;
        let mut batch = HashSet::new();
        for row in &rows {
            let key = self.key_of(row);
            if self.current.contains_key(&key) || !batch.insert(key.clone()) {
                return Err(self.pk_violation(&key));
            }
        }
        let n = rows.len();
        for row in rows {
            let key = self.key_of(&row);
            let row_id = self.next_row_id;
            self.next_row_id += 1;
            self.history.entry(key.clone()).or_default().push(self.versions.len());
            self.current.insert(key, self.versions.len());
            self.live.insert(row_id, self.versions.len());
            self.versions.push(TupleVersion {
                row_id,
                valid_from: at,
                valid_to: None,
                values: row,
            });
        }
        Ok(n)
    }

    /// Supersedes the current versions of `changes` (by row id) with new
    /// values, all at time `at`. Either every change applies or none does.
    pub fn update(&mut self, changes: Vec<(RowId, Row)>, at: LogicalTime) -> Result<usize, StorageError> {
        let mut staged = Vec::with_capacity(changes.len());
        let mut removed_keys = HashSet::new();
        for (row_id, row) in changes {
            let idx = *self.live.get(&row_id).ok_or(StorageError::NotCurrent {
                table: self.def.name.clone(),
                row_id,
            })?;
            if self.versions[idx].valid_from >= at {
                return Err(StorageError::TimeNotAdvanced { at });
            }
            let row = self.conform(row)?;
            removed_keys.insert(self.key_of(&self.versions[idx].values));
            staged.push((idx, row));
        }
        let mut new_keys = HashSet::new();
        for (_, row) in &staged {
            let key = self.key_of(row);
            let clashes = self.current.contains_key(&key) && !removed_keys.contains(&key);
            if clashes || !new_keys.insert(key.clone()) {
                return Err(self.pk_violation(&key));
            }
        }
        let n = staged.len();
        for (idx, _) in &staged {
            let old_key = self.key_of(&self.versions[*idx].values);
            self.current.remove(&old_key);
            self.versions[*idx].valid_to = Some(at);
        }
        for (idx, row) in staged {
            let row_id = self.versions[idx].row_id;
            let key = self.key_of(&row);
            self.history.entry(key.clone()).or_default().push(self.versions.len());
            self.current.insert(key, self.versions.len());
            self.live.insert(row_id, self.versions.len());
            self.versions.push(TupleVersion {
                row_id,
                valid_from: at,
                valid_to: None,
                values: row,
            });
        }
        Ok(n)
    }

    pub fn delete(&mut self, row_ids: &[RowId], at: LogicalTime) -> Result<usize, StorageError> {
        let wanted: HashSet<RowId> = row_ids.iter().copied().collect();
        let mut hits = Vec::with_capacity(wanted.len());
        for row_id in wanted {
            match self.live.get(&row_id) {
                Some(&idx) => hits.push(idx),
                None => {
                    return Err(StorageError::NotCurrent {
                        table: self.def.name.clone(),
                        row_id,
                    })
                }
            }
        }
        if hits.iter().any(|&idx| self.versions[idx].valid_from >= at) {
            return Err(StorageError::TimeNotAdvanced { at });
        }
        for idx in &hits {
            let key = self.key_of(&self.versions[*idx].values);
            self.current.remove(&key);
            self.live.remove(&self.versions[*idx].row_id);
            self.versions[*idx].valid_to = Some(at);
        }
        Ok(hits.len())
    }

    fn pk_violation(&self, key: &[Value]) -> StorageError {
        StorageError::PrimaryKeyViolation {
            table: self.def.name.clone(),
            key: key.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", "),
        }
    }
}
