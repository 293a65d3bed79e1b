//! Insert-only, in-memory relational storage.
//!
//! Every table keeps all row versions it has ever held. Updates cap the old
//! version's `valid_to` and append a new version; deletes only cap. Reads are
//! always "as of" a [`LogicalTime`], which makes any past state reproducible.
//!
//! Concurrency: a [`Database`] admits one [`Writer`] at a time (the writer
//! slot is a mutex held for the lifetime of the guard). Readers never take the
//! writer slot, so any number of threads may call [`Database::scan_asof`]
//! while a writer is active. Each DML statement is applied atomically under a
//! short exclusive lock on the catalog, and versions committed at or before a
//! time `t` below the writer's clock are never changed again.

mod fixture;
mod relation;
mod table;
mod value;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::{Mutex, MutexGuard, RwLock};
use thiserror::Error;

pub use fixture::{load_fixture, load_fixture_into, FixtureError};
pub use relation::{Column, ColumnOrigin, Relation, Row};
pub use table::{ColumnDef, RowId, TableDef, TupleVersion};
pub use value::{DataType, LogicalTime, Value};

use table::Table;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StorageError {
    #[error("table {0} already exists")]
    DuplicateTable(String),
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {column} in table {table}")]
    UnknownColumn { table: String, column: String },
    #[error("invalid definition for table {table}: {reason}")]
    InvalidTableDef { table: String, reason: String },
    #[error("primary key ({key}) is already present in {table}")]
    PrimaryKeyViolation { table: String, key: String },
    #[error("NULL in primary key of {table}")]
    NullKey { table: String },
    #[error("type mismatch: expected {expected}, found {found}")]
    TypeMismatch { expected: String, found: String },
    #[error("{table} expects {expected} values per row, got {found}")]
    ArityMismatch {
        table: String,
        expected: usize,
        found: usize,
    },
    #[error("write at time {at} but the clock is at {clock}")]
    ClockMismatch { at: LogicalTime, clock: LogicalTime },
    #[error("a version written at time {at} cannot be superseded at the same time")]
    TimeNotAdvanced { at: LogicalTime },
    #[error("row {row_id} of {table} is not currently valid")]
    NotCurrent { table: String, row_id: RowId },
}

#[derive(Debug, Default)]
pub struct Database {
    tables: RwLock<BTreeMap<String, Table>>,
    clock: AtomicU64,
    writer: Mutex<()>,
}

impl Clone for Database {
    fn clone(&self) -> Self {
        Database {
            tables: RwLock::new(self.tables.read().clone()),
            clock: AtomicU64::new(self.clock.load(Ordering::SeqCst)),
            writer: Mutex::new(()),
        }
    }
}

impl Database {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clock(&self) -> LogicalTime {
        LogicalTime(self.clock.load(Ordering::SeqCst))
    }

    /// Acquires the writer slot, blocking while another writer holds it.
    pub fn writer(&self) -> Writer<'_> {
        Writer {
            db: self,
            _slot: self.writer.lock(),
        }
    }

    pub fn try_writer(&self) -> Option<Writer<'_>> {
        self.writer.try_lock().map(|slot| Writer {
            db: self,
            _slot: slot,
        })
    }

    /// Rows of every version with `valid_from <= at < valid_to`.
    pub fn scan_asof(&self, table: &str, at: LogicalTime) -> Result<Relation, StorageError> {
        let tables = self.tables.read();
        let t = tables
            .get(table)
            .ok_or_else(|| StorageError::UnknownTable(table.to_string()))?;
        Ok(t.scan_asof(at))
    }

    pub fn scan_current(&self, table: &str) -> Result<Relation, StorageError> {
        self.scan_asof(table, self.clock())
    }

    /// Currently valid rows with their row ids.
    pub fn current_rows(&self, table: &str) -> Result<Vec<(RowId, Row)>, StorageError> {
        let tables = self.tables.read();
        let t = tables
            .get(table)
            .ok_or_else(|| StorageError::UnknownTable(table.to_string()))?;
        Ok(t.current_rows())
    }

    pub fn table_def(&self, table: &str) -> Result<TableDef, StorageError> {
        self.tables
            .read()
            .get(table)
            .map(|t| t.def.clone())
            .ok_or_else(|| StorageError::UnknownTable(table.to_string()))
    }

    pub fn has_table(&self, table: &str) -> bool {
        self.tables.read().contains_key(table)
    }

    pub fn table_names(&self) -> Vec<String> {
        self.tables.read().keys().cloned().collect()
    }

    /// Full version history of a table, in write order.
    pub fn versions(&self, table: &str) -> Result<Vec<TupleVersion>, StorageError> {
        let tables = self.tables.read();
        let t = tables
            .get(table)
            .ok_or_else(|| StorageError::UnknownTable(table.to_string()))?;
        Ok(t.versions.clone())
    }

    /// Versions whose primary key equals `key` (in the table's key order),
    /// sorted by `valid_from`.
    pub fn versions_by_key(&self, table: &str, key: &[Value]) -> Result<Vec<TupleVersion>, StorageError> {
        let tables = self.tables.read();
        let t = tables
            .get(table)
            .ok_or_else(|| StorageError::UnknownTable(table.to_string()))?;
        if key.len() != t.key_positions().len() {
            return Ok(Vec::new());
        }
        Ok(t.history(key))
    }

    /// Number of stored versions across all tables.
    pub fn version_count(&self) -> usize {
        self.tables.read().values().map(|t| t.versions.len()).sum()
    }
}

/// Exclusive write access to a [`Database`].
pub struct Writer<'a> {
    db: &'a Database,
    _slot: MutexGuard<'a, ()>,
}

impl<'a> Writer<'a> {
    pub fn db(&self) -> &'a Database {
        self.db
    }

    pub fn clock(&self) -> LogicalTime {
        self.db.clock()
    }

    pub fn advance_clock(&mut self) -> LogicalTime {
        LogicalTime(self.db.clock.fetch_add(1, Ordering::SeqCst) + 1)
    }

    pub fn create_table(&mut self, def: TableDef) -> Result<(), StorageError> {
        def.validate()?;
        let mut tables = self.db.tables.write();
        if tables.contains_key(&def.name) {
            return Err(StorageError::DuplicateTable(def.name));
        }
        tables.insert(def.name.clone(), Table::new(def));
        Ok(())
    }

    pub fn apply_insert(&mut self, table: &str, rows: Vec<Row>, at: LogicalTime) -> Result<usize, StorageError> {
        self.check_time(at)?;
        let mut tables = self.db.tables.write();
        let t = tables
            .get_mut(table)
            .ok_or_else(|| StorageError::UnknownTable(table.to_string()))?;
        t.insert(rows, at)
    }

    /// Runs `f` over every currently valid row; rows for which it returns
    /// `Some(new_values)` are superseded at `at`. Returns the matched count.
    pub fn apply_update<E, F>(&mut self, table: &str, at: LogicalTime, mut f: F) -> Result<usize, E>
    where
        E: From<StorageError>,
        F: FnMut(&[Value]) -> Result<Option<Row>, E>,
    {
        self.check_time(at)?;
        let rows = self.db.current_rows(table)?;
        let mut changes = Vec::new();
        for (row_id, values) in rows {
            if let Some(new_values) = f(&values)? {
                changes.push((row_id, new_values));
            }
        }
        self.apply_update_rows(table, changes, at).map_err(E::from)
    }

    /// Supersedes the given rows (by row id) with new values at `at`.
    pub fn apply_update_rows(&mut self, table: &str, changes: Vec<(RowId, Row)>, at: LogicalTime) -> Result<usize, StorageError> {
        self.check_time(at)?;
        if changes.is_empty() {
            return if self.db.has_table(table) {
                Ok(0)
            } else {
                Err(StorageError::UnknownTable(table.to_string()))
            };
        }
        let mut tables = self.db.tables.write();
        let t = tables
            .get_mut(table)
            .ok_or_else(|| StorageError::UnknownTable(table.to_string()))?;
        t.update(changes, at)
    }

    /// Caps `valid_to` of every currently valid row matching `pred`.
    pub fn apply_delete<E, F>(&mut self, table: &str, at: LogicalTime, mut pred: F) -> Result<usize, E>
    where
        E: From<StorageError>,
        F: FnMut(&[Value]) -> Result<bool, E>,
    {
        self.check_time(at)?;
        let rows = self.db.current_rows(table)?;
        let mut hits = Vec::new();
        for (row_id, values) in rows {
            if pred(&values)? {
                hits.push(row_id);
            }
        }
        self.apply_delete_rows(table, &hits, at).map_err(E::from)
    }

    pub fn apply_delete_rows(&mut self, table: &str, row_ids: &[RowId], at: LogicalTime) -> Result<usize, StorageError> {
        self.check_time(at)?;
        let mut tables = self.db.tables.write();
        let t = tables
            .get_mut(table)
            .ok_or_else(|| StorageError::UnknownTable(table.to_string()))?;
        t.delete(row_ids, at)
    }

    fn check_time(&self, at: LogicalTime) -> Result<(), StorageError> {
        let clock = self.db.clock();
        if at != clock {
            return Err(StorageError::ClockMismatch { at, clock });
        }
        Ok(())
    }
}
