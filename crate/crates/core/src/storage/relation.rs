use serde::{Deserialize, Serialize};

use super::{DataType, Value};

pub type Row = Vec<Value>;

/// Where an output column's values come from.
///
/// Columns produced from the same source row share a `group`; the group is
/// only meaningful within one relation. `direct` is false once the values
/// have passed through a table variable, so the supplying base-table version
/// is no longer the one valid at query time.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnOrigin {
    pub table: String,
    pub column: String,
    pub primary_key: bool,
    pub group: u32,
    pub direct: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: Option<DataType>,
    #[serde(skip)]
    pub origin: Option<ColumnOrigin>,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: Option<DataType>) -> Self {
        Column {
            name: name.into(),
            ty,
            origin: None,
        }
    }
}

/// An ordered bag of rows with a column header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
}

impl Relation {
    pub fn new(columns: Vec<Column>, rows: Vec<Row>) -> Self {
        debug_assert!(rows.iter().all(|r| r.len() == columns.len()));
        Relation { columns, rows }
    }

    pub fn empty(columns: Vec<Column>) -> Self {
        Relation {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Compares header names and row contents; origins are ignored.
    pub fn same_contents(&self, other: &Relation) -> bool {
        self.column_names() == other.column_names() && self.rows == other.rows
    }

    /// Sorts rows by the total value order. Used to compare bags.
    pub fn sorted(mut self) -> Relation {
        self.rows.sort();
        self
    }
}
