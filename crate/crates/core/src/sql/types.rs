use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SqlError;

/// Reserved identifier bound to the evaluation time in conditions.
pub const NOW: &str = "now";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnType {
    Int,
    Real,
    String,
    Timestamp,
}

impl ColumnType {
    pub fn is_numeric(self) -> bool {
        !matches!(self, ColumnType::String)
    }

    pub fn keyword(self) -> &'static str {
        match self {
            ColumnType::Int => "INT",
            ColumnType::Real => "REAL",
            ColumnType::String => "STRING",
            ColumnType::Timestamp => "TIMESTAMP",
        }
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// A typed scalar. Timestamps are UTC milliseconds since the epoch.
///
/// Equality and ordering are total: reals compare with `f64::total_cmp`, and
/// values of different variants order by variant. Use [`Value::sql_cmp`] for
/// SQL comparison semantics, where all numeric variants compare by magnitude.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Value {
    Int(i64),
    Real(f64),
    Str(String),
    Timestamp(i64),
}

impl Value {
    fn rank(&self) -> u8 {
        match self {
            Value::Int(_) => 0,
            Value::Real(_) => 1,
            Value::Str(_) => 2,
            Value::Timestamp(_) => 3,
        }
    }

    pub fn is_numeric(&self) -> bool {
        !matches!(self, Value::Str(_))
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    /// Integer view of INT and TIMESTAMP values.
    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(v) | Value::Timestamp(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) | Value::Timestamp(v) => Some(*v as f64),
            Value::Real(v) => Some(*v),
            Value::Str(_) => None,
        }
    }

    /// SQL comparison. Numeric values compare by magnitude regardless of
    /// variant; strings compare by bytes. Returns `None` across the two classes.
    pub fn sql_cmp(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Str(a), Value::Str(b)) => Some(a.as_bytes().cmp(b.as_bytes())),
            (Value::Str(_), _) | (_, Value::Str(_)) => None,
            (a, b) => match (a.as_i64(), b.as_i64()) {
                (Some(x), Some(y)) => Some(x.cmp(&y)),
                _ => Some(cmp_mixed(a, b)),
            },
        }
    }

    /// Coerces a literal to the storage type of a column.
    pub fn coerce_to(self, ty: ColumnType) -> Result<Value, SqlError> {
        match (ty, self) {
            (ColumnType::Int, Value::Int(v)) => Ok(Value::Int(v)),
            (ColumnType::Int, Value::Timestamp(v)) => Ok(Value::Int(v)),
            (ColumnType::Timestamp, Value::Int(v)) | (ColumnType::Timestamp, Value::Timestamp(v)) => {
                Ok(Value::Timestamp(v))
            }
            (ColumnType::Real, Value::Real(v)) => Ok(Value::Real(v)),
            (ColumnType::Real, Value::Int(v)) => Ok(Value::Real(v as f64)),
            (ColumnType::String, Value::Str(s)) => Ok(Value::Str(s)),
            (ty, v) => Err(SqlError::Type(format!("literal {v} does not fit column type {ty}"))),
        }
    }

    /// Literal rendering that the parser reads back to an equal value.
    pub fn to_sql(&self) -> String {
        match self {
            Value::Int(v) | Value::Timestamp(v) => v.to_string(),
            Value::Real(v) => format!("{v:?}"),
            Value::Str(s) => format!("'{}'", s.replace('\'', "''")),
        }
    }
}

fn cmp_mixed(a: &Value, b: &Value) -> Ordering {
    // one side is REAL
    let x = a.as_f64().unwrap_or(f64::NAN);
    let y = b.as_f64().unwrap_or(f64::NAN);
    x.partial_cmp(&y).unwrap_or_else(|| x.total_cmp(&y))
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) | (Value::Timestamp(a), Value::Timestamp(b)) => a.cmp(b),
            (Value::Real(a), Value::Real(b)) => a.total_cmp(b),
            (Value::Str(a), Value::Str(b)) => a.as_bytes().cmp(b.as_bytes()),
            (a, b) => a.rank().cmp(&b.rank()),
        }
    }
}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Value::Int(v) | Value::Timestamp(v) => v.hash(state),
            Value::Real(v) => v.to_bits().hash(state),
            Value::Str(s) => s.hash(state),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) | Value::Timestamp(v) => write!(f, "{v}"),
            Value::Real(v) => write!(f, "{v}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub ty: ColumnType,
}

/// A table in the virtual schema. Names are stored lower case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDefinition {
    pub name: String,
    pub columns: Vec<Column>,
    pub defining_key: Vec<String>,
    pub timestamp_column: String,
}

impl TableDefinition {
    /// Validates and canonicalizes a definition. The defining key is reordered
    /// to schema order.
    pub fn new(name: &str, columns: Vec<Column>, defining_key: &[&str]) -> Result<Self, SqlError> {
        let name = canonical_ident(name);
        let mut cols: Vec<Column> = Vec::with_capacity(columns.len());
        for c in columns {
            let cname = canonical_ident(&c.name);
            if cname == NOW {
                return Err(SqlError::Schema(format!("column name '{NOW}' is reserved")));
            }
            if cols.iter().any(|e| e.name == cname) {
                return Err(SqlError::Schema(format!("duplicate column '{cname}' in table {name}")));
            }
            cols.push(Column { name: cname, ty: c.ty });
        }
        let ts: Vec<&Column> = cols.iter().filter(|c| c.ty == ColumnType::Timestamp).collect();
        let timestamp_column = match ts.as_slice() {
            [one] => one.name.clone(),
            [] => return Err(SqlError::Schema(format!("table {name} has no TIMESTAMP column"))),
            _ => return Err(SqlError::Schema(format!("table {name} has more than one TIMESTAMP column"))),
        };
        if defining_key.is_empty() {
            return Err(SqlError::Schema(format!("table {name} needs at least one defining-key column")));
        }
        let mut key: Vec<String> = Vec::new();
        for k in defining_key {
            let k = canonical_ident(k);
            if !cols.iter().any(|c| c.name == k) {
                return Err(SqlError::Schema(format!("defining-key column '{k}' is not a column of {name}")));
            }
            if k == timestamp_column {
                return Err(SqlError::Schema("the timestamp column cannot be part of the defining key".into()));
            }
            if key.contains(&k) {
                return Err(SqlError::Schema(format!("defining-key column '{k}' listed twice")));
            }
            key.push(k);
        }
        key.sort_by_key(|k| cols.iter().position(|c| &c.name == k));
        Ok(TableDefinition { name, columns: cols, defining_key: key, timestamp_column })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        let name = canonical_ident(name);
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.column_index(name).map(|i| &self.columns[i])
    }

    pub fn timestamp_index(&self) -> usize {
        self.column_index(&self.timestamp_column).expect("timestamp column is declared")
    }

    pub fn key_indices(&self) -> Vec<usize> {
        self.defining_key.iter().filter_map(|k| self.column_index(k)).collect()
    }

    /// Canonical CREATE TABLE text.
    pub fn to_sql(&self) -> String {
        let cols: Vec<String> = self.columns.iter().map(|c| format!("{} {}", c.name, c.ty)).collect();
        format!("CREATE TABLE {} ({})", self.name, cols.join(", "))
    }

    /// Digest of the canonical definition plus key, used to guard table files.
    pub fn schema_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.to_sql().as_bytes());
        h.update(b"\nkey:");
        h.update(self.defining_key.join(",").as_bytes());
        h.finalize().into()
    }
}

pub fn canonical_ident(s: &str) -> String {
    s.to_ascii_lowercase()
}
