use serde::{Deserialize, Serialize};

use crate::sql::{ColumnRef, SqlError, TableDefinition, Value};

/// One timestamped measurement row of a table.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tuple {
    table: String,
    values: Vec<Value>,
    timestamp: i64,
}

impl Tuple {
    /// Builds a tuple, coercing each value to its column type.
    pub fn new(schema: &TableDefinition, values: Vec<Value>) -> Result<Tuple, SqlError> {
        if values.len() != schema.columns.len() {
            return Err(SqlError::Schema(format!(
                "table {} has {} columns, got {} values",
                schema.name,
                schema.columns.len(),
                values.len()
            )));
        }
        let values = values
            .into_iter()
            .zip(&schema.columns)
            .map(|(v, c)| v.coerce_to(c.ty))
            .collect::<Result<Vec<_>, _>>()?;
        let timestamp = values[schema.timestamp_index()].as_i64().expect("coerced to TIMESTAMP");
        Ok(Tuple { table: schema.name.clone(), values, timestamp })
    }

    /// Checks a tuple received from elsewhere against its schema.
    pub fn validate(&self, schema: &TableDefinition) -> Result<(), SqlError> {
        let rebuilt = Tuple::new(schema, self.values.clone())?;
        if rebuilt != *self {
            return Err(SqlError::Schema(format!("tuple does not conform to table {}", schema.name)));
        }
        Ok(())
    }

    pub fn table(&self) -> &str {
        &self.table
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn timestamp(&self) -> i64 {
        self.timestamp
    }

    pub fn get(&self, schema: &TableDefinition, column: &str) -> Option<&Value> {
        schema.column_index(column).and_then(|i| self.values.get(i))
    }

    pub fn key(&self, schema: &TableDefinition) -> DefiningKeyValue {
        DefiningKeyValue {
            table: self.table.clone(),
            key_values: schema.key_indices().into_iter().map(|i| self.values[i].clone()).collect(),
        }
    }

    pub fn to_insert_sql(&self, schema: &TableDefinition) -> String {
        let cols: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
        let vals: Vec<String> = self.values.iter().map(Value::to_sql).collect();
        format!("INSERT INTO {} ({}) VALUES ({})", schema.name, cols.join(", "), vals.join(", "))
    }
}

/// The values of a tuple's defining-key columns: what is being measured.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DefiningKeyValue {
    pub table: String,
    pub key_values: Vec<Value>,
}

/// Column lookup for condition evaluation.
pub trait RowContext {
    fn value(&self, column: &ColumnRef) -> Option<&Value>;
}

/// A single tuple seen through its schema. Qualifiers are ignored.
pub struct TupleRow<'a> {
    pub schema: &'a TableDefinition,
    pub tuple: &'a Tuple,
}

impl RowContext for TupleRow<'_> {
    fn value(&self, column: &ColumnRef) -> Option<&Value> {
        self.tuple.get(self.schema, &column.column)
    }
}

/// A joined row: one tuple per query binding.
pub struct JoinedRow<'a> {
    pub parts: Vec<(&'a str, &'a TableDefinition, &'a Tuple)>,
}

impl RowContext for JoinedRow<'_> {
    fn value(&self, column: &ColumnRef) -> Option<&Value> {
        match &column.qualifier {
            Some(q) => self
                .parts
                .iter()
                .find(|(b, _, _)| b == q)
                .and_then(|(_, s, t)| t.get(s, &column.column)),
            None => self.parts.iter().find_map(|(_, s, t)| t.get(s, &column.column)),
        }
    }
}

impl RowContext for std::collections::HashMap<ColumnRef, Value> {
    fn value(&self, column: &ColumnRef) -> Option<&Value> {
        self.get(column)
    }
}
