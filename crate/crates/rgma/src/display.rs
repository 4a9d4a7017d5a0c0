//! Projection of result rows onto a query's select list, and output
//! formats.

use rgma_core::sql::{Catalog, ColumnRef, Projection, Query, Value};
use rgma_core::transport::ResultRow;

/// Where each output column comes from: (table position, column index).
#[derive(Debug, Clone, PartialEq)]
pub struct Columns {
    pub labels: Vec<String>,
    sources: Vec<(usize, usize)>,
}

impl Columns {
    /// Resolves the select list. The query must already have been parsed
    /// against `catalog`.
    pub fn of(query: &Query, catalog: &Catalog) -> Columns {
        let schemas: Vec<_> = query.tables.iter().map(|t| catalog.get(&t.table).expect("parsed against catalog")).collect();
        let join = query.is_join();
        let mut labels = Vec::new();
        let mut sources = Vec::new();
        match &query.projection {
            Projection::All => {
                for (ti, s) in schemas.iter().enumerate() {
                    for (ci, c) in s.columns.iter().enumerate() {
                        labels.push(if join { format!("{}.{}", query.tables[ti].binding(), c.name) } else { c.name.clone() });
                        sources.push((ti, ci));
                    }
                }
            }
            Projection::Columns(cols) => {
                for ColumnRef { qualifier, column } in cols {
                    let ti = match qualifier {
                        Some(q) => query.tables.iter().position(|t| t.binding() == q),
                        None => schemas.iter().position(|s| s.column_index(column).is_some()),
                    }
                    .expect("resolved by the parser");
                    let ci = schemas[ti].column_index(column).expect("resolved by the parser");
                    labels.push(if join { format!("{}.{column}", query.tables[ti].binding()) } else { column.clone() });
                    sources.push((ti, ci));
                }
            }
        }
        Columns { labels, sources }
    }

    pub fn project<'a>(&self, row: &'a ResultRow) -> Vec<&'a Value> {
        self.sources.iter().map(|(t, c)| &row.tuples[*t].values()[*c]).collect()
    }
}

fn tsv_field(v: &Value) -> String {
    v.to_string().replace(['\t', '\n', '\r'], " ")
}

pub fn tsv_header(cols: &Columns) -> String {
    cols.labels.join("\t")
}

pub fn tsv_row(cols: &Columns, row: &ResultRow) -> String {
    cols.project(row).into_iter().map(tsv_field).collect::<Vec<_>>().join("\t")
}

pub fn json_value(v: &Value) -> serde_json::Value {
    match v {
        Value::Int(i) | Value::Timestamp(i) => (*i).into(),
        Value::Real(r) => serde_json::Number::from_f64(*r).map_or(serde_json::Value::Null, Into::into),
        Value::Str(s) => s.clone().into(),
    }
}

/// One row as a JSON object keyed by column label, plus its origin.
pub fn json_row(cols: &Columns, row: &ResultRow) -> serde_json::Value {
    let mut m = serde_json::Map::new();
    for (label, v) in cols.labels.iter().zip(cols.project(row)) {
        m.insert(label.clone(), json_value(v));
    }
    m.insert("_producer".into(), row.producer.clone().into());
    serde_json::Value::Object(m)
}
