use std::collections::HashMap;

use super::{ModelError, Tuple};
use crate::model::{JoinedRow, TupleRow};
use crate::sql::{evaluate_opt, ColumnRef, Query, TableDefinition, Value};

/// Every tuple ever appended, until cleanup removes it.
#[derive(Debug, Clone)]
pub struct HistoryStore {
    schema: TableDefinition,
    rows: Vec<Tuple>,
}

impl HistoryStore {
    pub fn new(schema: TableDefinition) -> Self {
        HistoryStore { schema, rows: Vec::new() }
    }

    pub fn schema(&self) -> &TableDefinition {
        &self.schema
    }

    pub fn append(&mut self, tuple: Tuple) -> Result<(), ModelError> {
        if tuple.table() != self.schema.name {
            return Err(ModelError::WrongTable { expected: self.schema.name.clone(), got: tuple.table().into() });
        }
        self.rows.push(tuple);
        Ok(())
    }

    pub fn rows(&self) -> &[Tuple] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn query(&self, condition: Option<&crate::sql::Condition>, now: i64) -> Result<Vec<Tuple>, ModelError> {
        let mut out = Vec::new();
        for t in &self.rows {
            if evaluate_opt(condition, &TupleRow { schema: &self.schema, tuple: t }, Some(now))? {
                out.push(t.clone());
            }
        }
        Ok(out)
    }

    pub(crate) fn rows_mut(&mut self) -> &mut Vec<Tuple> {
        &mut self.rows
    }
}

/// A result row: one tuple per table of the query, in FROM order.
pub type Row = Vec<Tuple>;

/// Evaluates a (possibly multi-table) query over in-memory tables. `sources`
/// follows the order of `query.tables`. Rows are returned unprojected.
pub fn history_query(query: &Query, sources: &[(&TableDefinition, &[Tuple])], now: i64) -> Result<Vec<Row>, ModelError> {
    if sources.len() != query.tables.len() {
        return Err(ModelError::Sql(crate::sql::SqlError::Schema(format!(
            "query names {} tables, {} supplied",
            query.tables.len(),
            sources.len()
        ))));
    }
    let bindings: Vec<&str> = query.tables.iter().map(|t| t.binding()).collect();
    let condition = query.condition.as_ref();

    let mut partial: Vec<Vec<&Tuple>> = vec![vec![]];
    for (i, (schema, tuples)) in sources.iter().enumerate() {
        // equalities linking this binding to an earlier one
        let links: Vec<(usize, usize, usize)> = query
            .join_equalities
            .iter()
            .filter_map(|(a, b)| {
                let (mine, other) = if a.qualifier.as_deref() == Some(bindings[i]) {
                    (a, b)
                } else if b.qualifier.as_deref() == Some(bindings[i]) {
                    (b, a)
                } else {
                    return None;
                };
                let j = bindings[..i].iter().position(|x| Some(*x) == other.qualifier.as_deref())?;
                let (mine_idx, other_idx) = (schema.column_index(&mine.column)?, sources[j].0.column_index(&other.column)?);
                // hashing needs identical value variants; mixed types fall back to the recheck below
                (schema.columns[mine_idx].ty == sources[j].0.columns[other_idx].ty).then_some((mine_idx, j, other_idx))
            })
            .collect();
        let mut next = Vec::new();
        if links.is_empty() {
            for p in &partial {
                for t in tuples.iter() {
                    let mut row = p.clone();
                    row.push(t);
                    next.push(row);
                }
            }
        } else {
            let mut index: HashMap<Vec<&Value>, Vec<&Tuple>> = HashMap::new();
            for t in tuples.iter() {
                index.entry(links.iter().map(|(c, _, _)| &t.values()[*c]).collect()).or_default().push(t);
            }
            for p in &partial {
                let probe: Vec<&Value> = links.iter().map(|(_, j, c)| &p[*j].values()[*c]).collect();
                if let Some(matches) = index.get(&probe) {
                    for t in matches {
                        let mut row = p.clone();
                        row.push(t);
                        next.push(row);
                    }
                }
            }
        }
        partial = next;
    }

    let mut out = Vec::new();
    for row in partial {
        let ctx = JoinedRow {
            parts: row.iter().enumerate().map(|(i, t)| (bindings[i], sources[i].0, *t)).collect(),
        };
        // join equalities spanning non-adjacent bindings are rechecked here
        let joined_ok = query.join_equalities.iter().all(|(a, b)| equal_cols(&ctx, a, b));
        if joined_ok && evaluate_opt(condition, &ctx, Some(now))? {
            out.push(row.into_iter().cloned().collect());
        }
    }
    Ok(out)
}

fn equal_cols(ctx: &JoinedRow<'_>, a: &ColumnRef, b: &ColumnRef) -> bool {
    use crate::model::RowContext;
    match (ctx.value(a), ctx.value(b)) {
        (Some(x), Some(y)) => x.sql_cmp(y) == Some(std::cmp::Ordering::Equal),
        _ => false,
    }
}
