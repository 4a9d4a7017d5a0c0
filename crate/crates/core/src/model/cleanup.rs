use serde::{Deserialize, Serialize};

use super::{HistoryStore, LatestStore, ModelError, Tuple};
use crate::model::TupleRow;
use crate::sql::{evaluate, parse_condition, Condition, SqlError, TableDefinition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RetentionKind {
    /// Delete rows matching the condition. NOW is bound at each run.
    DeleteWhere(Condition),
    /// Keep only the newest N rows of the table.
    KeepNewest(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanupRule {
    pub table: String,
    pub kind: RetentionKind,
    pub interval_ms: u64,
}

impl CleanupRule {
    pub fn delete_where(schema: &TableDefinition, where_clause: &str, interval_ms: u64) -> Result<Self, SqlError> {
        let condition = parse_condition(where_clause, schema)?;
        Self::new(schema, RetentionKind::DeleteWhere(condition), interval_ms)
    }

    pub fn keep_newest(schema: &TableDefinition, rows: usize, interval_ms: u64) -> Result<Self, SqlError> {
        Self::new(schema, RetentionKind::KeepNewest(rows), interval_ms)
    }

    pub fn new(schema: &TableDefinition, kind: RetentionKind, interval_ms: u64) -> Result<Self, SqlError> {
        if interval_ms == 0 {
            return Err(SqlError::Schema("cleanup interval must be positive".into()));
        }
        if let RetentionKind::DeleteWhere(c) = &kind {
            for col in c.columns() {
                if schema.column(&col.column).is_none() {
                    return Err(SqlError::Schema(format!("cleanup rule names unknown column '{}'", col.column)));
                }
            }
        }
        Ok(CleanupRule { table: schema.name.clone(), kind, interval_ms })
    }
}

/// Decides which rows a rule removes. Decisions are computed for every row
/// before anything is deleted, so an evaluation error leaves the store intact.
fn doomed(rule: &CleanupRule, schema: &TableDefinition, rows: &[&Tuple], now: i64) -> Result<Vec<bool>, ModelError> {
    match &rule.kind {
        RetentionKind::DeleteWhere(c) => rows
            .iter()
            .map(|t| evaluate(c, &TupleRow { schema, tuple: t }, Some(now)).map_err(ModelError::from))
            .collect(),
        RetentionKind::KeepNewest(n) => {
            // newest by timestamp; later arrivals win ties
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.sort_by_key(|&i| (std::cmp::Reverse(rows[i].timestamp()), std::cmp::Reverse(i)));
            let mut out = vec![true; rows.len()];
            for &i in order.iter().take(*n) {
                out[i] = false;
            }
            Ok(out)
        }
    }
}

/// Stores that cleanup rules can run against.
pub trait Cleanable {
    fn schema(&self) -> &TableDefinition;
    /// Removes the rows for which `doomed` is true; returns the count removed.
    fn apply(&mut self, rule: &CleanupRule, now: i64) -> Result<usize, ModelError>;
}

impl Cleanable for HistoryStore {
    fn schema(&self) -> &TableDefinition {
        HistoryStore::schema(self)
    }

    fn apply(&mut self, rule: &CleanupRule, now: i64) -> Result<usize, ModelError> {
        let schema = HistoryStore::schema(self).clone();
        let flags = doomed(rule, &schema, &self.rows().iter().collect::<Vec<_>>(), now)?;
        let mut flags = flags.into_iter();
        let rows = self.rows_mut();
        let before = rows.len();
        rows.retain(|_| !flags.next().unwrap_or(false));
        Ok(before - rows.len())
    }
}

impl Cleanable for LatestStore {
    fn schema(&self) -> &TableDefinition {
        LatestStore::schema(self)
    }

    fn apply(&mut self, rule: &CleanupRule, now: i64) -> Result<usize, ModelError> {
        let schema = LatestStore::schema(self).clone();
        let rows: Vec<&Tuple> = self.rows().collect();
        let flags = doomed(rule, &schema, &rows, now)?;
        let gone: std::collections::HashSet<Tuple> =
            rows.iter().zip(flags).filter(|(_, d)| *d).map(|(t, _)| (*t).clone()).collect();
        Ok(self.retain_keys(|t| !gone.contains(t)))
    }
}

/// Runs one rule against a store at a fixed `now`.
pub fn apply_cleanup(store: &mut dyn Cleanable, rule: &CleanupRule, now: i64) -> Result<usize, ModelError> {
    if rule.table != store.schema().name {
        return Err(ModelError::WrongTable { expected: store.schema().name.clone(), got: rule.table.clone() });
    }
    store.apply(rule, now)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::{parse_create_table, Value};

    const DAY: i64 = 86_400_000;

    fn schema() -> TableDefinition {
        parse_create_table("CREATE TABLE T (k STRING, v INT, ts TIMESTAMP)", &["k"]).unwrap()
    }

    fn t(k: &str, v: i64, ts: i64) -> Tuple {
        Tuple::new(&schema(), vec![Value::Str(k.into()), Value::Int(v), Value::Int(ts)]).unwrap()
    }

    #[test]
    fn week_old_rows_are_deleted() {
        let now = 100 * DAY;
        let mut store = HistoryStore::new(schema());
        store.append(t("a", 1, now - DAY)).unwrap();
        store.append(t("b", 1, now - 8 * DAY)).unwrap();
        let rule = CleanupRule::delete_where(&schema(), "NOW - ts > 604800000", 1000).unwrap();
        assert_eq!(apply_cleanup(&mut store, &rule, now).unwrap(), 1);
        assert_eq!(store.rows(), &[t("a", 1, now - DAY)]);
        // idempotent at a fixed now
        assert_eq!(apply_cleanup(&mut store, &rule, now).unwrap(), 0);
    }

    #[test]
    fn contradictory_rule_deletes_nothing() {
        let mut store = HistoryStore::new(schema());
        store.append(t("a", 1, 5)).unwrap();
        let rule = CleanupRule::delete_where(&schema(), "ts < 0 AND ts > 0", 1000).unwrap();
        assert_eq!(apply_cleanup(&mut store, &rule, 10).unwrap(), 0);
    }

    #[test]
    fn keep_newest_hundred() {
        let mut store = HistoryStore::new(schema());
        for i in 0..150 {
            store.append(t("a", i, i)).unwrap();
        }
        let rule = CleanupRule::keep_newest(&schema(), 100, 1000).unwrap();
        assert_eq!(apply_cleanup(&mut store, &rule, 0).unwrap(), 50);
        assert_eq!(store.rows().first().unwrap().timestamp(), 50);
    }

    #[test]
    fn latest_store_cleanup() {
        let mut store = LatestStore::new(schema());
        store.insert(t("a", 1, 1)).unwrap();
        store.insert(t("b", 1, 100)).unwrap();
        let rule = CleanupRule::delete_where(&schema(), "ts < NOW - 50", 1000).unwrap();
        assert_eq!(apply_cleanup(&mut store, &rule, 120).unwrap(), 1);
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn zero_interval_rejected() {
        assert!(CleanupRule::keep_newest(&schema(), 1, 0).is_err());
    }
}
