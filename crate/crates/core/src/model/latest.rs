use std::collections::BTreeMap;

use super::{ModelError, Tuple};
use crate::sql::{evaluate_opt, Condition, TableDefinition};
use crate::model::{DefiningKeyValue, TupleRow};

/// Latest-value replacement: the incoming tuple wins when there is no
/// existing tuple or its timestamp is at least as recent.
pub fn latest_merge(
    existing: Option<&Tuple>,
    incoming: Tuple,
    schema: &TableDefinition,
) -> Result<Tuple, ModelError> {
    match existing {
        None => Ok(incoming),
        Some(old) => {
            if old.table() != incoming.table() || old.key(schema) != incoming.key(schema) {
                return Err(ModelError::KeyMismatch);
            }
            if incoming.timestamp() >= old.timestamp() {
                Ok(incoming)
            } else {
                Ok(old.clone())
            }
        }
    }
}

/// One tuple per defining key: the most recent.
#[derive(Debug, Clone)]
pub struct LatestStore {
    schema: TableDefinition,
    rows: BTreeMap<DefiningKeyValue, Tuple>,
}

impl LatestStore {
    pub fn new(schema: TableDefinition) -> Self {
        LatestStore { schema, rows: BTreeMap::new() }
    }

    pub fn schema(&self) -> &TableDefinition {
        &self.schema
    }

    /// Returns whether the incoming tuple replaced (or created) the stored one.
    pub fn insert(&mut self, tuple: Tuple) -> Result<bool, ModelError> {
        if tuple.table() != self.schema.name {
            return Err(ModelError::WrongTable { expected: self.schema.name.clone(), got: tuple.table().into() });
        }
        let key = tuple.key(&self.schema);
        let replace = match self.rows.get(&key) {
            None => true,
            Some(existing) => latest_merge(Some(existing), tuple.clone(), &self.schema)? == tuple
                && tuple.timestamp() >= existing.timestamp(),
        };
        if replace {
            self.rows.insert(key, tuple);
        }
        Ok(replace)
    }

    pub fn get(&self, key: &DefiningKeyValue) -> Option<&Tuple> {
        self.rows.get(key)
    }

    pub fn rows(&self) -> impl Iterator<Item = &Tuple> {
        self.rows.values()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn query(&self, condition: Option<&Condition>, now: i64) -> Result<Vec<Tuple>, ModelError> {
        let mut out = Vec::new();
        for t in self.rows.values() {
            if evaluate_opt(condition, &TupleRow { schema: &self.schema, tuple: t }, Some(now))? {
                out.push(t.clone());
            }
        }
        Ok(out)
    }

    pub(crate) fn retain_keys(&mut self, keep: impl Fn(&Tuple) -> bool) -> usize {
        let before = self.rows.len();
        self.rows.retain(|_, t| keep(t));
        before - self.rows.len()
    }
}
