use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::types::{canonical_ident, TableDefinition};
use super::SqlError;

/// The virtual schema shared by every component of one organisation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    tables: BTreeMap<String, TableDefinition>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a table. Re-declaring an identical definition is accepted; a
    /// conflicting one is not.
    pub fn declare(&mut self, def: TableDefinition) -> Result<(), SqlError> {
        match self.tables.get(&def.name) {
            Some(existing) if *existing == def => Ok(()),
            Some(_) => Err(SqlError::Schema(format!("table {} already declared with a different definition", def.name))),
            None => {
                self.tables.insert(def.name.clone(), def);
                Ok(())
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&TableDefinition> {
        self.tables.get(&canonical_ident(name))
    }

    pub fn require(&self, name: &str) -> Result<&TableDefinition, SqlError> {
        self.get(name).ok_or_else(|| SqlError::Schema(format!("unknown table '{name}'")))
    }

    pub fn tables(&self) -> impl Iterator<Item = &TableDefinition> {
        self.tables.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

impl FromIterator<TableDefinition> for Catalog {
    fn from_iter<I: IntoIterator<Item = TableDefinition>>(iter: I) -> Self {
        Catalog { tables: iter.into_iter().map(|t| (t.name.clone(), t)).collect() }
    }
}
