use serde::{Deserialize, Serialize};

use crate::sql::{Query, ViewPredicate};
use crate::transport::Endpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProducerType {
    Stream,
    ResilientStream,
    DataBase,
    Latest,
    Canonical,
}

impl ProducerType {
    pub const ALL: [ProducerType; 5] = [
        ProducerType::Stream,
        ProducerType::ResilientStream,
        ProducerType::DataBase,
        ProducerType::Latest,
        ProducerType::Canonical,
    ];

    /// The capability matrix.
    pub fn supports(self, class: QueryClass) -> bool {
        use ProducerType::*;
        match class {
            QueryClass::Continuous => matches!(self, Stream | ResilientStream),
            QueryClass::Latest => matches!(self, Latest | Canonical),
            QueryClass::History => matches!(self, DataBase | Canonical),
        }
    }

    pub fn is_insertable(self) -> bool {
        self != ProducerType::Canonical
    }

    pub fn name(self) -> &'static str {
        match self {
            ProducerType::Stream => "stream",
            ProducerType::ResilientStream => "resilient",
            ProducerType::DataBase => "database",
            ProducerType::Latest => "latest",
            ProducerType::Canonical => "canonical",
        }
    }
}

impl std::str::FromStr for ProducerType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "stream" => Ok(ProducerType::Stream),
            "resilient" | "resilientstream" | "resilient-stream" => Ok(ProducerType::ResilientStream),
            "database" | "db" => Ok(ProducerType::DataBase),
            "latest" => Ok(ProducerType::Latest),
            "canonical" => Ok(ProducerType::Canonical),
            other => Err(format!("unknown producer type '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueryClass {
    Continuous,
    Latest,
    History,
}

impl QueryClass {
    pub fn name(self) -> &'static str {
        match self {
            QueryClass::Continuous => "continuous",
            QueryClass::Latest => "latest",
            QueryClass::History => "history",
        }
    }
}

impl std::str::FromStr for QueryClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "continuous" | "c" => Ok(QueryClass::Continuous),
            "latest" | "l" => Ok(QueryClass::Latest),
            "history" | "h" => Ok(QueryClass::History),
            other => Err(format!("unknown query class '{other}'")),
        }
    }
}

/// (master registry, counter). Only comparable between stamps of one master.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VersionStamp {
    pub master: String,
    pub counter: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProducerEntry {
    pub component_id: String,
    pub endpoint: Endpoint,
    pub producer_type: ProducerType,
    pub table: String,
    pub view: ViewPredicate,
    pub termination_deadline: i64,
    pub interval_ms: u64,
    pub epoch: u64,
    pub master: String,
    pub version: VersionStamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumerEntry {
    pub component_id: String,
    pub endpoint: Endpoint,
    pub query_text: String,
    pub query: Query,
    pub query_class: QueryClass,
    pub termination_deadline: i64,
    pub interval_ms: u64,
    pub master: String,
    pub version: VersionStamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Entry {
    Producer(ProducerEntry),
    Consumer(ConsumerEntry),
}

impl Entry {
    pub fn component_id(&self) -> &str {
        match self {
            Entry::Producer(p) => &p.component_id,
            Entry::Consumer(c) => &c.component_id,
        }
    }

    pub fn deadline(&self) -> i64 {
        match self {
            Entry::Producer(p) => p.termination_deadline,
            Entry::Consumer(c) => c.termination_deadline,
        }
    }

    pub fn interval_ms(&self) -> u64 {
        match self {
            Entry::Producer(p) => p.interval_ms,
            Entry::Consumer(c) => c.interval_ms,
        }
    }

    pub(crate) fn set_deadline(&mut self, deadline: i64) {
        match self {
            Entry::Producer(p) => p.termination_deadline = deadline,
            Entry::Consumer(c) => c.termination_deadline = deadline,
        }
    }

    pub(crate) fn set_version(&mut self, v: VersionStamp) {
        match self {
            Entry::Producer(p) => p.version = v,
            Entry::Consumer(c) => c.version = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RecordState {
    Live(Entry),
    /// Removed (unregistered or expired); kept until `gc_after` so replicas
    /// learn of the removal.
    Tombstone { gc_after: i64 },
}

/// A registry row, live or tombstoned, keyed by (master, component id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub component_id: String,
    pub master: String,
    pub version: u64,
    pub state: RecordState,
}

impl Record {
    pub fn live(&self) -> Option<&Entry> {
        match &self.state {
            RecordState::Live(e) => Some(e),
            RecordState::Tombstone { .. } => None,
        }
    }
}

/// Everything one registry masters, tombstones included, plus its schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrySnapshot {
    pub from: String,
    pub tables: Vec<crate::sql::TableDefinition>,
    pub records: Vec<Record>,
}
