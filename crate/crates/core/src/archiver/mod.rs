//! Archiver: continuous sessions on each archived table whose deliveries are
//! re-inserted, unchanged, into a sink producer.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::mediator::{ContinuousSession, MediatorError};
use crate::model::Tuple;
use crate::registry::{ProducerType, QueryClass};
use crate::sql::{parse_select, Catalog, SqlError, TableDefinition, ViewPredicate};
use crate::transport::{ErrorKind, ResultRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchivedTable {
    pub table: String,
    /// Optional WHERE clause restricting what is archived.
    pub condition: Option<String>,
    /// Component id of the sink producer for this table.
    pub sink: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiverSpec {
    pub component_id: String,
    pub tables: Vec<ArchivedTable>,
    #[serde(default = "continuous")]
    pub source_class: QueryClass,
}

fn continuous() -> QueryClass {
    QueryClass::Continuous
}

/// Describes a sink to validate a spec against.
#[derive(Debug, Clone)]
pub struct SinkInfo {
    pub component_id: String,
    pub producer_type: ProducerType,
    pub table: TableDefinition,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ArchiverError {
    #[error("sink mismatch: {0}")]
    SinkMismatch(String),
    #[error("archivers read streams; {0:?} sources are unsupported")]
    SourceUnsupported(QueryClass),
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error(transparent)]
    Mediator(#[from] MediatorError),
}

impl ArchiverError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            ArchiverError::SinkMismatch(_) => ErrorKind::SinkMismatch,
            ArchiverError::SourceUnsupported(_) => ErrorKind::SourceUnsupported,
            ArchiverError::Sql(e) => crate::sql_error_kind(e),
            ArchiverError::Mediator(e) => e.kind(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ArchiverLag {
    /// Delivered minus inserted into the sink.
    pub pending: u64,
    /// Age of the oldest tuple not yet in the sink, by delivery time.
    pub max_age_ms: i64,
}

#[derive(Debug)]
struct Pending {
    sink: String,
    tuple: Tuple,
    delivered_at: i64,
}

#[derive(Debug)]
pub struct Archiver {
    spec: ArchiverSpec,
    sessions: BTreeMap<String, ContinuousSession>,
    sinks: BTreeMap<String, String>,
    pending: VecDeque<Pending>,
    delivered: u64,
    inserted: u64,
}

/// Query text of the continuous session for one archived table.
pub fn source_query(t: &ArchivedTable) -> String {
    match &t.condition {
        Some(c) if !c.trim().is_empty() => format!("SELECT * FROM {} WHERE {}", t.table, c),
        _ => format!("SELECT * FROM {}", t.table),
    }
}

impl Archiver {
    pub fn new(spec: ArchiverSpec, catalog: &Catalog, sinks: &[SinkInfo]) -> Result<Self, ArchiverError> {
        if spec.source_class != QueryClass::Continuous {
            return Err(ArchiverError::SourceUnsupported(spec.source_class));
        }
        let mut sessions = BTreeMap::new();
        let mut sink_of = BTreeMap::new();
        for t in &spec.tables {
            let def = catalog.require(&t.table)?.clone();
            let sink = sinks
                .iter()
                .find(|s| s.component_id == t.sink)
                .ok_or_else(|| ArchiverError::SinkMismatch(format!("sink '{}' does not exist", t.sink)))?;
            if !sink.producer_type.is_insertable() {
                return Err(ArchiverError::SinkMismatch(format!("sink '{}' is not insertable", t.sink)));
            }
            if sink.table.schema_hash() != def.schema_hash() {
                return Err(ArchiverError::SinkMismatch(format!(
                    "sink '{}' holds {}, archived table is {}",
                    t.sink, sink.table.name, def.name
                )));
            }
            if sessions.contains_key(&def.name) {
                return Err(ArchiverError::SinkMismatch(format!("table {} archived twice", def.name)));
            }
            let text = source_query(t);
            let query = parse_select(&text, catalog)?;
            sessions.insert(def.name.clone(), ContinuousSession::new(&text, query, def.clone())?);
            sink_of.insert(def.name.clone(), t.sink.clone());
        }
        Ok(Archiver { spec, sessions, sinks: sink_of, pending: VecDeque::new(), delivered: 0, inserted: 0 })
    }

    pub fn spec(&self) -> &ArchiverSpec {
        &self.spec
    }

    pub fn component_id(&self) -> &str {
        &self.spec.component_id
    }

    pub fn session_mut(&mut self, table: &str) -> Option<&mut ContinuousSession> {
        self.sessions.get_mut(table)
    }

    pub fn sessions_mut(&mut self) -> impl Iterator<Item = (&String, &mut ContinuousSession)> {
        self.sessions.iter_mut()
    }

    pub fn tables(&self) -> impl Iterator<Item = &str> {
        self.sessions.keys().map(String::as_str)
    }

    /// Accepts rows pushed for `table`; returns how many were queued.
    pub fn deliver(&mut self, table: &str, rows: Vec<ResultRow>, now: i64) -> usize {
        let (Some(session), Some(sink)) = (self.sessions.get_mut(table), self.sinks.get(table)) else {
            return 0;
        };
        let accepted = session.on_rows(rows, now);
        let n = accepted.len();
        for row in accepted {
            for tuple in row.tuples {
                self.pending.push_back(Pending { sink: sink.clone(), tuple, delivered_at: now });
            }
        }
        self.delivered += n as u64;
        n
    }

    /// Oldest queued tuples bound for one sink, without removing them.
    pub fn next_batch(&self, max: usize) -> Option<(String, Vec<Tuple>)> {
        let first = self.pending.front()?;
        let batch = self
            .pending
            .iter()
            .take(max)
            .take_while(|p| p.sink == first.sink)
            .map(|p| p.tuple.clone())
            .collect();
        Some((first.sink.clone(), batch))
    }

    /// The sink acknowledged the first `n` queued tuples.
    pub fn confirm(&mut self, n: usize) {
        let n = n.min(self.pending.len());
        self.pending.drain(..n);
        self.inserted += n as u64;
    }

    /// The sink rejected the first `n` queued tuples for good.
    pub fn discard(&mut self, n: usize) {
        let n = n.min(self.pending.len());
        self.pending.drain(..n);
        self.delivered -= n as u64;
    }

    pub fn lag(&self, now: i64) -> ArchiverLag {
        ArchiverLag {
            pending: self.delivered - self.inserted,
            max_age_ms: self.pending.front().map_or(0, |p| (now - p.delivered_at).max(0)),
        }
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }
}

/// View for a sink fed by sources with these views: atoms every source
/// shares. Identical views carry over whole; disjoint ones leave the
/// universal predicate.
pub fn sink_view(sources: &[ViewPredicate]) -> ViewPredicate {
    let Some((first, rest)) = sources.split_first() else {
        return ViewPredicate::universal();
    };
    let common: Vec<(String, crate::sql::Value)> = first
        .atoms()
        .iter()
        .filter(|(c, v)| rest.iter().all(|r| r.binding(c) == Some(v)))
        .cloned()
        .collect();
    ViewPredicate::new(common).expect("subset of a valid view")
}
