use std::collections::BTreeMap;

use super::{classify, MediatorError};
use crate::model::TupleRow;
use crate::registry::{ProducerEntry, QueryClass};
use crate::sql::{evaluate_opt, relevant, substitute_view, Condition, Query, TableDefinition};
use crate::transport::{Cursor, ResultRow, StartQuery};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LinkState {
    Pending,
    Connected,
    Disconnected,
}

#[derive(Debug, Clone)]
struct Link {
    entry: ProducerEntry,
    state: LinkState,
    cursor: Option<Cursor>,
}

/// A request to (re)subscribe to one producer.
#[derive(Debug, Clone, PartialEq)]
pub struct Subscribe {
    pub producer: ProducerEntry,
    pub request: StartQuery,
}

/// State of one continuous query: which producers feed it and how far each
/// stream has been consumed.
#[derive(Debug, Clone)]
pub struct ContinuousSession {
    query_text: String,
    query: Query,
    table: TableDefinition,
    condition: Option<Condition>,
    links: BTreeMap<String, Link>,
    delivered: u64,
}

impl ContinuousSession {
    pub fn new(query_text: &str, query: Query, table: TableDefinition) -> Result<Self, MediatorError> {
        classify(&query, QueryClass::Continuous)?;
        let condition = query.condition.as_ref().map(Condition::unqualified);
        Ok(ContinuousSession {
            query_text: query_text.to_string(),
            query,
            table,
            condition,
            links: BTreeMap::new(),
            delivered: 0,
        })
    }

    pub fn query(&self) -> &Query {
        &self.query
    }

    pub fn table(&self) -> &TableDefinition {
        &self.table
    }

    fn wants(&self, p: &ProducerEntry) -> bool {
        p.producer_type.supports(QueryClass::Continuous)
            && p.table == self.table.name
            && relevant(&p.view, &self.query, &self.table).unwrap_or(false)
    }

    fn subscribe(&mut self, p: &ProducerEntry) -> Option<Subscribe> {
        if !self.wants(p) {
            return None;
        }
        let cursor = match self.links.get(&p.component_id) {
            Some(l) if l.state != LinkState::Disconnected && l.entry.endpoint == p.endpoint && l.entry.epoch == p.epoch => {
                return None
            }
            Some(l) => l.cursor,
            None => None,
        };
        self.links.insert(p.component_id.clone(), Link { entry: p.clone(), state: LinkState::Pending, cursor });
        let binding = self.query.binding_of(&p.table);
        Some(Subscribe {
            producer: p.clone(),
            request: StartQuery {
                query: self.query_text.clone(),
                query_class: QueryClass::Continuous,
                producers: vec![p.component_id.clone()],
                residual: self.query.condition.as_ref().map(|c| substitute_view(c, binding, &p.view).unqualified()),
                resume_after: cursor,
            },
        })
    }

    /// Handles a registry notification about a new producer.
    pub fn on_notify(&mut self, producer: &ProducerEntry) -> Option<Subscribe> {
        self.subscribe(producer)
    }

    /// Reconciles with a fresh producer list (registration or heartbeat
    /// reply): new, moved or disconnected producers get (re)subscribed.
    pub fn replan(&mut self, producers: &[ProducerEntry]) -> Vec<Subscribe> {
        producers.iter().filter_map(|p| self.subscribe(p)).collect()
    }

    pub fn on_subscribed(&mut self, producer: &str) {
        if let Some(l) = self.links.get_mut(producer) {
            l.state = LinkState::Connected;
        }
    }

    /// The producer's stream ended or its connection failed. The position is
    /// kept so a later subscription resumes without gaps or repeats.
    pub fn on_disconnect(&mut self, producer: &str) {
        if let Some(l) = self.links.get_mut(producer) {
            l.state = LinkState::Disconnected;
        }
    }

    /// Filters pushed rows: drops repeats of already seen positions and
    /// anything failing the query condition.
    pub fn on_rows(&mut self, rows: Vec<ResultRow>, now: i64) -> Vec<ResultRow> {
        let mut out = Vec::new();
        for row in rows {
            let Some(link) = self.links.get_mut(&row.producer) else { continue };
            if let Some(c) = link.cursor {
                if c.epoch == row.epoch && row.seq <= c.seq {
                    continue;
                }
            }
            link.cursor = Some(crate::transport::Cursor { epoch: row.epoch, seq: row.seq });
            let [tuple] = row.tuples.as_slice() else { continue };
            let ok = evaluate_opt(self.condition.as_ref(), &TupleRow { schema: &self.table, tuple }, Some(now)).unwrap_or(false);
            if ok && tuple.table() == self.table.name {
                self.delivered += 1;
                out.push(row);
            }
        }
        out
    }

    pub fn connected(&self) -> Vec<&str> {
        self.links.iter().filter(|(_, l)| l.state == LinkState::Connected).map(|(k, _)| k.as_str()).collect()
    }

    pub fn cursor(&self, producer: &str) -> Option<Cursor> {
        self.links.get(producer).and_then(|l| l.cursor)
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }
}
