//! The five producer types behind one insert/query surface, and the host
//! that serves several instances from one endpoint.

mod instance;

pub use instance::{CanonicalHandler, Delivery, ProducerConfig, ProducerInstance, DEFAULT_RING_CAPACITY};

use std::collections::BTreeMap;

use crate::model::{history_query, Tuple};
use crate::registry::{ProducerType, QueryClass};
use crate::sql::{parse_select, Catalog, Query, SqlError, TableDefinition};
use crate::transport::{ErrorKind, ResultRow, StartQuery};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProducerError {
    #[error("view violation: {0}")]
    ViewViolation(String),
    #[error("canonical producers do not accept inserts")]
    NotInsertable,
    #[error("storage error: {0}")]
    Storage(String),
    #[error("{1:?} producers do not answer {0:?} queries")]
    UnsupportedQueryClass(QueryClass, ProducerType),
    #[error("{0:?} producers hold no store to clean")]
    UnsupportedProducerType(ProducerType),
    #[error("unknown producer '{0}'")]
    UnknownProducer(String),
    #[error("producer is controlled by archiver '{0}'")]
    Busy(String),
    #[error("canonical handler failed: {0}")]
    Handler(String),
    #[error("bad producer configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sql(#[from] SqlError),
}

impl ProducerError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            ProducerError::ViewViolation(_) => ErrorKind::ViewViolation,
            ProducerError::NotInsertable => ErrorKind::NotInsertable,
            ProducerError::Storage(_) => ErrorKind::Storage,
            ProducerError::UnsupportedQueryClass(..) => ErrorKind::UnsupportedQueryClass,
            ProducerError::UnsupportedProducerType(_) => ErrorKind::UnsupportedProducerType,
            ProducerError::UnknownProducer(_) => ErrorKind::UnknownComponent,
            ProducerError::Sql(e) => crate::sql_error_kind(e),
            ProducerError::Busy(_) | ProducerError::Handler(_) | ProducerError::Config(_) => ErrorKind::Internal,
        }
    }
}

/// What a host sends back for a StartQuery.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryAnswer {
    /// One-shot result, followed by EndOfResults.
    Rows(Vec<ResultRow>),
    /// Continuous subscription: (instance, subscription id) and the backlog.
    Subscribed { producer: String, subscription: u64, backlog: Vec<ResultRow> },
}

/// Producer instances sharing one endpoint.
#[derive(Default)]
pub struct ProducerHost {
    instances: BTreeMap<String, ProducerInstance>,
}

impl ProducerHost {
    pub fn new() -> Self {
        ProducerHost::default()
    }

    pub fn add(&mut self, instance: ProducerInstance) -> Result<(), ProducerError> {
        let id = instance.component_id().to_string();
        if self.instances.contains_key(&id) {
            return Err(ProducerError::Config(format!("producer '{id}' already exists")));
        }
        self.instances.insert(id, instance);
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> Option<ProducerInstance> {
        self.instances.remove(id)
    }

    pub fn get(&self, id: &str) -> Option<&ProducerInstance> {
        self.instances.get(id)
    }

    pub fn get_mut(&mut self, id: &str) -> Result<&mut ProducerInstance, ProducerError> {
        self.instances.get_mut(id).ok_or_else(|| ProducerError::UnknownProducer(id.to_string()))
    }

    pub fn instances(&self) -> impl Iterator<Item = &ProducerInstance> {
        self.instances.values()
    }

    pub fn instances_mut(&mut self) -> impl Iterator<Item = &mut ProducerInstance> {
        self.instances.values_mut()
    }

    fn catalog(&self) -> Catalog {
        let mut cat = Catalog::new();
        for i in self.instances.values() {
            // instances of one table share its definition
            let _ = cat.declare(i.table().clone());
        }
        cat
    }

    pub fn start_query(&mut self, req: &StartQuery, now: i64) -> Result<QueryAnswer, ProducerError> {
        let query = parse_select(&req.query, &self.catalog())?;
        if req.producers.is_empty() {
            return Err(ProducerError::Config("StartQuery names no producer".into()));
        }
        for id in &req.producers {
            self.get_mut(id)?;
        }
        match req.query_class {
            QueryClass::Continuous => {
                if query.is_join() || req.producers.len() != 1 {
                    return Err(ProducerError::UnsupportedQueryClass(
                        QueryClass::Continuous,
                        self.get_mut(&req.producers[0])?.producer_type(),
                    ));
                }
                let inst = self.get_mut(&req.producers[0])?;
                let residual = req.residual.clone().or_else(|| inst.residual_for(&query));
                let (subscription, backlog) = inst.subscribe(residual, req.resume_after, now)?;
                Ok(QueryAnswer::Subscribed { producer: req.producers[0].clone(), subscription, backlog })
            }
            class if !query.is_join() => {
                let mut rows = Vec::new();
                for id in &req.producers {
                    let inst = self.get_mut(id)?;
                    let residual = match (&req.residual, req.producers.len()) {
                        (Some(r), 1) => Some(r.clone()),
                        _ => inst.residual_for(&query),
                    };
                    for t in inst.rows(&query, class, residual.as_ref(), now)? {
                        rows.push(ResultRow { producer: id.clone(), epoch: inst.epoch(), seq: 0, backlog: false, tuples: vec![t] });
                    }
                }
                Ok(QueryAnswer::Rows(rows))
            }
            class => self.answer_join(&query, class, &req.producers, now).map(QueryAnswer::Rows),
        }
    }

    /// Joins the named local instances table by table.
    fn answer_join(&mut self, query: &Query, class: QueryClass, ids: &[String], now: i64) -> Result<Vec<ResultRow>, ProducerError> {
        let mut per_table: Vec<(TableDefinition, Vec<Tuple>, Vec<String>)> = Vec::new();
        for t in &query.tables {
            let mut rows = Vec::new();
            let mut names = Vec::new();
            let mut def = None;
            for id in ids {
                let inst = self.get_mut(id)?;
                if inst.table().name != t.table {
                    continue;
                }
                def = Some(inst.table().clone());
                rows.extend(inst.rows(query, class, None, now)?);
                names.push(id.clone());
            }
            let def = def.ok_or_else(|| {
                ProducerError::Sql(SqlError::Schema(format!("no named producer here serves table {}", t.table)))
            })?;
            per_table.push((def, rows, names));
        }
        let sources: Vec<(&TableDefinition, &[Tuple])> = per_table.iter().map(|(d, r, _)| (d, r.as_slice())).collect();
        let joined = history_query(query, &sources, now).map_err(|e| match e {
            crate::model::ModelError::Sql(s) => ProducerError::Sql(s),
            other => ProducerError::Storage(other.to_string()),
        })?;
        let mut names: Vec<String> = per_table.iter().flat_map(|(_, _, n)| n.clone()).collect();
        names.dedup();
        let producer = names.join("+");
        let mut out: Vec<ResultRow> = joined
            .into_iter()
            .map(|tuples| ResultRow { producer: producer.clone(), epoch: 0, seq: 0, backlog: false, tuples })
            .collect();
        if class == QueryClass::Latest {
            out.sort_by(|a, b| a.tuples.cmp(&b.tuples));
            out.dedup_by(|a, b| a.tuples == b.tuples);
        }
        Ok(out)
    }
}
