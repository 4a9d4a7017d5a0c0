use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::ProducerError;
use crate::model::{apply_cleanup, Cleanable, CleanupRule, Durability, HistoryStore, LatestStore, RecordFile, Tuple};
use crate::registry::{ProducerType, QueryClass};
use crate::sql::{evaluate_opt, substitute_view, Condition, Query, TableDefinition, ViewPredicate};
use crate::transport::{Cursor, ResultRow};
use crate::model::TupleRow;

pub const DEFAULT_RING_CAPACITY: usize = 1024;

/// User code answering queries for a canonical producer.
pub trait CanonicalHandler: Send {
    /// Query classes this handler answers (Latest and/or History).
    fn classes(&self) -> Vec<QueryClass>;
    fn answer(&mut self, query: &Query, class: QueryClass, now: i64) -> Result<Vec<Tuple>, String>;
}

#[derive(Debug, Clone)]
pub struct ProducerConfig {
    pub component_id: String,
    pub producer_type: ProducerType,
    pub table: TableDefinition,
    pub view: ViewPredicate,
    pub ring_capacity: usize,
    pub interval_ms: u64,
    /// Backing file. Required for resilient stream producers; optional for
    /// database and latest producers; ignored otherwise.
    pub storage: Option<PathBuf>,
}

impl ProducerConfig {
    pub fn new(component_id: &str, producer_type: ProducerType, table: TableDefinition, view: ViewPredicate) -> Self {
        ProducerConfig {
            component_id: component_id.to_string(),
            producer_type,
            table,
            view,
            ring_capacity: DEFAULT_RING_CAPACITY,
            interval_ms: 60_000,
            storage: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WalRecord {
    seq: u64,
    tuple: Tuple,
}

enum Backing {
    Stream { ring: VecDeque<(u64, Tuple)>, wal: Option<RecordFile<WalRecord>> },
    History { store: HistoryStore, file: Option<RecordFile<Tuple>> },
    Latest { store: LatestStore, file: Option<RecordFile<Tuple>> },
    Canonical(Box<dyn CanonicalHandler>),
}

struct ScheduledRule {
    rule: CleanupRule,
    next_due: i64,
}

/// A tuple pushed to one continuous subscription.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub subscription: u64,
    pub row: ResultRow,
}

pub struct ProducerInstance {
    config: ProducerConfig,
    epoch: u64,
    next_seq: u64,
    backing: Backing,
    subscriptions: BTreeMap<u64, Option<Condition>>,
    next_subscription: u64,
    cleanup: Vec<ScheduledRule>,
    owner: Option<String>,
}

fn storage_err(e: impl std::fmt::Display) -> ProducerError {
    ProducerError::Storage(e.to_string())
}

impl ProducerInstance {
    /// Creates (or, for file-backed types, recovers) an instance. `new_epoch`
    /// is used unless a recovered log already carries one.
    pub fn open(config: ProducerConfig, new_epoch: u64) -> Result<Self, ProducerError> {
        if config.ring_capacity == 0 {
            return Err(ProducerError::Config("ring capacity must be positive".into()));
        }
        for (col, _) in config.view.atoms() {
            if config.table.column(col).is_none() {
                return Err(ProducerError::Config(format!("view names unknown column '{col}'")));
            }
        }
        let hash = config.table.schema_hash();
        let mut epoch = new_epoch;
        let mut next_seq = 1;
        let backing = match config.producer_type {
            ProducerType::Stream => Backing::Stream { ring: VecDeque::new(), wal: None },
            ProducerType::ResilientStream => {
                let path = config
                    .storage
                    .as_ref()
                    .ok_or_else(|| ProducerError::Config("resilient stream producer needs a log file".into()))?;
                let (wal, records) =
                    RecordFile::<WalRecord>::open(path, hash, new_epoch, Durability::Sync).map_err(storage_err)?;
                epoch = wal.epoch();
                next_seq = records.last().map_or(1, |r| r.seq + 1);
                let skip = records.len().saturating_sub(config.ring_capacity);
                let ring = records.into_iter().skip(skip).map(|r| (r.seq, r.tuple)).collect();
                Backing::Stream { ring, wal: Some(wal) }
            }
            ProducerType::DataBase => {
                let mut store = HistoryStore::new(config.table.clone());
                let file = match &config.storage {
                    Some(path) => {
                        let (f, rows) =
                            RecordFile::<Tuple>::open(path, hash, new_epoch, Durability::Buffered).map_err(storage_err)?;
                        for t in rows {
                            store.append(t).map_err(storage_err)?;
                        }
                        Some(f)
                    }
                    None => None,
                };
                Backing::History { store, file }
            }
            ProducerType::Latest => {
                let mut store = LatestStore::new(config.table.clone());
                let file = match &config.storage {
                    Some(path) => {
                        let (f, rows) =
                            RecordFile::<Tuple>::open(path, hash, new_epoch, Durability::Buffered).map_err(storage_err)?;
                        for t in rows {
                            store.insert(t).map_err(storage_err)?;
                        }
                        Some(f)
                    }
                    None => None,
                };
                Backing::Latest { store, file }
            }
            ProducerType::Canonical => {
                return Err(ProducerError::Config("canonical producers are created with open_canonical".into()))
            }
        };
        Ok(Self::assemble(config, epoch, next_seq, backing))
    }

    pub fn open_canonical(config: ProducerConfig, handler: Box<dyn CanonicalHandler>) -> Result<Self, ProducerError> {
        if config.producer_type != ProducerType::Canonical {
            return Err(ProducerError::Config("open_canonical needs producer type Canonical".into()));
        }
        Ok(Self::assemble(config, 0, 1, Backing::Canonical(handler)))
    }

    fn assemble(config: ProducerConfig, epoch: u64, next_seq: u64, backing: Backing) -> Self {
        ProducerInstance {
            config,
            epoch,
            next_seq,
            backing,
            subscriptions: BTreeMap::new(),
            next_subscription: 1,
            cleanup: Vec::new(),
            owner: None,
        }
    }

    pub fn config(&self) -> &ProducerConfig {
        &self.config
    }

    pub fn component_id(&self) -> &str {
        &self.config.component_id
    }

    pub fn producer_type(&self) -> ProducerType {
        self.config.producer_type
    }

    pub fn table(&self) -> &TableDefinition {
        &self.config.table
    }

    pub fn view(&self) -> &ViewPredicate {
        &self.config.view
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Sequence number of the most recent insert (0 when none).
    pub fn last_seq(&self) -> u64 {
        self.next_seq - 1
    }

    /// Marks the instance as controlled by an archiver; one owner at a time.
    pub fn claim(&mut self, owner: &str) -> Result<(), ProducerError> {
        match &self.owner {
            Some(o) if o != owner => Err(ProducerError::Busy(o.clone())),
            _ => {
                self.owner = Some(owner.to_string());
                Ok(())
            }
        }
    }

    pub fn owner(&self) -> Option<&str> {
        self.owner.as_deref()
    }

    fn check(&self, t: &Tuple) -> Result<(), ProducerError> {
        if t.table() != self.config.table.name {
            return Err(ProducerError::Sql(crate::sql::SqlError::Schema(format!(
                "tuple for {} sent to a producer of {}",
                t.table(),
                self.config.table.name
            ))));
        }
        t.validate(&self.config.table)?;
        for (col, v) in self.config.view.atoms() {
            let got = t.get(&self.config.table, col).expect("view columns are validated at open");
            if got.sql_cmp(v) != Some(std::cmp::Ordering::Equal) {
                return Err(ProducerError::ViewViolation(format!(
                    "{col} = {} contradicts the declared view {}",
                    got.to_sql(),
                    self.config.view
                )));
            }
        }
        Ok(())
    }

    /// Publishes a batch. Either every tuple is accepted or none is. Returns
    /// the last assigned sequence number and the continuous pushes it caused.
    pub fn insert(&mut self, tuples: Vec<Tuple>, now: i64) -> Result<(u64, Vec<Delivery>), ProducerError> {
        if !self.config.producer_type.is_insertable() {
            return Err(ProducerError::NotInsertable);
        }
        for t in &tuples {
            self.check(t)?;
        }
        let first = self.next_seq;
        let numbered: Vec<(u64, Tuple)> = tuples.into_iter().enumerate().map(|(i, t)| (first + i as u64, t)).collect();
        let mut deliveries = Vec::new();
        match &mut self.backing {
            Backing::Stream { ring, wal } => {
                if let Some(wal) = wal {
                    let recs: Vec<WalRecord> =
                        numbered.iter().map(|(seq, t)| WalRecord { seq: *seq, tuple: t.clone() }).collect();
                    wal.append_batch(&recs).map_err(storage_err)?;
                }
                for (seq, t) in &numbered {
                    for (id, residual) in &self.subscriptions {
                        if evaluate_opt(residual.as_ref(), &TupleRow { schema: &self.config.table, tuple: t }, Some(now))? {
                            deliveries.push(Delivery {
                                subscription: *id,
                                row: ResultRow {
                                    producer: self.config.component_id.clone(),
                                    epoch: self.epoch,
                                    seq: *seq,
                                    backlog: false,
                                    tuples: vec![t.clone()],
                                },
                            });
                        }
                    }
                    if ring.len() == self.config.ring_capacity {
                        ring.pop_front();
                    }
                    ring.push_back((*seq, t.clone()));
                }
            }
            Backing::History { store, file } => {
                if let Some(f) = file {
                    let rows: Vec<Tuple> = numbered.iter().map(|(_, t)| t.clone()).collect();
                    f.append_batch(&rows).map_err(storage_err)?;
                }
                for (_, t) in &numbered {
                    store.append(t.clone()).map_err(storage_err)?;
                }
            }
            Backing::Latest { store, file } => {
                if let Some(f) = file {
                    let rows: Vec<Tuple> = numbered.iter().map(|(_, t)| t.clone()).collect();
                    f.append_batch(&rows).map_err(storage_err)?;
                }
                for (_, t) in &numbered {
                    store.insert(t.clone()).map_err(storage_err)?;
                }
            }
            Backing::Canonical(_) => unreachable!("rejected above"),
        }
        self.next_seq += numbered.len() as u64;
        Ok((self.last_seq(), deliveries))
    }

    /// The condition a query leaves for this instance once its view is
    /// substituted in.
    pub fn residual_for(&self, query: &Query) -> Option<Condition> {
        let binding = query.binding_of(&self.config.table.name);
        query.condition.as_ref().map(|c| substitute_view(c, binding, &self.config.view).unqualified())
    }

    /// Opens a continuous subscription. The returned backlog holds the
    /// buffered tuples matching `residual`; with a `resume_after` cursor from
    /// this epoch only later tuples are included (a resilient producer
    /// replays them from its log).
    pub fn subscribe(
        &mut self,
        residual: Option<Condition>,
        resume_after: Option<Cursor>,
        now: i64,
    ) -> Result<(u64, Vec<ResultRow>), ProducerError> {
        let Backing::Stream { ring, wal } = &self.backing else {
            return Err(ProducerError::UnsupportedQueryClass(QueryClass::Continuous, self.config.producer_type));
        };
        let after = resume_after.filter(|c| c.epoch == self.epoch).map(|c| c.seq);
        let candidates: Vec<(u64, Tuple)> = match (after, wal) {
            (Some(seq), Some(wal)) if ring.front().map_or(true, |(first, _)| *first > seq + 1) => wal
                .read_back()
                .map_err(storage_err)?
                .into_iter()
                .filter(|r| r.seq > seq)
                .map(|r| (r.seq, r.tuple))
                .collect(),
            (Some(seq), _) => ring.iter().filter(|(s, _)| *s > seq).cloned().collect(),
            (None, _) => ring.iter().cloned().collect(),
        };
        let mut backlog = Vec::new();
        for (seq, t) in candidates {
            if evaluate_opt(residual.as_ref(), &TupleRow { schema: &self.config.table, tuple: &t }, Some(now))? {
                backlog.push(ResultRow {
                    producer: self.config.component_id.clone(),
                    epoch: self.epoch,
                    seq,
                    backlog: true,
                    tuples: vec![t],
                });
            }
        }
        let id = self.next_subscription;
        self.next_subscription += 1;
        self.subscriptions.insert(id, residual);
        Ok((id, backlog))
    }

    pub fn unsubscribe(&mut self, id: u64) -> bool {
        self.subscriptions.remove(&id).is_some()
    }

    pub fn subscription_count(&self) -> usize {
        self.subscriptions.len()
    }

    /// Tuples stored for a one-shot query of `class`, filtered by `residual`.
    pub fn rows(&mut self, query: &Query, class: QueryClass, residual: Option<&Condition>, now: i64) -> Result<Vec<Tuple>, ProducerError> {
        let ty = self.config.producer_type;
        if class == QueryClass::Continuous || !ty.supports(class) {
            return Err(ProducerError::UnsupportedQueryClass(class, ty));
        }
        match &mut self.backing {
            Backing::History { store, .. } => Ok(store.query(residual, now).map_err(storage_err)?),
            Backing::Latest { store, .. } => Ok(store.query(residual, now).map_err(storage_err)?),
            Backing::Canonical(handler) => {
                if !handler.classes().contains(&class) {
                    return Err(ProducerError::UnsupportedQueryClass(class, ty));
                }
                let rows = handler.answer(query, class, now).map_err(ProducerError::Handler)?;
                for t in &rows {
                    self.check_canonical(t)?;
                }
                Ok(rows)
            }
            Backing::Stream { .. } => Err(ProducerError::UnsupportedQueryClass(class, ty)),
        }
    }

    fn check_canonical(&self, t: &Tuple) -> Result<(), ProducerError> {
        self.check(t).map_err(|e| ProducerError::Handler(format!("handler returned an invalid row: {e}")))
    }

    /// Answers a single-table latest or history query.
    pub fn answer(&mut self, query: &Query, class: QueryClass, now: i64) -> Result<Vec<ResultRow>, ProducerError> {
        if query.is_join() {
            return Err(ProducerError::Config("join queries are answered by the producer host".into()));
        }
        let residual = self.residual_for(query);
        let rows = self.rows(query, class, residual.as_ref(), now)?;
        Ok(rows
            .into_iter()
            .map(|t| ResultRow {
                producer: self.config.component_id.clone(),
                epoch: self.epoch,
                seq: 0,
                backlog: false,
                tuples: vec![t],
            })
            .collect())
    }

    /// Every stored tuple, for snapshots and tests.
    pub fn contents(&self) -> Vec<Tuple> {
        match &self.backing {
            Backing::Stream { ring, .. } => ring.iter().map(|(_, t)| t.clone()).collect(),
            Backing::History { store, .. } => store.rows().to_vec(),
            Backing::Latest { store, .. } => store.rows().cloned().collect(),
            Backing::Canonical(_) => Vec::new(),
        }
    }

    /// Number of tuples currently held.
    pub fn len(&self) -> usize {
        match &self.backing {
            Backing::Stream { ring, .. } => ring.len(),
            Backing::History { store, .. } => store.len(),
            Backing::Latest { store, .. } => store.len(),
            Backing::Canonical(_) => 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn schedule_cleanup(&mut self, rule: CleanupRule, now: i64) -> Result<(), ProducerError> {
        if !matches!(self.backing, Backing::History { .. } | Backing::Latest { .. }) {
            return Err(ProducerError::UnsupportedProducerType(self.config.producer_type));
        }
        if rule.table != self.config.table.name {
            return Err(ProducerError::Config(format!(
                "cleanup rule for {} given to a producer of {}",
                rule.table, self.config.table.name
            )));
        }
        let next_due = now + rule.interval_ms as i64;
        self.cleanup.push(ScheduledRule { rule, next_due });
        Ok(())
    }

    /// Earliest time a cleanup rule is due.
    pub fn next_cleanup(&self) -> Option<i64> {
        self.cleanup.iter().map(|r| r.next_due).min()
    }

    /// Fires every rule due at `now`, each at most once. Returns rows removed.
    pub fn run_cleanup(&mut self, now: i64) -> Result<usize, ProducerError> {
        let mut removed = 0;
        let mut fired = false;
        for i in 0..self.cleanup.len() {
            if self.cleanup[i].next_due > now {
                continue;
            }
            let rule = self.cleanup[i].rule.clone();
            let store: &mut dyn Cleanable = match &mut self.backing {
                Backing::History { store, .. } => store,
                Backing::Latest { store, .. } => store,
                _ => unreachable!("checked when scheduled"),
            };
            removed += apply_cleanup(store, &rule, now).map_err(storage_err)?;
            fired = true;
            let interval = rule.interval_ms as i64;
            let s = &mut self.cleanup[i];
            while s.next_due <= now {
                s.next_due += interval;
            }
        }
        if fired && removed > 0 {
            self.persist_store()?;
        }
        Ok(removed)
    }

    fn persist_store(&mut self) -> Result<(), ProducerError> {
        match &mut self.backing {
            Backing::History { store, file: Some(f) } => f.rewrite(store.rows()).map_err(storage_err),
            Backing::Latest { store, file: Some(f) } => {
                let rows: Vec<Tuple> = store.rows().cloned().collect();
                f.rewrite(&rows).map_err(storage_err)
            }
            _ => Ok(()),
        }
    }
}
