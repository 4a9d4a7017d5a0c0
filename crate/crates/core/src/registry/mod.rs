//! Soft-state directory of producers and consumers.
//!
//! Each registry instance masters the entries registered with it and holds
//! copies of its peers' entries. Records are keyed by (master, component id),
//! versioned by a per-master counter and never edited by anyone but their
//! master, so replicas converge once every master's snapshot has reached
//! every peer.

mod entry;

pub use entry::{
    ConsumerEntry, Entry, ProducerEntry, ProducerType, QueryClass, Record, RecordState, RegistrySnapshot, VersionStamp,
};

use std::collections::BTreeMap;

use crate::sql::{parse_select, relevant, Catalog, Query, SqlError, TableDefinition, ViewPredicate};
use crate::transport::{ConsumerRegistration, ProducerRegistration};

/// Tombstones and stale foreign copies live this many termination intervals
/// past their deadline.
pub const GC_INTERVALS: i64 = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegistryError {
    #[error("unknown component '{0}'")]
    UnknownComponent(String),
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// A consumer that should be told about a producer.
#[derive(Debug, Clone, PartialEq)]
pub struct Notification {
    pub consumer: ConsumerEntry,
    pub producer: ProducerEntry,
}

#[derive(Debug, Clone)]
pub struct Registry {
    id: String,
    catalog: Catalog,
    records: BTreeMap<(String, String), Record>,
    counter: u64,
}

impl Registry {
    pub fn new(id: &str) -> Self {
        Registry { id: id.to_string(), catalog: Catalog::new(), records: BTreeMap::new(), counter: 0 }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn declare_table(&mut self, def: TableDefinition) -> Result<(), RegistryError> {
        let keys: Vec<&str> = def.defining_key.iter().map(String::as_str).collect();
        let checked = TableDefinition::new(&def.name, def.columns.clone(), &keys)?;
        if checked != def {
            return Err(SqlError::Schema(format!("table {} is not in canonical form", def.name)).into());
        }
        self.catalog.declare(checked)?;
        Ok(())
    }

    fn next_version(&mut self) -> u64 {
        self.counter += 1;
        self.counter
    }

    fn stamp(&self, counter: u64) -> VersionStamp {
        VersionStamp { master: self.id.clone(), counter }
    }

    fn mastered_live(&self, component_id: &str, now: i64) -> Option<&Entry> {
        self.records
            .get(&(self.id.clone(), component_id.to_string()))
            .and_then(Record::live)
            .filter(|e| e.deadline() > now)
    }

    /// Checks a producer view against the table and coerces its literals.
    fn typed_view(&self, table: &TableDefinition, view: &ViewPredicate) -> Result<ViewPredicate, SqlError> {
        let mut atoms = Vec::new();
        for (col, v) in view.atoms() {
            let c = table
                .column(col)
                .ok_or_else(|| SqlError::Schema(format!("view names unknown column '{col}' of {}", table.name)))?;
            atoms.push((c.name.clone(), v.clone().coerce_to(c.ty)?));
        }
        ViewPredicate::new(atoms)
    }

    pub fn register_producer(
        &mut self,
        reg: &ProducerRegistration,
        now: i64,
    ) -> Result<(i64, Vec<Notification>), RegistryError> {
        let table = self.catalog.require(&reg.table)?.clone();
        let view = self.typed_view(&table, &reg.view)?;
        if reg.interval_ms == 0 {
            return Err(RegistryError::Protocol("termination interval must be positive".into()));
        }
        let deadline = now + reg.interval_ms as i64;
        let prior = match self.mastered_live(&reg.component_id, now) {
            Some(Entry::Producer(p)) => Some(p.clone()),
            _ => None,
        };
        let version = self.next_version();
        let entry = ProducerEntry {
            component_id: reg.component_id.clone(),
            endpoint: reg.endpoint.clone(),
            producer_type: reg.producer_type,
            table: table.name.clone(),
            view,
            termination_deadline: deadline,
            interval_ms: reg.interval_ms,
            epoch: reg.epoch,
            master: self.id.clone(),
            version: self.stamp(version),
        };
        let fresh = prior.map_or(true, |p| is_new_incarnation(&p, &entry));
        self.put(Entry::Producer(entry.clone()), version);
        let notes = if fresh { self.notifications_for(&entry, now) } else { Vec::new() };
        Ok((deadline, notes))
    }

    /// Registers a consumer and returns the producers its query currently
    /// matches.
    pub fn register_consumer(
        &mut self,
        reg: &ConsumerRegistration,
        now: i64,
    ) -> Result<(i64, Vec<ProducerEntry>), RegistryError> {
        let query = parse_select(&reg.query, &self.catalog)?;
        if reg.interval_ms == 0 {
            return Err(RegistryError::Protocol("termination interval must be positive".into()));
        }
        let deadline = now + reg.interval_ms as i64;
        let version = self.next_version();
        let producers = self.lookup(&query, reg.query_class, now)?;
        let entry = ConsumerEntry {
            component_id: reg.component_id.clone(),
            endpoint: reg.endpoint.clone(),
            query_text: reg.query.clone(),
            query,
            query_class: reg.query_class,
            termination_deadline: deadline,
            interval_ms: reg.interval_ms,
            master: self.id.clone(),
            version: self.stamp(version),
        };
        self.put(Entry::Consumer(entry), version);
        Ok((deadline, producers))
    }

    fn put(&mut self, entry: Entry, version: u64) {
        let key = (self.id.clone(), entry.component_id().to_string());
        self.records.insert(
            key,
            Record {
                component_id: entry.component_id().to_string(),
                master: self.id.clone(),
                version,
                state: RecordState::Live(entry),
            },
        );
    }

    /// Extends a live registration. Consumers also get their current
    /// producer list back.
    pub fn heartbeat(
        &mut self,
        component_id: &str,
        now: i64,
    ) -> Result<(i64, Option<Vec<ProducerEntry>>), RegistryError> {
        let mut entry = self
            .mastered_live(component_id, now)
            .cloned()
            .ok_or_else(|| RegistryError::UnknownComponent(component_id.to_string()))?;
        let deadline = now + entry.interval_ms() as i64;
        let version = self.next_version();
        entry.set_deadline(deadline);
        entry.set_version(self.stamp(version));
        let producers = match &entry {
            Entry::Consumer(c) => Some(self.lookup(&c.query, c.query_class, now)?),
            Entry::Producer(_) => None,
        };
        self.put(entry, version);
        Ok((deadline, producers))
    }

    pub fn unregister(&mut self, component_id: &str, now: i64) -> Result<(), RegistryError> {
        let entry = self
            .mastered_live(component_id, now)
            .cloned()
            .ok_or_else(|| RegistryError::UnknownComponent(component_id.to_string()))?;
        self.tombstone(component_id, now + GC_INTERVALS * entry.interval_ms() as i64);
        Ok(())
    }

    fn tombstone(&mut self, component_id: &str, gc_after: i64) {
        let version = self.next_version();
        self.records.insert(
            (self.id.clone(), component_id.to_string()),
            Record {
                component_id: component_id.to_string(),
                master: self.id.clone(),
                version,
                state: RecordState::Tombstone { gc_after },
            },
        );
    }

    /// Tombstones every mastered entry whose deadline has passed and drops
    /// records that no replica can still need. Returns the expired ids.
    pub fn expire_sweep(&mut self, now: i64) -> Vec<String> {
        let expired: Vec<(String, i64)> = self
            .records
            .values()
            .filter(|r| r.master == self.id)
            .filter_map(|r| r.live())
            .filter(|e| e.deadline() <= now)
            .map(|e| (e.component_id().to_string(), e.deadline() + GC_INTERVALS * e.interval_ms() as i64))
            .collect();
        for (id, gc_after) in &expired {
            self.tombstone(id, *gc_after);
        }
        self.records.retain(|_, r| match &r.state {
            RecordState::Tombstone { gc_after } => *gc_after > now,
            RecordState::Live(e) => e.deadline() + GC_INTERVALS * e.interval_ms() as i64 > now,
        });
        expired.into_iter().map(|(id, _)| id).collect()
    }

    /// Unexpired producers relevant to the query that can answer its class.
    pub fn lookup(&self, query: &Query, class: QueryClass, now: i64) -> Result<Vec<ProducerEntry>, RegistryError> {
        for t in &query.tables {
            self.catalog.require(&t.table)?;
        }
        let mut best: BTreeMap<&str, &ProducerEntry> = BTreeMap::new();
        for p in self.live_producers(now) {
            if self.producer_matches(query, class, p)? {
                let slot = best.entry(p.component_id.as_str()).or_insert(p);
                if p.termination_deadline > slot.termination_deadline {
                    *slot = p;
                }
            }
        }
        Ok(best.into_values().cloned().collect())
    }

    pub fn lookup_text(&self, sql: &str, class: QueryClass, now: i64) -> Result<Vec<ProducerEntry>, RegistryError> {
        let query = parse_select(sql, &self.catalog)?;
        self.lookup(&query, class, now)
    }

    fn producer_matches(&self, query: &Query, class: QueryClass, p: &ProducerEntry) -> Result<bool, RegistryError> {
        if !p.producer_type.supports(class) || query.binding_of(&p.table).is_none() {
            return Ok(false);
        }
        let Some(table) = self.catalog.get(&p.table) else {
            return Ok(false);
        };
        Ok(relevant(&p.view, query, table)?)
    }

    fn live_producers(&self, now: i64) -> impl Iterator<Item = &ProducerEntry> {
        self.records.values().filter_map(Record::live).filter_map(move |e| match e {
            Entry::Producer(p) if p.termination_deadline > now => Some(p),
            _ => None,
        })
    }

    pub fn producers(&self, now: i64) -> Vec<ProducerEntry> {
        self.live_producers(now).cloned().collect()
    }

    pub fn consumers(&self, now: i64) -> Vec<ConsumerEntry> {
        self.records
            .values()
            .filter_map(Record::live)
            .filter_map(|e| match e {
                Entry::Consumer(c) if c.termination_deadline > now => Some(c.clone()),
                _ => None,
            })
            .collect()
    }

    /// Live consumers mastered here whose query would now include `producer`.
    fn notifications_for(&self, producer: &ProducerEntry, now: i64) -> Vec<Notification> {
        self.records
            .values()
            .filter(|r| r.master == self.id)
            .filter_map(Record::live)
            .filter_map(|e| match e {
                Entry::Consumer(c) if c.termination_deadline > now => Some(c),
                _ => None,
            })
            .filter(|c| self.producer_matches(&c.query, c.query_class, producer).unwrap_or(false))
            .map(|c| Notification { consumer: c.clone(), producer: producer.clone() })
            .collect()
    }

    pub fn snapshot(&self) -> RegistrySnapshot {
        RegistrySnapshot {
            from: self.id.clone(),
            tables: self.catalog.tables().cloned().collect(),
            records: self.records.values().filter(|r| r.master == self.id).cloned().collect(),
        }
    }

    /// Merges a peer's snapshot. Returns notifications for producers this
    /// registry sees for the first time.
    pub fn apply_sync(&mut self, snap: &RegistrySnapshot, now: i64) -> Result<Vec<Notification>, RegistryError> {
        if snap.from == self.id {
            return Err(RegistryError::Protocol("snapshot claims to come from this registry".into()));
        }
        if let Some(r) = snap.records.iter().find(|r| r.master != snap.from) {
            return Err(RegistryError::Protocol(format!(
                "{} sent a record mastered by {}",
                snap.from, r.master
            )));
        }
        for t in &snap.tables {
            // a conflicting definition keeps the local one
            let _ = self.declare_table(t.clone());
        }
        let mut notes = Vec::new();
        for rec in &snap.records {
            let key = (rec.master.clone(), rec.component_id.clone());
            let prior = self.records.get(&key);
            if prior.is_some_and(|p| p.version >= rec.version) {
                continue;
            }
            let prior_live = prior.and_then(Record::live).and_then(|e| match e {
                Entry::Producer(p) if p.termination_deadline > now => Some(p.clone()),
                _ => None,
            });
            if let RecordState::Live(Entry::Producer(p)) = &rec.state {
                if p.termination_deadline > now && prior_live.map_or(true, |old| is_new_incarnation(&old, p)) {
                    notes.extend(self.notifications_for(p, now));
                }
            }
            self.records.insert(key, rec.clone());
        }
        Ok(notes)
    }

    /// Records mastered here, for persistence.
    pub fn mastered_records(&self) -> Vec<Record> {
        self.snapshot().records
    }

    /// Reloads persisted mastered records and schema after a restart.
    pub fn restore(&mut self, tables: Vec<TableDefinition>, records: Vec<Record>) -> Result<(), RegistryError> {
        for t in tables {
            self.declare_table(t)?;
        }
        for r in records {
            if r.master != self.id {
                continue;
            }
            self.counter = self.counter.max(r.version);
            self.records.insert((r.master.clone(), r.component_id.clone()), r);
        }
        Ok(())
    }

    /// Canonical encoding of every record and table, for comparing replicas.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let tables: Vec<&TableDefinition> = self.catalog.tables().collect();
        let records: Vec<&Record> = self.records.values().collect();
        serde_json::to_vec(&(tables, records)).expect("registry state encodes")
    }

    pub fn record_count(&self) -> usize {
        self.records.len()
    }
}

fn is_new_incarnation(old: &ProducerEntry, new: &ProducerEntry) -> bool {
    old.endpoint != new.endpoint || old.epoch != new.epoch
}
