//! Starting registries, producers and archivers on a [`Service`].

use std::path::{Path, PathBuf};

use rgma_core::archiver::{ArchivedTable, ArchiverSpec};
use rgma_core::harness::{monitor_table, TableSpec};
use rgma_core::node::{ConsumerSpec, Event, NodeError};
use rgma_core::producer::{ProducerConfig, ProducerError, ProducerInstance};
use rgma_core::registry::{ProducerType, QueryClass, Record, Registry, RegistryError};
use rgma_core::sql::{parse_create_table, parse_view, Catalog, SqlError, TableDefinition, ViewPredicate};
use serde::{Deserialize, Serialize};

use crate::service::{now_ms, Service};

#[derive(Debug, thiserror::Error)]
pub enum SetupError {
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error(transparent)]
    Producer(#[from] ProducerError),
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Config(String),
}

/// Parses `[[tables]]` entries (`create` plus `key`) from TOML text.
pub fn parse_schema(toml_text: &str) -> Result<Vec<TableDefinition>, SetupError> {
    #[derive(Deserialize)]
    struct File {
        tables: Vec<TableSpec>,
    }
    let f: File = toml::from_str(toml_text).map_err(|e| SetupError::Config(e.to_string()))?;
    f.tables
        .iter()
        .map(|t| {
            let key: Vec<&str> = t.key.iter().map(String::as_str).collect();
            parse_create_table(&t.create, &key).map_err(Into::into)
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct Persisted {
    tables: Vec<TableDefinition>,
    records: Vec<Record>,
}

/// Registry state kept across restarts: schema and mastered records,
/// rewritten whole after changes.
#[derive(Debug, Clone)]
pub struct RegistryStore {
    path: PathBuf,
}

impl RegistryStore {
    pub fn new(dir: &Path, id: &str) -> Self {
        RegistryStore { path: dir.join(format!("{id}.registry.json")) }
    }

    pub fn load(&self) -> Result<Option<(Vec<TableDefinition>, Vec<Record>)>, SetupError> {
        match std::fs::read(&self.path) {
            Ok(bytes) => {
                let p: Persisted = serde_json::from_slice(&bytes)
                    .map_err(|e| SetupError::Config(format!("{}: {e}", self.path.display())))?;
                Ok(Some((p.tables, p.records)))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn save(&self, reg: &Registry) -> Result<(), SetupError> {
        let p = Persisted { tables: reg.catalog().tables().cloned().collect(), records: reg.mastered_records() };
        let tmp = self.path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(&p).expect("registry state encodes"))?;
        std::fs::rename(&tmp, &self.path)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RegistryOptions {
    pub id: String,
    pub peers: Vec<String>,
    pub sync_ms: u64,
    pub sweep_ms: u64,
    pub tables: Vec<TableDefinition>,
    pub store: Option<RegistryStore>,
}

impl RegistryOptions {
    pub fn new(id: &str) -> Self {
        RegistryOptions { id: id.into(), peers: vec![], sync_ms: 1000, sweep_ms: 250, tables: vec![], store: None }
    }
}

/// Hosts a registry. With a store, state is reloaded first and saved
/// every sweep period while it changes.
pub fn start_registry(service: &Service, opts: RegistryOptions) -> Result<(), SetupError> {
    let mut reg = Registry::new(&opts.id);
    reg.declare_table(monitor_table())?;
    if let Some(store) = &opts.store {
        if let Some((tables, records)) = store.load()? {
            reg.restore(tables, records)?;
        }
    }
    for t in opts.tables {
        reg.declare_table(t)?;
    }
    service.apply(|node, now| Ok::<_, SetupError>(node.host_registry(reg, opts.peers, opts.sync_ms, opts.sweep_ms, now)))?;
    if let Some(store) = opts.store {
        let s = service.clone();
        let period = std::time::Duration::from_millis(opts.sweep_ms.max(50));
        tokio::spawn(async move {
            let mut last = Vec::new();
            while !s.is_closed() {
                let bytes = s.inspect(|n| n.registry().map(|r| r.canonical_bytes()));
                if let Some(bytes) = bytes.filter(|b| *b != last) {
                    let saved = s.inspect(|n| store.save(n.registry().expect("hosted")));
                    match saved {
                        Ok(()) => last = bytes,
                        Err(e) => tracing::warn!(error = %e, "saving registry state failed"),
                    }
                }
                tokio::time::sleep(period).await;
            }
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ProducerOptions {
    pub id: String,
    pub producer_type: ProducerType,
    pub table: String,
    pub view: Option<String>,
    pub storage: Option<PathBuf>,
    pub interval_ms: u64,
}

impl ProducerOptions {
    pub fn new(id: &str, producer_type: ProducerType, table: &str) -> Self {
        ProducerOptions {
            id: id.into(),
            producer_type,
            table: table.into(),
            view: None,
            storage: None,
            interval_ms: 30_000,
        }
    }
}

fn open_instance(
    id: &str,
    ty: ProducerType,
    table: TableDefinition,
    view: ViewPredicate,
    storage: Option<PathBuf>,
    interval_ms: u64,
) -> Result<ProducerInstance, SetupError> {
    if ty == ProducerType::Canonical {
        return Err(SetupError::Config("canonical producers are embedded through the library, not started here".into()));
    }
    if ty == ProducerType::ResilientStream && storage.is_none() {
        return Err(SetupError::Config(format!("resilient producer '{id}' needs a storage file")));
    }
    let mut cfg = ProducerConfig::new(id, ty, table, view);
    cfg.interval_ms = interval_ms;
    cfg.storage = storage;
    Ok(ProducerInstance::open(cfg, now_ms() as u64)?)
}

/// Adds a producer and starts registering it with `registry`.
pub fn start_producer(service: &Service, catalog: &Catalog, registry: &str, opts: ProducerOptions) -> Result<(), SetupError> {
    let table = catalog.require(&opts.table)?.clone();
    let view = match &opts.view {
        Some(v) => parse_view(v, &table)?,
        None => ViewPredicate::universal(),
    };
    let inst = open_instance(&opts.id, opts.producer_type, table, view, opts.storage, opts.interval_ms)?;
    service.apply(|node, now| node.add_producer(inst, registry, now))?;
    Ok(())
}

/// One archived table and its sink.
#[derive(Debug, Clone)]
pub struct ArchiveTarget {
    pub table: String,
    pub condition: Option<String>,
    pub sink: String,
    pub sink_type: ProducerType,
    /// Defaults to the universal view: source views are not known up front.
    pub sink_view: Option<String>,
    pub storage: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ArchiverOptions {
    pub id: String,
    pub targets: Vec<ArchiveTarget>,
    pub interval_ms: u64,
}

pub fn start_archiver(service: &Service, catalog: &Catalog, registry: &str, opts: ArchiverOptions) -> Result<(), SetupError> {
    let mut sinks = Vec::new();
    let mut tables = Vec::new();
    for t in &opts.targets {
        let def = catalog.require(&t.table)?.clone();
        let view = match &t.sink_view {
            Some(v) => parse_view(v, &def)?,
            None => ViewPredicate::universal(),
        };
        sinks.push(open_instance(&t.sink, t.sink_type, def, view, t.storage.clone(), opts.interval_ms)?);
        tables.push(ArchivedTable { table: t.table.clone(), condition: t.condition.clone(), sink: t.sink.clone() });
    }
    let spec = ArchiverSpec { component_id: opts.id.clone(), tables, source_class: QueryClass::Continuous };
    service.apply(|node, now| node.add_archiver(spec, sinks, catalog, registry, opts.interval_ms, now))?;
    Ok(())
}

/// Starts a consumer hosted by the service.
pub fn start_consumer(service: &Service, catalog: &Catalog, spec: ConsumerSpec) -> Result<(), SetupError> {
    service.apply(|node, now| node.add_consumer(spec, catalog, now))?;
    Ok(())
}

/// Publishes this service's self-monitoring records into a local
/// DataBase producer on the monitoring table.
pub fn start_monitoring(service: &Service, registry: &str, period_ms: u64, interval_ms: u64) -> Result<(), SetupError> {
    let id = format!("{}/monitor", service.inspect(|n| n.id().to_string()));
    let inst = open_instance(&id, ProducerType::DataBase, monitor_table(), ViewPredicate::universal(), None, interval_ms)?;
    let mut events = service.events();
    service.apply(|node, now| {
        let mut out = node.add_producer(inst, registry, now)?;
        out.extend(node.enable_monitoring(period_ms, now));
        Ok::<_, NodeError>(out)
    })?;
    let s = service.clone();
    tokio::spawn(async move {
        loop {
            match events.recv().await {
                Ok(Event::Metric(rec)) => {
                    let r = s.apply(|node, now| node.insert_local(&id, vec![rec.to_tuple()], now).map(|(_, out)| out));
                    if let Err(e) = r {
                        tracing::debug!(error = %e, "monitoring insert failed");
                    }
                }
                Ok(_) => {}
                Err(tokio::sync::broadcast::error::RecvError::Lagged(n)) => tracing::debug!(n, "monitoring lagged"),
                Err(tokio::sync::broadcast::error::RecvError::Closed) => break,
            }
            if s.is_closed() {
                break;
            }
        }
    });
    Ok(())
}
