use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::archiver::{ArchivedTable, Archiver, ArchiverSpec, SinkInfo};
use crate::registry::{ProducerType, QueryClass};
use crate::sql::{parse_create_table, parse_select, parse_view, Catalog, SqlError, TableDefinition};
use crate::transport::KINDS;

use super::{demo_schema, monitor_table};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("invalid scenario: {0}")]
    Sql(#[from] SqlError),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("scenario storage: {0}")]
    Storage(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

fn d_latency() -> i64 {
    5
}
fn d_interval() -> u64 {
    6_000
}
fn d_sync() -> u64 {
    1_000
}
fn d_sweep() -> u64 {
    250
}
fn d_keys() -> usize {
    4
}
fn d_one() -> u32 {
    1
}
fn d_star() -> String {
    "*".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistrySetup {
    pub count: usize,
    #[serde(default = "d_sync")]
    pub sync_ms: u64,
    #[serde(default = "d_sweep")]
    pub sweep_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    pub create: String,
    pub key: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProducerSetup {
    pub id: String,
    #[serde(rename = "type")]
    pub producer_type: String,
    pub table: String,
    /// WHERE-style conjunction of `column = constant`.
    #[serde(default)]
    pub view: Option<String>,
    pub period_ms: u64,
    #[serde(default = "d_keys")]
    pub keys: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub limit: Option<u64>,
    #[serde(default)]
    pub start_ms: i64,
    #[serde(default)]
    pub stop_ms: Option<i64>,
    #[serde(default)]
    pub registry: usize,
    #[serde(default)]
    pub interval_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchivedSetup {
    pub table: String,
    #[serde(default)]
    pub condition: Option<String>,
    pub sink: String,
    pub sink_type: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiverSetup {
    pub id: String,
    pub tables: Vec<ArchivedSetup>,
    #[serde(default)]
    pub registry: usize,
    #[serde(default)]
    pub start_ms: i64,
    #[serde(default)]
    pub source_class: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsumerSetup {
    pub id: String,
    pub query: String,
    pub class: String,
    #[serde(default)]
    pub registry: usize,
    #[serde(default)]
    pub start_ms: i64,
    #[serde(default)]
    pub repeat_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum FaultAction {
    Kill { component: String },
    Restart { component: String },
    /// Cuts every connection between two components and refuses new ones.
    Partition { a: String, b: String },
    Heal { a: String, b: String },
    /// Silently loses every `every`-th message of `kind` sent from `from`
    /// to `to` (`*` matches any kind).
    Drop {
        from: String,
        to: String,
        #[serde(default = "d_star")]
        kind: String,
        #[serde(default = "d_one")]
        every: u32,
    },
    PauseSink { archiver: String },
    ResumeSink { archiver: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub at_ms: i64,
    #[serde(flatten)]
    pub action: FaultAction,
}

/// A topology, its load and its faults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub duration_ms: i64,
    /// One-way message latency.
    #[serde(default = "d_latency")]
    pub latency_ms: i64,
    /// Termination interval used by every component unless overridden.
    #[serde(default = "d_interval")]
    pub interval_ms: u64,
    #[serde(default)]
    pub monitor_ms: Option<u64>,
    /// Declare Service and ServiceStatus.
    #[serde(default)]
    pub demo_schema: bool,
    pub registries: RegistrySetup,
    #[serde(default)]
    pub tables: Vec<TableSpec>,
    #[serde(default)]
    pub producers: Vec<ProducerSetup>,
    #[serde(default)]
    pub archivers: Vec<ArchiverSetup>,
    #[serde(default)]
    pub consumers: Vec<ConsumerSetup>,
    #[serde(default)]
    pub faults: Vec<Fault>,
}

pub const MONITOR_NODE: &str = "monitor";

pub fn registry_name(i: usize) -> String {
    format!("registry-{i}")
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenarios serialize")
    }

    /// Every declared table, including the monitoring table.
    pub fn catalog(&self) -> Result<Catalog, ScenarioError> {
        let mut c = Catalog::new();
        c.declare(monitor_table())?;
        if self.demo_schema {
            for t in demo_schema() {
                c.declare(t)?;
            }
        }
        for t in &self.tables {
            let key: Vec<&str> = t.key.iter().map(String::as_str).collect();
            c.declare(parse_create_table(&t.create, &key)?)?;
        }
        Ok(c)
    }

    pub fn node_names(&self) -> BTreeSet<String> {
        let mut names: BTreeSet<String> = (0..self.registries.count).map(registry_name).collect();
        names.extend(self.producers.iter().map(|p| p.id.clone()));
        names.extend(self.archivers.iter().map(|a| a.id.clone()));
        names.extend(self.consumers.iter().map(|c| c.id.clone()));
        if self.monitor_ms.is_some() {
            names.insert(MONITOR_NODE.into());
        }
        names
    }

    pub(crate) fn archiver_spec(&self, a: &ArchiverSetup) -> Result<ArchiverSpec, ScenarioError> {
        let source_class = match &a.source_class {
            Some(c) => c.parse::<QueryClass>().map_err(invalid)?,
            None => QueryClass::Continuous,
        };
        Ok(ArchiverSpec {
            component_id: a.id.clone(),
            tables: a
                .tables
                .iter()
                .map(|t| ArchivedTable { table: t.table.clone(), condition: t.condition.clone(), sink: t.sink.clone() })
                .collect(),
            source_class,
        })
    }

    pub(crate) fn sink_table(&self, catalog: &Catalog, t: &ArchivedSetup) -> Result<TableDefinition, ScenarioError> {
        Ok(catalog.require(&t.table)?.clone())
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.duration_ms <= 0 {
            return Err(invalid("duration_ms must be positive"));
        }
        if self.latency_ms < 0 {
            return Err(invalid("latency_ms must not be negative"));
        }
        if self.interval_ms == 0 || self.registries.sync_ms == 0 || self.registries.sweep_ms == 0 {
            return Err(invalid("intervals must be positive"));
        }
        if self.monitor_ms == Some(0) {
            return Err(invalid("monitor_ms must be positive"));
        }
        if self.registries.count == 0 {
            return Err(invalid("at least one registry is required"));
        }
        let catalog = self.catalog()?;
        let mut ids = BTreeSet::new();
        let mut claim = |id: &str| -> Result<(), ScenarioError> {
            if id.is_empty() || id.contains(':') {
                return Err(invalid(format!("bad component id '{id}'")));
            }
            if id == MONITOR_NODE || id.starts_with("registry-") || !ids.insert(id.to_string()) {
                return Err(invalid(format!("duplicate or reserved component id '{id}'")));
            }
            Ok(())
        };
        let check_registry = |i: usize, who: &str| {
            if i >= self.registries.count {
                Err(invalid(format!("{who} names registry {i}, but there are {}", self.registries.count)))
            } else {
                Ok(())
            }
        };
        for p in &self.producers {
            claim(&p.id)?;
            check_registry(p.registry, &p.id)?;
            let ty: ProducerType = p.producer_type.parse().map_err(invalid)?;
            if ty == ProducerType::Canonical {
                return Err(invalid(format!("{}: canonical producers need a handler and cannot be scripted", p.id)));
            }
            let table = catalog.require(&p.table)?;
            if let Some(v) = &p.view {
                parse_view(v, table)?;
            }
            if p.period_ms == 0 || p.keys == 0 {
                return Err(invalid(format!("{}: period_ms and keys must be positive", p.id)));
            }
            if p.interval_ms == Some(0) {
                return Err(invalid(format!("{}: interval_ms must be positive", p.id)));
            }
        }
        for a in &self.archivers {
            claim(&a.id)?;
            check_registry(a.registry, &a.id)?;
            let mut sinks = Vec::new();
            for t in &a.tables {
                claim(&t.sink)?;
                sinks.push(SinkInfo {
                    component_id: t.sink.clone(),
                    producer_type: t.sink_type.parse().map_err(invalid)?,
                    table: self.sink_table(&catalog, t)?,
                });
            }
            Archiver::new(self.archiver_spec(a)?, &catalog, &sinks).map_err(|e| invalid(format!("{}: {e}", a.id)))?;
        }
        for c in &self.consumers {
            claim(&c.id)?;
            check_registry(c.registry, &c.id)?;
            let class: QueryClass = c.class.parse().map_err(invalid)?;
            let q = parse_select(&c.query, &catalog)?;
            crate::mediator::classify(&q, class).map_err(|e| invalid(format!("{}: {e}", c.id)))?;
            if c.repeat_ms == Some(0) {
                return Err(invalid(format!("{}: repeat_ms must be positive", c.id)));
            }
        }
        let nodes = self.node_names();
        let known = |n: &str| {
            if nodes.contains(n) {
                Ok(())
            } else {
                Err(invalid(format!("fault names unknown component '{n}'")))
            }
        };
        for f in &self.faults {
            if f.at_ms < 0 || f.at_ms > self.duration_ms {
                return Err(invalid(format!("fault at {} ms lies outside the run", f.at_ms)));
            }
            match &f.action {
                FaultAction::Kill { component } | FaultAction::Restart { component } => known(component)?,
                FaultAction::Partition { a, b } | FaultAction::Heal { a, b } => {
                    known(a)?;
                    known(b)?;
                }
                FaultAction::Drop { from, to, kind, every } => {
                    known(from)?;
                    known(to)?;
                    if *every == 0 {
                        return Err(invalid("drop.every must be at least 1"));
                    }
                    if kind != "*" && !KINDS.contains(&kind.as_str()) {
                        return Err(invalid(format!("unknown message kind '{kind}'")));
                    }
                }
                FaultAction::PauseSink { archiver } | FaultAction::ResumeSink { archiver } => {
                    if !self.archivers.iter().any(|a| &a.id == archiver) {
                        return Err(invalid(format!("'{archiver}' is not an archiver")));
                    }
                }
            }
        }
        Ok(())
    }

    /// `sites` typical sites, each with one storage element and three
    /// computing elements publishing service status, archived into one
    /// Latest sink.
    pub fn typical_sites(sites: usize, seed: u64) -> Scenario {
        let mut producers = Vec::new();
        for s in 0..sites {
            let names = std::iter::once(format!("site{s}-se")).chain((1..=3).map(|c| format!("site{s}-ce{c}")));
            for (i, id) in names.enumerate() {
                producers.push(ProducerSetup {
                    id,
                    producer_type: "stream".into(),
                    table: "ServiceStatus".into(),
                    view: Some(format!("site = 'site{s}'")),
                    period_ms: 100 + 10 * i as u64,
                    keys: 3,
                    seed: None,
                    limit: None,
                    start_ms: 0,
                    stop_ms: Some(50_000),
                    registry: 0,
                    interval_ms: None,
                });
            }
        }
        Scenario {
            seed,
            duration_ms: 60_000,
            latency_ms: 5,
            interval_ms: 6_000,
            monitor_ms: Some(1_000),
            demo_schema: true,
            registries: RegistrySetup { count: 1, sync_ms: 1_000, sweep_ms: 250 },
            tables: vec![],
            producers,
            archivers: vec![ArchiverSetup {
                id: "archiver".into(),
                tables: vec![ArchivedSetup {
                    table: "ServiceStatus".into(),
                    condition: None,
                    sink: "latest-sink".into(),
                    sink_type: "latest".into(),
                }],
                registry: 0,
                start_ms: 0,
                source_class: None,
            }],
            consumers: vec![],
            faults: vec![],
        }
    }
}
