use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::archiver::sink_view;
use crate::mediator::Outcome;
use crate::model::Tuple;
use crate::node::{ConsumerSpec, Event, Node, Output, Peer, Publisher, Timer};
use crate::producer::{ProducerConfig, ProducerInstance};
use crate::registry::{ProducerType, QueryClass, Registry};
use crate::sql::{parse_view, Catalog, ViewPredicate};
use crate::transport::{Message, ResultRow};

use super::scenario::{registry_name, FaultAction, Scenario, ScenarioError, MONITOR_NODE};
use super::{monitor_table, Metric, SelfMonitoringRecord};

/// Everything observed during a run, plus the final state.
#[derive(Debug, Default, Clone)]
pub struct ScenarioReport {
    /// Acknowledged inserts per producer: (time, seq, tuple).
    pub published: BTreeMap<String, Vec<(i64, u64, Tuple)>>,
    pub delivered: BTreeMap<String, Vec<(i64, ResultRow)>>,
    pub results: BTreeMap<String, Vec<(i64, Outcome)>>,
    pub no_producers: BTreeMap<String, Vec<i64>>,
    /// (time, registry, component)
    pub registered: Vec<(i64, String, String)>,
    pub expired: Vec<(i64, String, String)>,
    pub rejected: Vec<(i64, String, String)>,
    pub monitoring: Vec<SelfMonitoringRecord>,
    /// Final contents of every live producer instance, sinks included.
    pub stores: BTreeMap<String, Vec<Tuple>>,
    /// Canonical encoding of every live registry's entry set.
    pub registries: BTreeMap<String, Vec<u8>>,
    /// Hash of the full event trace.
    pub digest: String,
}

#[derive(Debug, Clone)]
enum Item {
    Start(String),
    Fault(usize),
    Deliver { to: String, gen: u64, conn: u64, from: Peer, msg: Message },
    Timer { node: String, gen: u64, timer: Timer },
    PeerDown { node: String, gen: u64, peer: Peer },
}

struct DropRule {
    from: String,
    to: String,
    kind: String,
    every: u32,
    seen: u64,
}

struct SimNode {
    node: Node,
    gen: u64,
}

/// Deterministic discrete-event driver for a [`Scenario`].
pub struct Simulation {
    scenario: Scenario,
    catalog: Catalog,
    now: i64,
    seq: u64,
    queue: BTreeMap<(i64, u64), Item>,
    nodes: BTreeMap<String, SimNode>,
    generations: BTreeMap<String, u64>,
    conns: BTreeMap<u64, (String, String)>,
    conn_of: BTreeMap<(String, String), u64>,
    next_conn: u64,
    partitions: BTreeSet<(String, String)>,
    drops: Vec<DropRule>,
    publishers: BTreeMap<String, Publisher>,
    storage: tempfile::TempDir,
    report: ScenarioReport,
    hasher: Sha256,
}

fn address(node: &str) -> String {
    format!("{node}:0")
}

fn node_of(address: &str) -> &str {
    address.rsplit_once(':').map_or(address, |(h, _)| h)
}

fn pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let catalog = scenario.catalog()?;
        let storage = tempfile::tempdir().map_err(|e| ScenarioError::Storage(e.to_string()))?;
        let mut sim = Simulation {
            scenario: scenario.clone(),
            catalog,
            now: 0,
            seq: 0,
            queue: BTreeMap::new(),
            nodes: BTreeMap::new(),
            generations: BTreeMap::new(),
            conns: BTreeMap::new(),
            conn_of: BTreeMap::new(),
            next_conn: 1,
            partitions: BTreeSet::new(),
            drops: Vec::new(),
            publishers: BTreeMap::new(),
            storage,
            report: ScenarioReport::default(),
            hasher: Sha256::new(),
        };
        for i in 0..scenario.registries.count {
            sim.push(0, Item::Start(registry_name(i)));
        }
        if scenario.monitor_ms.is_some() {
            sim.push(0, Item::Start(MONITOR_NODE.into()));
        }
        for p in &scenario.producers {
            sim.push(p.start_ms.max(0), Item::Start(p.id.clone()));
        }
        for a in &scenario.archivers {
            sim.push(a.start_ms.max(0), Item::Start(a.id.clone()));
        }
        for c in &scenario.consumers {
            sim.push(c.start_ms.max(0), Item::Start(c.id.clone()));
        }
        for (i, f) in scenario.faults.iter().enumerate() {
            sim.push(f.at_ms, Item::Fault(i));
        }
        Ok(sim)
    }

    pub fn now(&self) -> i64 {
        self.now
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id).map(|n| &n.node)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut Node> {
        self.nodes.get_mut(id).map(|n| &mut n.node)
    }

    pub fn is_up(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn report(&self) -> &ScenarioReport {
        &self.report
    }

    /// Producers a registry would currently return for `query`.
    pub fn lookup(&self, registry: usize, query: &str, class: QueryClass) -> Vec<String> {
        self.node(&registry_name(registry))
            .and_then(Node::registry)
            .and_then(|r| r.lookup_text(query, class, self.now).ok())
            .map(|ps| ps.into_iter().map(|p| p.component_id).collect())
            .unwrap_or_default()
    }

    fn push(&mut self, at: i64, item: Item) {
        self.seq += 1;
        self.queue.insert((at.max(self.now), self.seq), item);
    }

    fn trace(&mut self, line: std::fmt::Arguments) {
        self.hasher.update(format!("{} {}\n", self.now, line).as_bytes());
    }

    /// Processes every event due up to and including `until`.
    pub fn run_until(&mut self, until: i64) -> Result<(), ScenarioError> {
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > until {
                break;
            }
            let ((at, _), item) = entry.remove_entry();
            self.now = at;
            self.step(item)?;
        }
        self.now = self.now.max(until);
        Ok(())
    }

    /// Runs to the scenario's end and returns the report.
    pub fn run(mut self) -> Result<ScenarioReport, ScenarioError> {
        let end = self.scenario.duration_ms;
        self.run_until(end)?;
        Ok(self.finish())
    }

    pub fn finish(mut self) -> ScenarioReport {
        for (id, n) in &self.nodes {
            for p in n.node.producers().instances() {
                self.report.stores.insert(p.component_id().to_string(), p.contents());
            }
            if let Some(r) = n.node.registry() {
                self.report.registries.insert(id.clone(), r.canonical_bytes());
            }
        }
        let mut report = self.report;
        report.digest = self.hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        report
    }

    fn step(&mut self, item: Item) -> Result<(), ScenarioError> {
        match item {
            Item::Start(id) => self.start(&id),
            Item::Fault(i) => self.fault(i),
            Item::Deliver { to, gen, conn, from, msg } => {
                if self.conns.contains_key(&conn) && self.nodes.get(&to).is_some_and(|n| n.gen == gen) {
                    self.trace(format_args!("deliver {to} {from:?} {msg:?}"));
                    let out = self.nodes.get_mut(&to).expect("checked").node.handle(self.now, from, msg);
                    self.apply(&to, out);
                }
                Ok(())
            }
            Item::Timer { node, gen, timer } => {
                if self.nodes.get(&node).is_some_and(|n| n.gen == gen) {
                    let out = self.nodes.get_mut(&node).expect("checked").node.on_timer(self.now, timer);
                    self.apply(&node, out);
                }
                Ok(())
            }
            Item::PeerDown { node, gen, peer } => {
                if self.nodes.get(&node).is_some_and(|n| n.gen == gen) {
                    self.trace(format_args!("down {node} {peer:?}"));
                    let out = self.nodes.get_mut(&node).expect("checked").node.peer_down(self.now, peer);
                    self.apply(&node, out);
                }
                Ok(())
            }
        }
    }

    fn apply(&mut self, from: &str, outputs: Vec<Output>) {
        for o in outputs {
            match o {
                Output::Send { to, msg } => self.send(from, to, msg),
                Output::Timer { at, timer } => {
                    let gen = self.nodes.get(from).map_or(0, |n| n.gen);
                    self.push(at, Item::Timer { node: from.to_string(), gen, timer });
                }
                Output::Event(e) => self.record(from, e),
            }
        }
    }

    fn record(&mut self, from: &str, e: Event) {
        self.trace(format_args!("event {from} {e:?}"));
        let now = self.now;
        let r = &mut self.report;
        match e {
            Event::Registered { registry, component } => r.registered.push((now, registry, component)),
            Event::Expired { registry, component } => r.expired.push((now, registry, component)),
            Event::NoProducers { consumer } => r.no_producers.entry(consumer).or_default().push(now),
            Event::Delivered { consumer, row } => r.delivered.entry(consumer).or_default().push((now, row)),
            Event::Result { consumer, outcome } => r.results.entry(consumer).or_default().push((now, outcome)),
            Event::Published { producer, seq, tuple } => {
                r.published.entry(producer).or_default().push((now, seq, tuple))
            }
            Event::Rejected { component, message } => r.rejected.push((now, component, message)),
            Event::Metric(m) => self.publish_metric(m),
        }
    }

    fn publish_metric(&mut self, m: SelfMonitoringRecord) {
        let tuple = m.to_tuple();
        self.report.monitoring.push(m);
        if let Some(n) = self.nodes.get_mut(MONITOR_NODE) {
            if let Ok((_, out)) = n.node.insert_local(MONITOR_NODE, vec![tuple], self.now) {
                // Publications into the monitor store are not traced per row.
                let out = out.into_iter().filter(|o| !matches!(o, Output::Event(Event::Published { .. }))).collect();
                self.apply(MONITOR_NODE, out);
            }
        }
    }

    fn connection(&mut self, a: &str, b: &str) -> u64 {
        if let Some(c) = self.conn_of.get(&(a.to_string(), b.to_string())) {
            return *c;
        }
        let c = self.next_conn;
        self.next_conn += 1;
        self.conns.insert(c, (a.to_string(), b.to_string()));
        self.conn_of.insert((a.to_string(), b.to_string()), c);
        c
    }

    fn send(&mut self, from: &str, to: Peer, msg: Message) {
        let latency = self.scenario.latency_ms;
        let from_gen = self.nodes.get(from).map_or(0, |n| n.gen);
        match to {
            Peer::Out(addr) => {
                let target = node_of(&addr).to_string();
                let reachable = self.nodes.contains_key(&target) && !self.partitions.contains(&pair(from, &target));
                if !reachable {
                    self.push(self.now + latency, Item::PeerDown { node: from.into(), gen: from_gen, peer: Peer::Out(addr) });
                    return;
                }
                if self.dropped(from, &target, &msg) {
                    return;
                }
                let conn = self.connection(from, &target);
                let gen = self.nodes[&target].gen;
                self.push(self.now + latency, Item::Deliver { to: target, gen, conn, from: Peer::In(conn), msg });
            }
            Peer::In(conn) => {
                let Some((client, server)) = self.conns.get(&conn).cloned() else { return };
                if server != from || self.dropped(from, &client, &msg) {
                    return;
                }
                let Some(gen) = self.nodes.get(&client).map(|n| n.gen) else { return };
                self.push(self.now + latency, Item::Deliver { to: client, gen, conn, from: Peer::Out(address(from)), msg });
            }
        }
    }

    fn dropped(&mut self, from: &str, to: &str, msg: &Message) -> bool {
        let kind = msg.kind();
        for rule in &mut self.drops {
            if rule.from == from && rule.to == to && (rule.kind == "*" || rule.kind == kind) {
                rule.seen += 1;
                if rule.seen % rule.every as u64 == 0 {
                    self.hasher.update(format!("{} drop {from}->{to} {kind}\n", self.now).as_bytes());
                    return true;
                }
            }
        }
        false
    }

    /// Closes every connection matching `cut`, telling both ends.
    fn cut(&mut self, cut: impl Fn(&str, &str) -> bool) {
        let gone: Vec<(u64, (String, String))> =
            self.conns.iter().filter(|(_, (a, b))| cut(a, b)).map(|(c, p)| (*c, p.clone())).collect();
        let latency = self.scenario.latency_ms;
        for (c, (client, server)) in gone {
            self.conns.remove(&c);
            self.conn_of.remove(&(client.clone(), server.clone()));
            if let Some(n) = self.nodes.get(&client) {
                let gen = n.gen;
                self.push(self.now + latency, Item::PeerDown { node: client.clone(), gen, peer: Peer::Out(address(&server)) });
            }
            if let Some(n) = self.nodes.get(&server) {
                let gen = n.gen;
                self.push(self.now + latency, Item::PeerDown { node: server, gen, peer: Peer::In(c) });
            }
        }
    }

    fn fault(&mut self, i: usize) -> Result<(), ScenarioError> {
        let action = self.scenario.faults[i].action.clone();
        self.trace(format_args!("fault {action:?}"));
        match action {
            FaultAction::Kill { component } => self.kill(&component),
            FaultAction::Restart { component } => {
                if !self.nodes.contains_key(&component) {
                    self.start(&component)?;
                }
            }
            FaultAction::Partition { a, b } => {
                self.partitions.insert(pair(&a, &b));
                self.cut(|x, y| pair(x, y) == pair(&a, &b));
            }
            FaultAction::Heal { a, b } => {
                self.partitions.remove(&pair(&a, &b));
            }
            FaultAction::Drop { from, to, kind, every } => {
                self.drops.push(DropRule { from, to, kind, every, seen: 0 });
            }
            FaultAction::PauseSink { archiver } | FaultAction::ResumeSink { archiver } => {
                let pause = matches!(self.scenario.faults[i].action, FaultAction::PauseSink { .. });
                if let Some(n) = self.nodes.get_mut(&archiver) {
                    let out = n.node.pause_sink(pause, self.now);
                    self.apply(&archiver, out);
                }
            }
        }
        Ok(())
    }

    fn kill(&mut self, id: &str) {
        let Some(n) = self.nodes.remove(id) else { return };
        for p in n.node.producers().instances() {
            if let Some(publisher) = n.node.publisher(p.component_id()) {
                self.publishers.insert(p.component_id().to_string(), publisher.clone());
            }
        }
        self.cut(|a, b| a == id || b == id);
        if self.scenario.monitor_ms.is_some() {
            self.publish_metric(SelfMonitoringRecord::new(id, Metric::Available, 0.0, self.now));
        }
    }

    fn storage_path(&self, id: &str) -> PathBuf {
        self.storage.path().join(format!("{id}.store"))
    }

    fn start(&mut self, id: &str) -> Result<(), ScenarioError> {
        let gen = self.generations.entry(id.to_string()).or_insert(0);
        *gen += 1;
        let gen = *gen;
        let now = self.now;
        let sc = self.scenario.clone();
        let mut node = Node::new(id, id, 0);
        let mut out = Vec::new();
        let bad = |e: crate::node::NodeError| ScenarioError::Invalid(format!("{id}: {e}"));
        if let Some(i) = (0..sc.registries.count).find(|i| registry_name(*i) == id) {
            let mut reg = Registry::new(id);
            for t in self.catalog.tables() {
                reg.declare_table(t.clone()).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            }
            let peers = (0..sc.registries.count).filter(|j| *j != i).map(|j| address(&registry_name(j))).collect();
            out.extend(node.host_registry(reg, peers, sc.registries.sync_ms, sc.registries.sweep_ms, now));
        } else if id == MONITOR_NODE {
            let mut cfg = ProducerConfig::new(MONITOR_NODE, ProducerType::DataBase, monitor_table(), ViewPredicate::universal());
            cfg.interval_ms = sc.interval_ms;
            let inst = ProducerInstance::open(cfg, gen).map_err(|e| ScenarioError::Storage(e.to_string()))?;
            out.extend(node.add_producer(inst, &address(&registry_name(0)), now).map_err(bad)?);
        } else if let Some(p) = sc.producers.iter().find(|p| p.id == id) {
            let ty: ProducerType = p.producer_type.parse().map_err(ScenarioError::Invalid)?;
            let table = self.catalog.require(&p.table)?.clone();
            let view = match &p.view {
                Some(v) => parse_view(v, &table)?,
                None => ViewPredicate::universal(),
            };
            let mut cfg = ProducerConfig::new(id, ty, table, view);
            cfg.interval_ms = p.interval_ms.unwrap_or(sc.interval_ms);
            if ty == ProducerType::ResilientStream {
                cfg.storage = Some(self.storage_path(id));
            }
            let inst = ProducerInstance::open(cfg, gen).map_err(|e| ScenarioError::Storage(e.to_string()))?;
            out.extend(node.add_producer(inst, &address(&registry_name(p.registry)), now).map_err(bad)?);
            let publisher = self.publishers.remove(id).unwrap_or_else(|| {
                let seed = p.seed.unwrap_or_else(|| {
                    let h = Sha256::digest(format!("{}/{}", sc.seed, id).as_bytes());
                    u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
                });
                let mut publisher = Publisher::new(p.period_ms, p.keys, seed);
                publisher.limit = p.limit;
                publisher.stop_at = p.stop_ms;
                publisher
            });
            out.extend(node.add_publisher(id, publisher, now));
        } else if let Some(a) = sc.archivers.iter().find(|a| a.id == id) {
            let spec = sc.archiver_spec(a)?;
            let mut sinks = Vec::new();
            for t in &a.tables {
                let table = sc.sink_table(&self.catalog, t)?;
                let views: Vec<ViewPredicate> = sc
                    .producers
                    .iter()
                    .filter(|p| crate::sql::canonical_ident(&p.table) == crate::sql::canonical_ident(&t.table))
                    .map(|p| p.view.as_deref().map_or(Ok(ViewPredicate::universal()), |v| parse_view(v, &table)))
                    .collect::<Result<_, _>>()?;
                let ty: ProducerType = t.sink_type.parse().map_err(ScenarioError::Invalid)?;
                let mut cfg = ProducerConfig::new(&t.sink, ty, table, sink_view(&views));
                cfg.interval_ms = sc.interval_ms;
                cfg.storage = Some(self.storage_path(&t.sink));
                sinks.push(ProducerInstance::open(cfg, gen).map_err(|e| ScenarioError::Storage(e.to_string()))?);
            }
            let registry = address(&registry_name(a.registry));
            out.extend(node.add_archiver(spec, sinks, &self.catalog, &registry, sc.interval_ms, now).map_err(bad)?);
        } else if let Some(c) = sc.consumers.iter().find(|c| c.id == id) {
            let spec = ConsumerSpec {
                component_id: id.to_string(),
                query: c.query.clone(),
                query_class: c.class.parse().map_err(ScenarioError::Invalid)?,
                registry: address(&registry_name(c.registry)),
                interval_ms: sc.interval_ms,
                repeat_ms: c.repeat_ms,
            };
            out.extend(node.add_consumer(spec, &self.catalog, now).map_err(bad)?);
        } else {
            return Err(ScenarioError::Invalid(format!("unknown component '{id}'")));
        }
        if let Some(m) = sc.monitor_ms {
            out.extend(node.enable_monitoring(m, now));
        }
        self.trace(format_args!("start {id} gen {gen}"));
        self.nodes.insert(id.to_string(), SimNode { node, gen });
        self.apply(id, out);
        Ok(())
    }
}

/// Runs a scenario under the simulated clock.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioReport, ScenarioError> {
    Simulation::new(scenario)?.run()
}
