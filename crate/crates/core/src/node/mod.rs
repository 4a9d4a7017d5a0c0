//! A component as a sans-IO state machine. A node can host a registry,
//! producer instances, consumers and an archiver; it reacts to messages,
//! timers and lost connections by returning [`Output`]s for a driver to
//! carry out. The deterministic simulator and the TCP services are two
//! such drivers.

mod publisher;

pub use publisher::Publisher;

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::archiver::{Archiver, ArchiverError, ArchiverSpec, SinkInfo};
use crate::harness::{Metric, SelfMonitoringRecord};
use crate::mediator::{
    execute_history, execute_latest, plan, ContinuousSession, MediatorError, Outcome, Subscribe, TargetResult,
};
use crate::model::Tuple;
use crate::producer::{Delivery, ProducerError, ProducerHost, ProducerInstance, QueryAnswer};
use crate::registry::{ProducerEntry, QueryClass, Registry, RegistryError};
use crate::sql::{parse_select, Catalog, Query};
use crate::transport::{
    heartbeat_schedule, AckPayload, Body, ConsumerRegistration, Endpoint, ErrorKind, Message, ProducerRegistration,
    ResultRow, TerminationInterval,
};

/// The other end of a connection. `In` connections were opened by the peer
/// (replies go back on them); `Out` connections are opened by this node to
/// an address.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Peer {
    In(u64),
    Out(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Timer {
    Heartbeat(String),
    HeartbeatRetry(String, u64),
    Publish(String),
    Poll(String),
    Sync,
    Sweep,
    Cleanup,
    Monitor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Registered { registry: String, component: String },
    Expired { registry: String, component: String },
    NoProducers { consumer: String },
    Delivered { consumer: String, row: ResultRow },
    Result { consumer: String, outcome: Outcome },
    Published { producer: String, seq: u64, tuple: Tuple },
    Rejected { component: String, message: String },
    Metric(SelfMonitoringRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Send { to: Peer, msg: Message },
    Timer { at: i64, timer: Timer },
    Event(Event),
}

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error(transparent)]
    Producer(#[from] ProducerError),
    #[error(transparent)]
    Mediator(#[from] MediatorError),
    #[error(transparent)]
    Archiver(#[from] ArchiverError),
    #[error(transparent)]
    Sql(#[from] crate::sql::SqlError),
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone)]
struct Lease {
    registry: String,
    interval_ms: u64,
    registered: bool,
    awaiting: Option<u64>,
}

#[derive(Debug, Clone)]
enum PendingKind {
    Lease(String),
    Stream { consumer: String, producer: String },
    Lookup(String),
    Fetch(String),
    Ignore,
}

#[derive(Debug, Clone)]
struct Pending {
    to: String,
    kind: PendingKind,
    sent_at: i64,
}

#[derive(Debug)]
struct Run {
    started: i64,
    plan: Option<crate::mediator::QueryPlan>,
    outstanding: BTreeMap<u64, String>,
    rows: BTreeMap<u64, Vec<ResultRow>>,
    done: Vec<TargetResult>,
}

#[derive(Debug)]
struct OneShot {
    registry: String,
    repeat_ms: Option<u64>,
    run: Option<Run>,
}

#[derive(Debug)]
enum ConsumerKind {
    Continuous(ContinuousSession),
    Archived(String),
    OneShot(OneShot),
}

#[derive(Debug)]
struct LocalConsumer {
    query_text: String,
    query: Query,
    class: QueryClass,
    catalog: Catalog,
    kind: ConsumerKind,
    announced: bool,
}

/// Rows waiting to be collected through the consumer API.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct ResultBuffer {
    pub rows: VecDeque<ResultRow>,
    pub notices: Vec<String>,
    pub done: bool,
    pub dropped: u64,
}

/// Buffered rows per consumer beyond which the oldest are dropped.
pub const RESULT_BUFFER_LIMIT: usize = 100_000;

/// How a consumer is started.
#[derive(Debug, Clone)]
pub struct ConsumerSpec {
    pub component_id: String,
    pub query: String,
    pub query_class: QueryClass,
    pub registry: String,
    pub interval_ms: u64,
    /// One-shot queries: re-run at this period instead of once.
    pub repeat_ms: Option<u64>,
}

struct RegistryPart {
    registry: Registry,
    peers: Vec<String>,
    sync_ms: u64,
    sweep_ms: u64,
}

struct ArchiverPart {
    archiver: Archiver,
    paused: bool,
}

pub struct Node {
    id: String,
    host: String,
    port: u16,
    next_request: u64,
    pending: HashMap<u64, Pending>,
    leases: BTreeMap<String, Lease>,
    registry: Option<RegistryPart>,
    producers: ProducerHost,
    subscribers: BTreeMap<(String, u64), (Peer, u64)>,
    publishers: BTreeMap<String, Publisher>,
    consumers: BTreeMap<String, LocalConsumer>,
    archiver: Option<ArchiverPart>,
    results: BTreeMap<String, ResultBuffer>,
    monitor_ms: Option<u64>,
}

fn send(to: Peer, request_id: u64, body: Body) -> Output {
    Output::Send { to, msg: Message::new(request_id, body) }
}

fn timer(at: i64, t: Timer) -> Output {
    Output::Timer { at, timer: t }
}

fn registry_error(e: &RegistryError) -> Body {
    let kind = match e {
        RegistryError::UnknownComponent(_) => ErrorKind::UnknownComponent,
        RegistryError::Sql(s) => crate::sql_error_kind(s),
        RegistryError::Protocol(_) => ErrorKind::Protocol,
    };
    Body::error(kind, e.to_string())
}

/// Delay before re-sending an unanswered heartbeat.
fn retry_delay(interval_ms: u64) -> i64 {
    let schedule = heartbeat_schedule(TerminationInterval::new(interval_ms.max(1)).expect("positive"));
    (schedule / 4).max(1) as i64
}

fn schedule(interval_ms: u64) -> i64 {
    heartbeat_schedule(TerminationInterval::new(interval_ms.max(1)).expect("positive")) as i64
}

impl Node {
    pub fn new(id: &str, host: &str, port: u16) -> Self {
        Node {
            id: id.to_string(),
            host: host.to_string(),
            port,
            next_request: 1,
            pending: HashMap::new(),
            leases: BTreeMap::new(),
            registry: None,
            producers: ProducerHost::new(),
            subscribers: BTreeMap::new(),
            publishers: BTreeMap::new(),
            consumers: BTreeMap::new(),
            archiver: None,
            results: BTreeMap::new(),
            monitor_ms: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn address(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }

    /// Sets the port once a listener is bound (before anything registers).
    pub fn set_port(&mut self, port: u16) {
        self.port = port;
    }

    pub fn endpoint(&self, component_id: &str) -> Endpoint {
        Endpoint::new(&self.host, self.port, component_id)
    }

    fn request_id(&mut self) -> u64 {
        let id = self.next_request;
        self.next_request += 1;
        id
    }

    fn request(&mut self, to: &str, kind: PendingKind, body: Body, now: i64) -> Output {
        let id = self.request_id();
        self.pending.insert(id, Pending { to: to.to_string(), kind, sent_at: now });
        send(Peer::Out(to.to_string()), id, body)
    }

    fn metric(&self, component: &str, metric: Metric, value: f64, now: i64) -> Option<Output> {
        self.monitor_ms
            .map(|_| Output::Event(Event::Metric(SelfMonitoringRecord::new(component, metric, value, now))))
    }

    /// Emits self-monitoring records every `period_ms`.
    pub fn enable_monitoring(&mut self, period_ms: u64, now: i64) -> Vec<Output> {
        self.monitor_ms = Some(period_ms.max(1));
        vec![timer(now, Timer::Monitor)]
    }

    // ---- registry -------------------------------------------------------

    pub fn host_registry(&mut self, registry: Registry, peers: Vec<String>, sync_ms: u64, sweep_ms: u64, now: i64) -> Vec<Output> {
        self.registry = Some(RegistryPart { registry, peers, sync_ms: sync_ms.max(1), sweep_ms: sweep_ms.max(1) });
        vec![timer(now + sync_ms.max(1) as i64, Timer::Sync), timer(now + sweep_ms.max(1) as i64, Timer::Sweep)]
    }

    pub fn registry(&self) -> Option<&Registry> {
        self.registry.as_ref().map(|r| &r.registry)
    }

    pub fn registry_mut(&mut self) -> Option<&mut Registry> {
        self.registry.as_mut().map(|r| &mut r.registry)
    }

    pub fn set_registry_peers(&mut self, peers: Vec<String>) {
        if let Some(r) = &mut self.registry {
            r.peers = peers;
        }
    }

    fn notify(&mut self, notes: Vec<crate::registry::Notification>, now: i64) -> Vec<Output> {
        notes
            .into_iter()
            .map(|n| {
                let body = Body::NotifyNewProducer { consumer: n.consumer.component_id.clone(), producer: n.producer };
                self.request(&n.consumer.endpoint.address(), PendingKind::Ignore, body, now)
            })
            .collect()
    }

    fn handle_registry(&mut self, now: i64, from: Peer, msg: Message) -> Vec<Output> {
        let rid = msg.request_id;
        let Some(part) = self.registry.as_mut() else {
            return vec![send(from, rid, Body::error(ErrorKind::Protocol, format!("{} is not a registry", msg.kind())))];
        };
        let reg_id = part.registry.id().to_string();
        let mut out = Vec::new();
        let reply = match msg.body {
            Body::DeclareTable { table } => match part.registry.declare_table(table) {
                Ok(()) => Body::Ack(AckPayload::Done),
                Err(e) => registry_error(&e),
            },
            Body::RegisterProducer(reg) => match part.registry.register_producer(&reg, now) {
                Ok((deadline, notes)) => {
                    out.push(Output::Event(Event::Registered { registry: reg_id, component: reg.component_id }));
                    out.extend(self.notify(notes, now));
                    Body::Ack(AckPayload::Registered { deadline })
                }
                Err(e) => registry_error(&e),
            },
            Body::RegisterConsumer(reg) => match part.registry.register_consumer(&reg, now) {
                Ok((deadline, producers)) => {
                    out.push(Output::Event(Event::Registered { registry: reg_id, component: reg.component_id }));
                    Body::Ack(AckPayload::Refreshed { deadline, producers })
                }
                Err(e) => registry_error(&e),
            },
            Body::Heartbeat { component_id } => match part.registry.heartbeat(&component_id, now) {
                Ok((deadline, producers)) => {
                    Body::Ack(AckPayload::Refreshed { deadline, producers: producers.unwrap_or_default() })
                }
                Err(e) => registry_error(&e),
            },
            Body::Unregister { component_id } => match part.registry.unregister(&component_id, now) {
                Ok(()) => Body::Ack(AckPayload::Done),
                Err(e) => registry_error(&e),
            },
            Body::RegistrySync(snap) => match part.registry.apply_sync(&snap, now) {
                Ok(notes) => {
                    out.extend(self.notify(notes, now));
                    Body::Ack(AckPayload::Done)
                }
                Err(e) => registry_error(&e),
            },
            Body::ListTables => Body::Ack(AckPayload::Tables(part.registry.catalog().tables().cloned().collect())),
            Body::Lookup { query, query_class } => match part.registry.lookup_text(&query, query_class, now) {
                Ok(ps) => Body::Ack(AckPayload::Producers(ps)),
                Err(e) => registry_error(&e),
            },
            Body::Status => Body::Ack(AckPayload::Status {
                producers: part.registry.producers(now),
                consumers: part.registry.consumers(now),
            }),
            other => Body::error(ErrorKind::Protocol, format!("unexpected {}", other.kind())),
        };
        out.insert(0, send(from, rid, reply));
        out
    }

    // ---- producers ------------------------------------------------------

    /// Adds a producer instance and starts registering it.
    pub fn add_producer(&mut self, instance: ProducerInstance, registry: &str, now: i64) -> Result<Vec<Output>, NodeError> {
        let id = instance.component_id().to_string();
        let interval_ms = instance.config().interval_ms;
        self.producers.add(instance)?;
        let mut out = vec![];
        if let Some(at) = self.producers.get(&id).and_then(|p| p.next_cleanup()) {
            out.push(timer(at, Timer::Cleanup));
        }
        out.extend(self.lease(&id, registry, interval_ms, now));
        Ok(out)
    }

    /// Attaches a synthetic load generator to a local producer.
    pub fn add_publisher(&mut self, producer: &str, publisher: Publisher, now: i64) -> Vec<Output> {
        self.publishers.insert(producer.to_string(), publisher);
        vec![timer(now, Timer::Publish(producer.to_string()))]
    }

    pub fn publisher(&self, producer: &str) -> Option<&Publisher> {
        self.publishers.get(producer)
    }

    pub fn producers(&self) -> &ProducerHost {
        &self.producers
    }

    pub fn producers_mut(&mut self) -> &mut ProducerHost {
        &mut self.producers
    }

    /// Stops a local component: unregisters it and forgets it.
    pub fn remove_component(&mut self, id: &str, now: i64) -> Vec<Output> {
        let mut out = Vec::new();
        if let Some(lease) = self.leases.remove(id) {
            out.push(self.request(&lease.registry, PendingKind::Ignore, Body::Unregister { component_id: id.into() }, now));
        }
        self.producers.remove(id);
        self.publishers.remove(id);
        self.consumers.remove(id);
        self.results.remove(id);
        self.pending.retain(|_, p| match &p.kind {
            PendingKind::Stream { consumer, .. } | PendingKind::Lookup(consumer) | PendingKind::Fetch(consumer) => consumer != id,
            _ => true,
        });
        self.subscribers.retain(|(p, _), _| p != id);
        out
    }

    fn push(&mut self, producer: &str, deliveries: Vec<Delivery>) -> Vec<Output> {
        let mut by_sub: BTreeMap<u64, Vec<ResultRow>> = BTreeMap::new();
        for d in deliveries {
            by_sub.entry(d.subscription).or_default().push(d.row);
        }
        let mut out = Vec::new();
        for (sub, rows) in by_sub {
            match self.subscribers.get(&(producer.to_string(), sub)) {
                Some((peer, rid)) => out.push(send(peer.clone(), *rid, Body::TupleBatch { rows })),
                None => {
                    if let Ok(p) = self.producers.get_mut(producer) {
                        p.unsubscribe(sub);
                    }
                }
            }
        }
        out
    }

    /// Inserts into a local producer as if a client had sent the tuples.
    pub fn insert_local(&mut self, producer: &str, tuples: Vec<Tuple>, now: i64) -> Result<(u64, Vec<Output>), ProducerError> {
        let inst = self.producers.get_mut(producer)?;
        if let Some(owner) = inst.owner() {
            return Err(ProducerError::Busy(owner.to_string()));
        }
        self.insert_unchecked(producer, tuples, now)
    }

    fn insert_unchecked(&mut self, producer: &str, tuples: Vec<Tuple>, now: i64) -> Result<(u64, Vec<Output>), ProducerError> {
        let n = tuples.len() as u64;
        let copies = tuples.clone();
        let (last, deliveries) = self.producers.get_mut(producer)?.insert(tuples, now)?;
        let mut out: Vec<Output> = copies
            .into_iter()
            .enumerate()
            .map(|(i, tuple)| {
                Output::Event(Event::Published { producer: producer.to_string(), seq: last + 1 - n + i as u64, tuple })
            })
            .collect();
        out.extend(self.push(producer, deliveries));
        Ok((last, out))
    }

    fn handle_insert(&mut self, now: i64, from: Peer, rid: u64, producer: String, tuples: Vec<Tuple>) -> Vec<Output> {
        let n = tuples.len() as u64;
        match self.insert_local(&producer, tuples, now) {
            Ok((last, mut out)) => {
                out.insert(0, send(from, rid, Body::Ack(AckPayload::Inserted { count: n, last_seq: last })));
                out
            }
            Err(e) => vec![send(from, rid, Body::error(e.kind(), e.to_string()))],
        }
    }

    fn handle_start_query(&mut self, now: i64, from: Peer, rid: u64, req: crate::transport::StartQuery) -> Vec<Output> {
        match self.producers.start_query(&req, now) {
            Ok(QueryAnswer::Subscribed { producer, subscription, backlog }) => {
                self.subscribers.insert((producer, subscription), (from.clone(), rid));
                vec![send(from, rid, Body::TupleBatch { rows: backlog })]
            }
            Ok(QueryAnswer::Rows(rows)) => {
                vec![send(from.clone(), rid, Body::TupleBatch { rows }), send(from, rid, Body::EndOfResults { failures: vec![] })]
            }
            Err(e) => vec![send(from, rid, Body::error(e.kind(), e.to_string()))],
        }
    }

    fn publish(&mut self, producer: &str, now: i64) -> Vec<Output> {
        let Some(mut publisher) = self.publishers.remove(producer) else { return vec![] };
        let Some(inst) = self.producers.get(producer) else { return vec![] };
        if publisher.exhausted(now) {
            self.publishers.insert(producer.to_string(), publisher);
            return vec![];
        }
        let t = publisher.next_tuple(producer, &inst.table().clone(), &inst.view().clone(), now);
        let next = now + publisher.period_ms as i64;
        self.publishers.insert(producer.to_string(), publisher);
        let mut out = match self.insert_unchecked(producer, vec![t], now) {
            Ok((_, out)) => out,
            Err(e) => vec![Output::Event(Event::Rejected { component: producer.to_string(), message: e.to_string() })],
        };
        out.push(timer(next, Timer::Publish(producer.to_string())));
        out
    }

    fn cleanup(&mut self, now: i64) -> Vec<Output> {
        let mut out = Vec::new();
        for p in self.producers.instances_mut() {
            if let Err(e) = p.run_cleanup(now) {
                out.push(Output::Event(Event::Rejected { component: p.component_id().to_string(), message: e.to_string() }));
            }
        }
        if let Some(at) = self.producers.instances().filter_map(|p| p.next_cleanup()).min() {
            out.push(timer(at, Timer::Cleanup));
        }
        out
    }

    /// Schedules a cleanup rule on a local producer.
    pub fn schedule_cleanup(&mut self, producer: &str, rule: crate::model::CleanupRule, now: i64) -> Result<Vec<Output>, ProducerError> {
        let p = self.producers.get_mut(producer)?;
        p.schedule_cleanup(rule, now)?;
        Ok(p.next_cleanup().map(|at| timer(at, Timer::Cleanup)).into_iter().collect())
    }

    // ---- leases ---------------------------------------------------------

    fn lease(&mut self, id: &str, registry: &str, interval_ms: u64, now: i64) -> Vec<Output> {
        self.leases.insert(
            id.to_string(),
            Lease { registry: registry.to_string(), interval_ms: interval_ms.max(1), registered: false, awaiting: None },
        );
        vec![timer(now, Timer::Heartbeat(id.to_string()))]
    }

    fn registration(&self, id: &str, interval_ms: u64) -> Option<Body> {
        if let Some(p) = self.producers.get(id) {
            return Some(Body::RegisterProducer(ProducerRegistration {
                component_id: id.to_string(),
                endpoint: self.endpoint(id),
                producer_type: p.producer_type(),
                table: p.table().name.clone(),
                view: p.view().clone(),
                interval_ms,
                epoch: p.epoch(),
            }));
        }
        self.consumers.get(id).map(|c| {
            Body::RegisterConsumer(ConsumerRegistration {
                component_id: id.to_string(),
                endpoint: self.endpoint(id),
                query: c.query_text.clone(),
                query_class: c.class,
                interval_ms,
            })
        })
    }

    fn send_lease(&mut self, id: &str, now: i64) -> Vec<Output> {
        let Some(lease) = self.leases.get(id).cloned() else { return vec![] };
        let body = if lease.registered {
            Body::Heartbeat { component_id: id.to_string() }
        } else {
            match self.registration(id, lease.interval_ms) {
                Some(b) => b,
                None => return vec![],
            }
        };
        let out = self.request(&lease.registry, PendingKind::Lease(id.to_string()), body, now);
        let Output::Send { msg, .. } = &out else { unreachable!() };
        let rid = msg.request_id;
        if let Some(l) = self.leases.get_mut(id) {
            l.awaiting = Some(rid);
        }
        vec![out, timer(now + retry_delay(lease.interval_ms), Timer::HeartbeatRetry(id.to_string(), rid))]
    }

    fn on_lease_reply(&mut self, now: i64, id: &str, rid: u64, sent_at: i64, body: Body) -> Vec<Output> {
        let mut out = Vec::new();
        let Some(lease) = self.leases.get_mut(id) else { return out };
        if lease.awaiting == Some(rid) {
            lease.awaiting = None;
        }
        match body {
            Body::Ack(payload) => {
                lease.registered = true;
                out.extend(self.metric(id, Metric::ResponseTimeMs, (now - sent_at) as f64, now));
                if let AckPayload::Refreshed { producers, .. } = payload {
                    out.extend(self.replan(id, &producers, now));
                }
            }
            Body::Error(e) if e.kind == ErrorKind::UnknownComponent => {
                lease.registered = false;
                out.extend(self.send_lease(id, now));
            }
            Body::Error(e) => {
                out.push(Output::Event(Event::Rejected { component: id.to_string(), message: e.message }));
            }
            _ => {}
        }
        out
    }

    // ---- consumers ------------------------------------------------------

    /// Starts a consumer. `catalog` must hold the tables its query names.
    pub fn add_consumer(&mut self, spec: ConsumerSpec, catalog: &Catalog, now: i64) -> Result<Vec<Output>, NodeError> {
        if self.consumers.contains_key(&spec.component_id) {
            return Err(NodeError::Config(format!("consumer '{}' already exists", spec.component_id)));
        }
        let query = parse_select(&spec.query, catalog)?;
        let class = crate::mediator::classify(&query, spec.query_class)?;
        let kind = match class {
            QueryClass::Continuous => {
                let table = catalog.require(&query.tables[0].table)?.clone();
                ConsumerKind::Continuous(ContinuousSession::new(&spec.query, query.clone(), table)?)
            }
            _ => ConsumerKind::OneShot(OneShot { registry: spec.registry.clone(), repeat_ms: spec.repeat_ms, run: None }),
        };
        let cid = spec.component_id.clone();
        self.consumers.insert(
            cid.clone(),
            LocalConsumer { query_text: spec.query, query, class, catalog: catalog.clone(), kind, announced: false },
        );
        self.results.insert(cid.clone(), ResultBuffer::default());
        Ok(match class {
            QueryClass::Continuous => self.lease(&cid, &spec.registry, spec.interval_ms, now),
            _ => vec![timer(now, Timer::Poll(cid))],
        })
    }

    /// Collects and clears what a consumer has produced so far.
    pub fn take_results(&mut self, consumer: &str) -> Option<ResultBuffer> {
        let buf = self.results.get_mut(consumer)?;
        let taken = std::mem::take(buf);
        buf.done = taken.done;
        Some(taken)
    }

    pub fn has_consumer(&self, consumer: &str) -> bool {
        self.consumers.contains_key(consumer)
    }

    fn buffer(&mut self, consumer: &str, rows: &[ResultRow]) {
        let buf = self.results.entry(consumer.to_string()).or_default();
        for r in rows {
            if buf.rows.len() == RESULT_BUFFER_LIMIT {
                buf.rows.pop_front();
                buf.dropped += 1;
            }
            buf.rows.push_back(r.clone());
        }
    }

    fn session_mut(&mut self, consumer: &str) -> Option<&mut ContinuousSession> {
        match &mut self.consumers.get_mut(consumer)?.kind {
            ConsumerKind::Continuous(s) => Some(s),
            ConsumerKind::Archived(table) => {
                let table = table.clone();
                self.archiver.as_mut()?.archiver.session_mut(&table)
            }
            ConsumerKind::OneShot(_) => None,
        }
    }

    fn subscribe(&mut self, consumer: &str, subs: Vec<Subscribe>, now: i64) -> Vec<Output> {
        subs.into_iter()
            .map(|s| {
                let kind = PendingKind::Stream { consumer: consumer.to_string(), producer: s.producer.component_id.clone() };
                self.request(&s.producer.endpoint.address(), kind, Body::StartQuery(s.request), now)
            })
            .collect()
    }

    fn replan(&mut self, consumer: &str, producers: &[ProducerEntry], now: i64) -> Vec<Output> {
        let mut out = Vec::new();
        if let Some(c) = self.consumers.get_mut(consumer) {
            if !c.announced {
                c.announced = true;
                if producers.is_empty() && matches!(c.kind, ConsumerKind::Continuous(_)) {
                    out.push(Output::Event(Event::NoProducers { consumer: consumer.to_string() }));
                    self.results.entry(consumer.to_string()).or_default().notices.push("no producers".into());
                }
            }
        }
        let subs = match self.session_mut(consumer) {
            Some(s) => s.replan(producers),
            None => return out,
        };
        out.extend(self.subscribe(consumer, subs, now));
        out
    }

    fn on_stream_rows(&mut self, consumer: &str, producer: &str, rows: Vec<ResultRow>, now: i64) -> Vec<Output> {
        let Some(session) = self.session_mut(consumer) else { return vec![] };
        session.on_subscribed(producer);
        let archived = match self.consumers.get(consumer).map(|c| &c.kind) {
            Some(ConsumerKind::Archived(t)) => Some(t.clone()),
            _ => None,
        };
        if let Some(table) = archived {
            let Some(part) = self.archiver.as_mut() else { return vec![] };
            let ages: Vec<i64> = rows.iter().flat_map(|r| r.tuples.iter().map(|t| now - t.timestamp())).collect();
            part.archiver.deliver(&table, rows, now);
            let mut out: Vec<Output> =
                ages.into_iter().filter_map(|a| self.metric(consumer, Metric::InfoAgeMs, a as f64, now)).collect();
            out.extend(self.drain(now));
            return out;
        }
        let accepted = self.session_mut(consumer).map(|s| s.on_rows(rows, now)).unwrap_or_default();
        self.buffer(consumer, &accepted);
        let mut out = Vec::new();
        for row in accepted {
            for t in &row.tuples {
                out.extend(self.metric(consumer, Metric::InfoAgeMs, (now - t.timestamp()) as f64, now));
            }
            out.push(Output::Event(Event::Delivered { consumer: consumer.to_string(), row }));
        }
        out
    }

    fn poll(&mut self, consumer: &str, now: i64) -> Vec<Output> {
        let Some(c) = self.consumers.get_mut(consumer) else { return vec![] };
        let ConsumerKind::OneShot(shot) = &mut c.kind else { return vec![] };
        let mut out = Vec::new();
        if let Some(r) = shot.repeat_ms {
            out.push(timer(now + r as i64, Timer::Poll(consumer.to_string())));
        }
        if shot.run.is_some() {
            return out;
        }
        shot.run = Some(Run { started: now, plan: None, outstanding: BTreeMap::new(), rows: BTreeMap::new(), done: vec![] });
        let registry = shot.registry.clone();
        let body = Body::Lookup { query: c.query_text.clone(), query_class: c.class };
        out.push(self.request(&registry, PendingKind::Lookup(consumer.to_string()), body, now));
        out
    }

    fn on_lookup(&mut self, consumer: &str, body: Body, now: i64) -> Vec<Output> {
        let Some(c) = self.consumers.get_mut(consumer) else { return vec![] };
        let ConsumerKind::OneShot(shot) = &mut c.kind else { return vec![] };
        let Some(run) = shot.run.as_mut() else { return vec![] };
        let producers = match body {
            Body::Ack(AckPayload::Producers(ps)) => ps,
            Body::Error(e) => {
                run.done.push(("registry".into(), Err(e.message)));
                return self.finish(consumer, now);
            }
            _ => return vec![],
        };
        let p = match plan(&c.query_text, &c.query, c.class, &producers) {
            Ok(p) => p,
            Err(e) => {
                run.done.push(("mediator".into(), Err(e.to_string())));
                return self.finish(consumer, now);
            }
        };
        let targets: Vec<(String, String, Body)> = p
            .targets
            .iter()
            .map(|t| (t.endpoint.address(), t.label(), Body::StartQuery(p.request(t))))
            .collect();
        run.plan = Some(p);
        if targets.is_empty() {
            return self.finish(consumer, now);
        }
        let mut out = Vec::new();
        let mut ids = Vec::new();
        for (addr, label, body) in targets {
            let o = self.request(&addr, PendingKind::Fetch(consumer.to_string()), body, now);
            if let Output::Send { msg, .. } = &o {
                ids.push((msg.request_id, label));
            }
            out.push(o);
        }
        if let Some(ConsumerKind::OneShot(OneShot { run: Some(run), .. })) = self.consumers.get_mut(consumer).map(|c| &mut c.kind) {
            run.outstanding.extend(ids);
        }
        out
    }

    fn on_fetch(&mut self, consumer: &str, rid: u64, body: Body, now: i64) -> Vec<Output> {
        let Some(ConsumerKind::OneShot(OneShot { run: Some(run), .. })) = self.consumers.get_mut(consumer).map(|c| &mut c.kind)
        else {
            return vec![];
        };
        match body {
            Body::TupleBatch { rows } => {
                run.rows.entry(rid).or_default().extend(rows);
                return vec![];
            }
            Body::EndOfResults { .. } => {
                let label = run.outstanding.remove(&rid).unwrap_or_default();
                let rows = run.rows.remove(&rid).unwrap_or_default();
                run.done.push((label, Ok(rows)));
            }
            Body::Error(e) => {
                let label = run.outstanding.remove(&rid).unwrap_or_default();
                run.rows.remove(&rid);
                run.done.push((label, Err(e.message)));
            }
            _ => return vec![],
        }
        if run.outstanding.is_empty() {
            self.finish(consumer, now)
        } else {
            vec![]
        }
    }

    fn finish(&mut self, consumer: &str, now: i64) -> Vec<Output> {
        let Some(c) = self.consumers.get_mut(consumer) else { return vec![] };
        let ConsumerKind::OneShot(shot) = &mut c.kind else { return vec![] };
        let Some(run) = shot.run.take() else { return vec![] };
        let repeat = shot.repeat_ms.is_some();
        let outcome = match &run.plan {
            Some(p) if c.class == QueryClass::Latest => execute_latest(p, &c.catalog, run.done),
            Some(p) => execute_history(p, run.done),
            None => Outcome {
                rows: vec![],
                failures: run
                    .done
                    .into_iter()
                    .filter_map(|(l, r)| r.err().map(|m| crate::transport::ProducerFailure { producer: l, message: m }))
                    .collect(),
                no_producers: false,
            },
        };
        let mut out: Vec<Output> = self.metric(consumer, Metric::ResponseTimeMs, (now - run.started) as f64, now).into_iter().collect();
        let buf = self.results.entry(consumer.to_string()).or_default();
        if !repeat {
            buf.done = true;
        }
        if outcome.no_producers {
            buf.notices.push("no producers".into());
            out.push(Output::Event(Event::NoProducers { consumer: consumer.to_string() }));
        }
        for f in &outcome.failures {
            buf.notices.push(format!("{}: {}", f.producer, f.message));
        }
        self.buffer(consumer, &outcome.rows.clone());
        out.push(Output::Event(Event::Result { consumer: consumer.to_string(), outcome }));
        out
    }

    // ---- archiver -------------------------------------------------------

    /// Starts an archiver whose sinks are created here, owned by it and
    /// registered like any producer.
    pub fn add_archiver(
        &mut self,
        spec: ArchiverSpec,
        sinks: Vec<ProducerInstance>,
        catalog: &Catalog,
        registry: &str,
        consumer_interval_ms: u64,
        now: i64,
    ) -> Result<Vec<Output>, NodeError> {
        if self.archiver.is_some() {
            return Err(NodeError::Config("this node already runs an archiver".into()));
        }
        let infos: Vec<SinkInfo> = sinks
            .iter()
            .map(|s| SinkInfo { component_id: s.component_id().to_string(), producer_type: s.producer_type(), table: s.table().clone() })
            .collect();
        let archiver = Archiver::new(spec.clone(), catalog, &infos)?;
        let mut out = Vec::new();
        for mut s in sinks {
            s.claim(&spec.component_id)?;
            out.extend(self.add_producer(s, registry, now)?);
        }
        for t in archiver.tables().map(str::to_string).collect::<Vec<_>>() {
            let cid = format!("{}/{}", spec.component_id, t);
            let text = crate::archiver::source_query(spec.tables.iter().find(|x| crate::sql::canonical_ident(&x.table) == t).expect("validated"));
            let query = parse_select(&text, catalog)?;
            self.consumers.insert(
                cid.clone(),
                LocalConsumer {
                    query_text: text,
                    query,
                    class: QueryClass::Continuous,
                    catalog: catalog.clone(),
                    kind: ConsumerKind::Archived(t.clone()),
                    announced: true,
                },
            );
            out.extend(self.lease(&cid, registry, consumer_interval_ms, now));
        }
        self.archiver = Some(ArchiverPart { archiver, paused: false });
        Ok(out)
    }

    pub fn archiver(&self) -> Option<&Archiver> {
        self.archiver.as_ref().map(|a| &a.archiver)
    }

    /// Holds re-insertion into the sinks (deliveries keep queueing).
    pub fn pause_sink(&mut self, paused: bool, now: i64) -> Vec<Output> {
        match self.archiver.as_mut() {
            Some(a) => {
                a.paused = paused;
                self.drain(now)
            }
            None => vec![],
        }
    }

    fn drain(&mut self, now: i64) -> Vec<Output> {
        let mut out = Vec::new();
        loop {
            let Some(part) = self.archiver.as_mut() else { break };
            if part.paused {
                break;
            }
            let Some((sink, batch)) = part.archiver.next_batch(512) else { break };
            let n = batch.len();
            match self.insert_unchecked(&sink, batch, now) {
                Ok((_, o)) => {
                    out.extend(o);
                    self.archiver.as_mut().expect("present").archiver.confirm(n);
                }
                Err(ProducerError::Storage(m)) => {
                    out.push(Output::Event(Event::Rejected { component: sink, message: m }));
                    break;
                }
                Err(e) => {
                    out.push(Output::Event(Event::Rejected { component: sink, message: e.to_string() }));
                    self.archiver.as_mut().expect("present").archiver.discard(n);
                }
            }
        }
        out
    }

    // ---- dispatch -------------------------------------------------------

    pub fn handle(&mut self, now: i64, from: Peer, msg: Message) -> Vec<Output> {
        let rid = msg.request_id;
        match msg.body {
            Body::DeclareTable { .. }
            | Body::RegisterProducer(_)
            | Body::RegisterConsumer(_)
            | Body::Heartbeat { .. }
            | Body::Unregister { .. }
            | Body::RegistrySync(_)
            | Body::ListTables
            | Body::Lookup { .. }
            | Body::Status => self.handle_registry(now, from, msg),
            Body::Insert { producer, tuples } => self.handle_insert(now, from, rid, producer, tuples),
            Body::StartQuery(req) => self.handle_start_query(now, from, rid, req),
            Body::NotifyNewProducer { consumer, producer } => {
                let subs = self.session_mut(&consumer).and_then(|s| s.on_notify(&producer));
                let mut out = vec![send(from, rid, Body::Ack(AckPayload::Done))];
                out.extend(self.subscribe(&consumer, subs.into_iter().collect(), now));
                out
            }
            body @ (Body::TupleBatch { .. } | Body::EndOfResults { .. } | Body::Error(_) | Body::Ack(_)) => {
                if !matches!(from, Peer::Out(_)) {
                    return vec![];
                }
                self.on_reply(now, rid, body)
            }
        }
    }

    fn on_reply(&mut self, now: i64, rid: u64, body: Body) -> Vec<Output> {
        let Some(p) = self.pending.get(&rid).cloned() else { return vec![] };
        if body.is_terminal() {
            self.pending.remove(&rid);
        }
        match p.kind {
            PendingKind::Lease(id) => self.on_lease_reply(now, &id, rid, p.sent_at, body),
            PendingKind::Stream { consumer, producer } => match body {
                Body::TupleBatch { rows } => self.on_stream_rows(&consumer, &producer, rows, now),
                _ => {
                    if let Some(s) = self.session_mut(&consumer) {
                        s.on_disconnect(&producer);
                    }
                    vec![]
                }
            },
            PendingKind::Lookup(c) => self.on_lookup(&c, body, now),
            PendingKind::Fetch(c) => self.on_fetch(&c, rid, body, now),
            PendingKind::Ignore => vec![],
        }
    }

    pub fn on_timer(&mut self, now: i64, t: Timer) -> Vec<Output> {
        match t {
            Timer::Heartbeat(id) => {
                let Some(interval) = self.leases.get(&id).map(|l| l.interval_ms) else { return vec![] };
                let mut out = self.send_lease(&id, now);
                out.push(timer(now + schedule(interval), Timer::Heartbeat(id)));
                out
            }
            Timer::HeartbeatRetry(id, rid) => match self.leases.get(&id) {
                Some(l) if l.awaiting == Some(rid) => {
                    self.pending.remove(&rid);
                    self.send_lease(&id, now)
                }
                _ => vec![],
            },
            Timer::Publish(p) => self.publish(&p, now),
            Timer::Poll(c) => self.poll(&c, now),
            Timer::Sync => {
                let Some(part) = self.registry.as_ref() else { return vec![] };
                let snap = part.registry.snapshot();
                let peers = part.peers.clone();
                let next = now + part.sync_ms as i64;
                let mut out: Vec<Output> = peers
                    .iter()
                    .map(|peer| self.request(peer, PendingKind::Ignore, Body::RegistrySync(snap.clone()), now))
                    .collect();
                out.push(timer(next, Timer::Sync));
                out
            }
            Timer::Sweep => {
                let Some(part) = self.registry.as_mut() else { return vec![] };
                let reg = part.registry.id().to_string();
                let mut out: Vec<Output> = part
                    .registry
                    .expire_sweep(now)
                    .into_iter()
                    .map(|c| Output::Event(Event::Expired { registry: reg.clone(), component: c }))
                    .collect();
                out.push(timer(now + part.sweep_ms as i64, Timer::Sweep));
                out
            }
            Timer::Cleanup => self.cleanup(now),
            Timer::Monitor => {
                let Some(period) = self.monitor_ms else { return vec![] };
                let mut out: Vec<Output> = self.metric(&self.id.clone(), Metric::Available, 1.0, now).into_iter().collect();
                if let Some(a) = &self.archiver {
                    let lag = a.archiver.lag(now);
                    let id = a.archiver.component_id().to_string();
                    out.extend(self.metric(&id, Metric::ArchiverLag, lag.pending as f64, now));
                }
                out.push(timer(now + period as i64, Timer::Monitor));
                out.extend(self.drain(now));
                out
            }
        }
    }

    /// A connection closed or could not be opened.
    pub fn peer_down(&mut self, now: i64, peer: Peer) -> Vec<Output> {
        match peer {
            Peer::In(_) => {
                let gone: Vec<(String, u64)> =
                    self.subscribers.iter().filter(|(_, (p, _))| *p == peer).map(|(k, _)| k.clone()).collect();
                for (producer, sub) in gone {
                    self.subscribers.remove(&(producer.clone(), sub));
                    if let Ok(p) = self.producers.get_mut(&producer) {
                        p.unsubscribe(sub);
                    }
                }
                vec![]
            }
            Peer::Out(addr) => {
                let mut failed: Vec<(u64, Pending)> =
                    self.pending.iter().filter(|(_, p)| p.to == addr).map(|(k, p)| (*k, p.clone())).collect();
                failed.sort_by_key(|(k, _)| *k);
                let mut out = Vec::new();
                for (rid, p) in failed {
                    self.pending.remove(&rid);
                    match p.kind {
                        PendingKind::Stream { consumer, producer } => {
                            if let Some(s) = self.session_mut(&consumer) {
                                s.on_disconnect(&producer);
                            }
                        }
                        PendingKind::Fetch(c) => {
                            out.extend(self.on_fetch(&c, rid, Body::error(ErrorKind::Internal, "connection lost"), now))
                        }
                        PendingKind::Lookup(c) => {
                            out.extend(self.on_lookup(&c, Body::error(ErrorKind::Internal, "registry unreachable"), now))
                        }
                        PendingKind::Lease(_) | PendingKind::Ignore => {}
                    }
                }
                out
            }
        }
    }
}
