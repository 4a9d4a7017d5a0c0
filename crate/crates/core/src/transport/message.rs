use serde::{Deserialize, Serialize};

use crate::model::Tuple;
use crate::registry::{ConsumerEntry, ProducerEntry, ProducerType, QueryClass, RegistrySnapshot};
use crate::sql::{Condition, TableDefinition, ViewPredicate};

/// Where a component listens. `component_id` is unique per live component.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint {
    pub host: String,
    pub port: u16,
    pub component_id: String,
}

impl Endpoint {
    pub fn new(host: &str, port: u16, component_id: &str) -> Self {
        Endpoint { host: host.to_string(), port, component_id: component_id.to_string() }
    }

    pub fn address(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub request_id: u64,
    #[serde(flatten)]
    pub body: Body,
}

impl Message {
    pub fn new(request_id: u64, body: Body) -> Self {
        Message { request_id, body }
    }

    pub fn kind(&self) -> &'static str {
        self.body.kind()
    }
}

/// Position in a producer's stream: the producer's epoch (changes when a
/// non-durable producer restarts) and the last sequence number seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cursor {
    pub epoch: u64,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProducerRegistration {
    pub component_id: String,
    pub endpoint: Endpoint,
    pub producer_type: ProducerType,
    pub table: String,
    pub view: ViewPredicate,
    pub interval_ms: u64,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumerRegistration {
    pub component_id: String,
    pub endpoint: Endpoint,
    pub query: String,
    pub query_class: QueryClass,
    pub interval_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartQuery {
    pub query: String,
    pub query_class: QueryClass,
    /// Producer instances at the receiving endpoint that should answer.
    pub producers: Vec<String>,
    /// Condition already simplified under the producer's view.
    pub residual: Option<Condition>,
    /// Continuous only: skip everything up to and including this position.
    pub resume_after: Option<Cursor>,
}

/// One result row. Continuous results carry a single tuple with its stream
/// position; latest/history rows carry one tuple per table of the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub producer: String,
    pub epoch: u64,
    pub seq: u64,
    pub backlog: bool,
    pub tuples: Vec<Tuple>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProducerFailure {
    pub producer: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorKind {
    Syntax,
    Schema,
    Type,
    Unsupported,
    UnknownComponent,
    ViewViolation,
    NotInsertable,
    Storage,
    UnsupportedQueryClass,
    UnsupportedProducerType,
    SinkMismatch,
    SourceUnsupported,
    Protocol,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: ErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "payload", content = "data")]
pub enum AckPayload {
    Done,
    /// Registration accepted; the deadline by which the next heartbeat is due.
    Registered { deadline: i64 },
    /// Heartbeat accepted. Consumers also get the producers currently
    /// matching their query so they can re-plan.
    Refreshed { deadline: i64, producers: Vec<ProducerEntry> },
    Tables(Vec<TableDefinition>),
    Producers(Vec<ProducerEntry>),
    Status { producers: Vec<ProducerEntry>, consumers: Vec<ConsumerEntry> },
    Inserted { count: u64, last_seq: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body")]
pub enum Body {
    DeclareTable { table: TableDefinition },
    RegisterProducer(ProducerRegistration),
    RegisterConsumer(ConsumerRegistration),
    Heartbeat { component_id: String },
    Unregister { component_id: String },
    Insert { producer: String, tuples: Vec<Tuple> },
    StartQuery(StartQuery),
    TupleBatch { rows: Vec<ResultRow> },
    EndOfResults { failures: Vec<ProducerFailure> },
    NotifyNewProducer { consumer: String, producer: ProducerEntry },
    RegistrySync(RegistrySnapshot),
    ListTables,
    Lookup { query: String, query_class: QueryClass },
    Status,
    Error(ErrorBody),
    Ack(AckPayload),
}

pub const KINDS: &[&str] = &[
    "DeclareTable",
    "RegisterProducer",
    "RegisterConsumer",
    "Heartbeat",
    "Unregister",
    "Insert",
    "StartQuery",
    "TupleBatch",
    "EndOfResults",
    "NotifyNewProducer",
    "RegistrySync",
    "ListTables",
    "Lookup",
    "Status",
    "Error",
    "Ack",
];

impl Body {
    pub fn kind(&self) -> &'static str {
        match self {
            Body::DeclareTable { .. } => "DeclareTable",
            Body::RegisterProducer(_) => "RegisterProducer",
            Body::RegisterConsumer(_) => "RegisterConsumer",
            Body::Heartbeat { .. } => "Heartbeat",
            Body::Unregister { .. } => "Unregister",
            Body::Insert { .. } => "Insert",
            Body::StartQuery(_) => "StartQuery",
            Body::TupleBatch { .. } => "TupleBatch",
            Body::EndOfResults { .. } => "EndOfResults",
            Body::NotifyNewProducer { .. } => "NotifyNewProducer",
            Body::RegistrySync(_) => "RegistrySync",
            Body::ListTables => "ListTables",
            Body::Lookup { .. } => "Lookup",
            Body::Status => "Status",
            Body::Error(_) => "Error",
            Body::Ack(_) => "Ack",
        }
    }

    /// Ack, Error and EndOfResults close a request.
    pub fn is_terminal(&self) -> bool {
        matches!(self, Body::Ack(_) | Body::Error(_) | Body::EndOfResults { .. })
    }

    pub fn error(kind: ErrorKind, message: impl Into<String>) -> Body {
        Body::Error(ErrorBody { kind, message: message.into() })
    }
}
