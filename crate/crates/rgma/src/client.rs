//! Request/response client for any component.

use std::time::Duration;

use rgma_core::model::Tuple;
use rgma_core::registry::{ConsumerEntry, ProducerEntry, QueryClass};
use rgma_core::sql::{Catalog, TableDefinition};
use rgma_core::transport::{AckPayload, Body, ErrorBody, Message, ResultRow, StartQuery};
use tokio::net::TcpStream;

use crate::net::{read_message, write_message, NetError};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("cannot connect to {addr}: {message}")]
    Connect { addr: String, message: String },
    #[error("connection to {0} lost")]
    Closed(String),
    #[error("no reply from {0} in time")]
    Timeout(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("rejected ({:?}): {}", .0.kind, .0.message)]
    Rejected(ErrorBody),
    #[error("unexpected reply: {0}")]
    Unexpected(String),
}

impl ClientError {
    /// Whether the failure is about reaching the component at all.
    pub fn is_connection(&self) -> bool {
        matches!(self, ClientError::Connect { .. } | ClientError::Closed(_) | ClientError::Timeout(_) | ClientError::Net(_))
    }
}

/// One connection; requests are sent one at a time.
pub struct Client {
    addr: String,
    stream: TcpStream,
    next: u64,
    timeout: Duration,
}

impl Client {
    pub async fn connect(addr: &str, timeout: Duration) -> Result<Client, ClientError> {
        let connect_err = |message: String| ClientError::Connect { addr: addr.to_string(), message };
        let stream = tokio::time::timeout(timeout, TcpStream::connect(addr))
            .await
            .map_err(|_| connect_err("timed out".into()))?
            .map_err(|e| connect_err(e.to_string()))?;
        let _ = stream.set_nodelay(true);
        Ok(Client { addr: addr.to_string(), stream, next: 1, timeout })
    }

    pub fn address(&self) -> &str {
        &self.addr
    }

    async fn recv(&mut self) -> Result<Message, ClientError> {
        match tokio::time::timeout(self.timeout, read_message(&mut self.stream)).await {
            Err(_) => Err(ClientError::Timeout(self.addr.clone())),
            Ok(Ok(Some(m))) => Ok(m),
            Ok(Ok(None)) => Err(ClientError::Closed(self.addr.clone())),
            Ok(Err(e)) => Err(e.into()),
        }
    }

    async fn send(&mut self, body: Body) -> Result<u64, ClientError> {
        let id = self.next;
        self.next += 1;
        write_message(&mut self.stream, &Message::new(id, body)).await?;
        Ok(id)
    }

    /// Sends a request and waits for its Ack.
    pub async fn request(&mut self, body: Body) -> Result<AckPayload, ClientError> {
        let id = self.send(body).await?;
        loop {
            let m = self.recv().await?;
            if m.request_id != id {
                continue;
            }
            return match m.body {
                Body::Ack(p) => Ok(p),
                Body::Error(e) => Err(ClientError::Rejected(e)),
                other => Err(ClientError::Unexpected(other.kind().into())),
            };
        }
    }

    pub async fn list_tables(&mut self) -> Result<Vec<TableDefinition>, ClientError> {
        match self.request(Body::ListTables).await? {
            AckPayload::Tables(t) => Ok(t),
            other => Err(ClientError::Unexpected(format!("{other:?}"))),
        }
    }

    pub async fn catalog(&mut self) -> Result<Catalog, ClientError> {
        let mut c = Catalog::new();
        for t in self.list_tables().await? {
            // the registry only holds valid, distinct definitions
            let _ = c.declare(t);
        }
        Ok(c)
    }

    pub async fn declare_table(&mut self, table: TableDefinition) -> Result<(), ClientError> {
        self.request(Body::DeclareTable { table }).await.map(|_| ())
    }

    pub async fn lookup(&mut self, query: &str, class: QueryClass) -> Result<Vec<ProducerEntry>, ClientError> {
        match self.request(Body::Lookup { query: query.into(), query_class: class }).await? {
            AckPayload::Producers(p) => Ok(p),
            other => Err(ClientError::Unexpected(format!("{other:?}"))),
        }
    }

    pub async fn status(&mut self) -> Result<(Vec<ProducerEntry>, Vec<ConsumerEntry>), ClientError> {
        match self.request(Body::Status).await? {
            AckPayload::Status { producers, consumers } => Ok((producers, consumers)),
            other => Err(ClientError::Unexpected(format!("{other:?}"))),
        }
    }

    /// Inserts into a producer; returns the sequence number of the last
    /// tuple once the producer has accepted (and, if durable, stored) them.
    pub async fn insert(&mut self, producer: &str, tuples: Vec<Tuple>) -> Result<u64, ClientError> {
        match self.request(Body::Insert { producer: producer.into(), tuples }).await? {
            AckPayload::Inserted { last_seq, .. } => Ok(last_seq),
            other => Err(ClientError::Unexpected(format!("{other:?}"))),
        }
    }

    /// Runs a one-shot query directly against a producer endpoint.
    pub async fn query_producer(&mut self, req: StartQuery) -> Result<Vec<ResultRow>, ClientError> {
        let id = self.send(Body::StartQuery(req)).await?;
        let mut rows = Vec::new();
        loop {
            let m = self.recv().await?;
            if m.request_id != id {
                continue;
            }
            match m.body {
                Body::TupleBatch { rows: r } => rows.extend(r),
                Body::EndOfResults { .. } => return Ok(rows),
                Body::Error(e) => return Err(ClientError::Rejected(e)),
                other => return Err(ClientError::Unexpected(other.kind().into())),
            }
        }
    }
}

/// Connects, runs one request and disconnects.
pub async fn fetch_catalog(registry: &str, timeout: Duration) -> Result<Catalog, ClientError> {
    Client::connect(registry, timeout).await?.catalog().await
}
