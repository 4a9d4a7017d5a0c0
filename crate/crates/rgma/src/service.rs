//! Runs a [`Node`] over TCP with tokio.
//!
//! Every node reaction happens under one mutex and its outputs are queued
//! before the lock is released, so messages leave each connection in the
//! order the node produced them. Writers drain bounded per-connection
//! queues; a peer that lets its queue fill up is disconnected.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rgma_core::node::{Event, Node, Output, Peer, ResultBuffer};
use rgma_core::transport::Message;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc, Notify};
use tokio::task::AbortHandle;

use crate::net::{read_message, write_message};

/// Messages queued per connection before the peer is considered stuck.
pub const QUEUE_LIMIT: usize = 16_384;
const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

/// Wall-clock milliseconds since the Unix epoch.
pub fn now_ms() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or(0)
}

struct Link {
    conn: u64,
    tx: mpsc::Sender<Message>,
    tasks: Vec<AbortHandle>,
}

impl Link {
    fn abort(&self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}

#[derive(Default)]
struct Links {
    inbound: HashMap<u64, Link>,
    outbound: HashMap<String, Link>,
}

struct Shared {
    node: Mutex<Node>,
    links: Mutex<Links>,
    changed: Notify,
    events: broadcast::Sender<Event>,
    closed: AtomicBool,
    next_conn: AtomicU64,
    accept: Mutex<Option<AbortHandle>>,
}

/// A node bound to a listening socket.
#[derive(Clone)]
pub struct Service {
    shared: Arc<Shared>,
    address: SocketAddr,
}

impl Service {
    /// Binds `listen` and creates the node. `advertise` overrides the host
    /// put into endpoints (needed when listening on a wildcard address).
    pub async fn bind(id: &str, listen: &str, advertise: Option<&str>) -> std::io::Result<Service> {
        let listener = TcpListener::bind(listen).await?;
        let address = listener.local_addr()?;
        let host = match advertise {
            Some(h) => h.to_string(),
            None if address.ip().is_unspecified() => "127.0.0.1".to_string(),
            None => address.ip().to_string(),
        };
        let (events, _) = broadcast::channel(4096);
        let shared = Arc::new(Shared {
            node: Mutex::new(Node::new(id, &host, address.port())),
            links: Mutex::new(Links::default()),
            changed: Notify::new(),
            events,
            closed: AtomicBool::new(false),
            next_conn: AtomicU64::new(1),
            accept: Mutex::new(None),
        });
        let s = shared.clone();
        let handle = tokio::spawn(async move { accept_loop(s, listener).await });
        *shared.accept.lock().expect("accept lock") = Some(handle.abort_handle());
        Ok(Service { shared, address })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.address
    }

    /// `host:port` as other components should dial it.
    pub fn address(&self) -> String {
        self.node().address()
    }

    fn node(&self) -> MutexGuard<'_, Node> {
        self.shared.node.lock().expect("node lock")
    }

    /// Runs `f` on the node and carries out what it returns.
    pub fn apply<E>(&self, f: impl FnOnce(&mut Node, i64) -> Result<Vec<Output>, E>) -> Result<(), E> {
        let mut node = self.node();
        let out = f(&mut node, now_ms())?;
        dispatch(&self.shared, &mut node, out);
        Ok(())
    }

    /// Read-only access to the node.
    pub fn inspect<T>(&self, f: impl FnOnce(&Node) -> T) -> T {
        f(&self.node())
    }

    pub fn events(&self) -> broadcast::Receiver<Event> {
        self.shared.events.subscribe()
    }

    pub fn take_results(&self, consumer: &str) -> Option<ResultBuffer> {
        self.node().take_results(consumer)
    }

    /// Waits up to `wait` for a consumer to have rows, notices or be done.
    /// Returns `None` for an unknown consumer.
    pub async fn next_results(&self, consumer: &str, wait: Duration) -> Option<ResultBuffer> {
        let deadline = tokio::time::Instant::now() + wait;
        let mut acc = ResultBuffer::default();
        loop {
            let notified = self.shared.changed.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            let got = self.take_results(consumer)?;
            acc.rows.extend(got.rows);
            acc.notices.extend(got.notices);
            acc.dropped += got.dropped;
            acc.done = got.done;
            if !acc.rows.is_empty() || !acc.notices.is_empty() || acc.done {
                return Some(acc);
            }
            if tokio::time::timeout_at(deadline, notified).await.is_err() {
                return Some(acc);
            }
        }
    }

    /// Stops accepting, drops every connection and ignores pending timers.
    /// Nothing is unregistered: to the rest of the system this looks like
    /// a crash.
    pub fn close(&self) {
        self.shared.closed.store(true, Ordering::SeqCst);
        if let Some(h) = self.shared.accept.lock().expect("accept lock").take() {
            h.abort();
        }
        let mut links = self.shared.links.lock().expect("links lock");
        for l in links.inbound.values().chain(links.outbound.values()) {
            l.abort();
        }
        links.inbound.clear();
        links.outbound.clear();
    }

    pub fn is_closed(&self) -> bool {
        self.shared.closed.load(Ordering::SeqCst)
    }
}

fn dispatch(shared: &Arc<Shared>, node: &mut Node, outputs: Vec<Output>) {
    if shared.closed.load(Ordering::SeqCst) {
        return;
    }
    let mut work: std::collections::VecDeque<Output> = outputs.into();
    while let Some(o) = work.pop_front() {
        match o {
            Output::Send { to, msg } => {
                if let Err(peer) = enqueue(shared, to, msg) {
                    work.extend(node.peer_down(now_ms(), peer));
                }
            }
            Output::Timer { at, timer } => {
                let s = shared.clone();
                let delay = (at - now_ms()).max(0) as u64;
                tokio::spawn(async move {
                    tokio::time::sleep(Duration::from_millis(delay)).await;
                    if s.closed.load(Ordering::SeqCst) {
                        return;
                    }
                    let mut node = s.node.lock().expect("node lock");
                    let out = node.on_timer(now_ms(), timer);
                    dispatch(&s, &mut node, out);
                });
            }
            Output::Event(e) => {
                if let Event::Rejected { component, message } = &e {
                    tracing::warn!(%component, %message, "rejected");
                }
                let _ = shared.events.send(e);
            }
        }
    }
    shared.changed.notify_waiters();
}

/// Queues a message. On failure the peer has been dropped and is returned.
fn enqueue(shared: &Arc<Shared>, to: Peer, msg: Message) -> Result<(), Peer> {
    let mut links = shared.links.lock().expect("links lock");
    match &to {
        Peer::In(conn) => {
            let Some(link) = links.inbound.get(conn) else { return Ok(()) };
            if link.tx.try_send(msg).is_err() {
                tracing::warn!(conn, "inbound peer not reading; dropping connection");
                if let Some(l) = links.inbound.remove(conn) {
                    l.abort();
                }
                return Err(to);
            }
            Ok(())
        }
        Peer::Out(addr) => {
            if !links.outbound.contains_key(addr) {
                let link = connect(shared, addr.clone());
                links.outbound.insert(addr.clone(), link);
            }
            let link = links.outbound.get(addr).expect("inserted");
            if link.tx.try_send(msg).is_err() {
                tracing::warn!(%addr, "outbound queue full; dropping connection");
                if let Some(l) = links.outbound.remove(addr) {
                    l.abort();
                }
                return Err(to);
            }
            Ok(())
        }
    }
}

fn connect(shared: &Arc<Shared>, addr: String) -> Link {
    let conn = shared.next_conn.fetch_add(1, Ordering::SeqCst);
    let (tx, rx) = mpsc::channel(QUEUE_LIMIT);
    let s = shared.clone();
    let task = tokio::spawn(async move {
        let stream = tokio::time::timeout(CONNECT_TIMEOUT, TcpStream::connect(&addr)).await;
        match stream {
            Ok(Ok(stream)) => {
                let _ = stream.set_nodelay(true);
                let (mut r, w) = stream.into_split();
                let writer = tokio::spawn(write_loop(w, rx));
                let peer = Peer::Out(addr.clone());
                loop {
                    match read_message(&mut r).await {
                        Ok(Some(msg)) => on_message(&s, peer.clone(), msg),
                        Ok(None) => break,
                        Err(e) => {
                            tracing::debug!(%addr, error = %e, "outbound connection failed");
                            break;
                        }
                    }
                }
                writer.abort();
            }
            Ok(Err(e)) => tracing::debug!(%addr, error = %e, "connect failed"),
            Err(_) => tracing::debug!(%addr, "connect timed out"),
        }
        let current = {
            let mut links = s.links.lock().expect("links lock");
            match links.outbound.get(&addr) {
                Some(l) if l.conn == conn => links.outbound.remove(&addr).is_some(),
                _ => false,
            }
        };
        if current && !s.closed.load(Ordering::SeqCst) {
            let mut node = s.node.lock().expect("node lock");
            let out = node.peer_down(now_ms(), Peer::Out(addr));
            dispatch(&s, &mut node, out);
        }
    });
    Link { conn, tx, tasks: vec![task.abort_handle()] }
}

async fn write_loop(mut w: tokio::net::tcp::OwnedWriteHalf, mut rx: mpsc::Receiver<Message>) {
    while let Some(msg) = rx.recv().await {
        if let Err(e) = write_message(&mut w, &msg).await {
            tracing::debug!(error = %e, "write failed");
            break;
        }
    }
}

fn on_message(shared: &Arc<Shared>, from: Peer, msg: Message) {
    if shared.closed.load(Ordering::SeqCst) {
        return;
    }
    let mut node = shared.node.lock().expect("node lock");
    let out = node.handle(now_ms(), from, msg);
    dispatch(shared, &mut node, out);
}

async fn accept_loop(shared: Arc<Shared>, listener: TcpListener) {
    loop {
        let (stream, remote) = match listener.accept().await {
            Ok(x) => x,
            Err(e) => {
                tracing::warn!(error = %e, "accept failed");
                tokio::time::sleep(Duration::from_millis(50)).await;
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        let conn = shared.next_conn.fetch_add(1, Ordering::SeqCst);
        let (tx, rx) = mpsc::channel(QUEUE_LIMIT);
        let (mut r, w) = stream.into_split();
        let writer = tokio::spawn(write_loop(w, rx));
        let s = shared.clone();
        // hold the links lock so the reader cannot finish before the link exists
        let mut links = shared.links.lock().expect("links lock");
        let reader = tokio::spawn(async move {
            loop {
                match read_message(&mut r).await {
                    Ok(Some(msg)) => on_message(&s, Peer::In(conn), msg),
                    Ok(None) => break,
                    Err(e) => {
                        tracing::debug!(%remote, error = %e, "dropping connection");
                        break;
                    }
                }
            }
            let link = s.links.lock().expect("links lock").inbound.remove(&conn);
            if let Some(l) = link {
                l.abort();
                if !s.closed.load(Ordering::SeqCst) {
                    let mut node = s.node.lock().expect("node lock");
                    let out = node.peer_down(now_ms(), Peer::In(conn));
                    dispatch(&s, &mut node, out);
                }
            }
        });
        links.inbound.insert(conn, Link { conn, tx, tasks: vec![reader.abort_handle(), writer.abort_handle()] });
    }
}
