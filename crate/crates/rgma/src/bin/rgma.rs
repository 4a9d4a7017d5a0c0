//! Command-line tool: inspect the schema and registry, run one producer of
//! each type and one archiver per session, insert and query.
//!
//! Exit codes: 0 ok, 1 other failure, 2 usage, 3 connection, 4 rejected.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Command, ExitCode, Stdio};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use rgma::client::{Client, ClientError};
use rgma::display::{json_row, tsv_header, tsv_row, Columns};
use rgma::session::{SessionDir, SessionEntry};
use rgma::Service;
use rgma_core::node::ConsumerSpec;
use rgma_core::registry::{ProducerType, QueryClass};
use rgma_core::sql::{parse_create_table, parse_select, parse_statement, Catalog, Statement};
use serde_json::json;

#[derive(Parser)]
#[command(name = "rgma", about = "Query and publish monitoring data")]
struct Args {
    /// Registry HOST:PORT.
    #[arg(long, env = "RGMA_REGISTRY", global = true)]
    registry: Option<String>,
    /// Milliseconds to wait for replies; also bounds continuous queries.
    #[arg(long, global = true)]
    timeout: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Tsv, global = true)]
    format: Format,
    /// Host producers should use to reach this tool's consumer.
    #[arg(long, env = "RGMA_ADVERTISE", global = true)]
    advertise: Option<String>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Tsv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// List tables.
    Tables,
    /// Show a table's columns.
    Describe { table: String },
    /// Declare a table: `create-table "CREATE TABLE ..." --key a,b`.
    CreateTable {
        sql: String,
        #[arg(long, value_delimiter = ',', required = true)]
        key: Vec<String>,
    },
    /// Start this session's producer of a type.
    CreateProducer {
        #[arg(long = "type")]
        producer_type: ProducerType,
        #[arg(long)]
        table: String,
        /// View predicate, e.g. "WHERE (site = 'RAL')".
        #[arg(long)]
        view: Option<String>,
        #[arg(long, default_value_t = 30_000)]
        interval_ms: u64,
    },
    /// Stop this session's producer of a type (or `archiver`).
    Close {
        kind: String,
    },
    /// Publish through this session's producer for the table.
    Insert {
        sql: String,
        /// Which session producer to use when several serve the table.
        #[arg(long = "type")]
        producer_type: Option<ProducerType>,
    },
    /// Run a query; exactly one of -c, -l, -h.
    #[command(disable_help_flag = true)]
    Query {
        #[arg(long, action = clap::ArgAction::Help)]
        help: Option<bool>,
        #[arg(short = 'c', long, group = "class")]
        continuous: bool,
        #[arg(short = 'l', long, group = "class")]
        latest: bool,
        #[arg(short = 'h', long, group = "class")]
        history: bool,
        sql: String,
    },
    /// Start this session's archiver.
    Archive {
        #[arg(long)]
        table: String,
        #[arg(long)]
        sink_type: ProducerType,
        #[arg(long = "where")]
        condition: Option<String>,
        #[arg(long, default_value_t = 30_000)]
        interval_ms: u64,
    },
    /// Live registry entries and this session's components.
    Status,
}

enum Failure {
    Usage(String),
    Connection(String),
    Rejected(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Connection(_) => 3,
            Failure::Rejected(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Connection(m) | Failure::Rejected(m) | Failure::Other(m) => m,
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        if e.is_connection() {
            Failure::Connection(e.to_string())
        } else {
            Failure::Rejected(e.to_string())
        }
    }
}

struct Ctx {
    registry: Option<String>,
    timeout: Duration,
    explicit_timeout: Option<Duration>,
    format: Format,
    advertise: Option<String>,
    session: SessionDir,
}

impl Ctx {
    fn registry(&self) -> Result<&str, Failure> {
        self.registry.as_deref().ok_or_else(|| Failure::Usage("no registry: pass --registry HOST:PORT or set RGMA_REGISTRY".into()))
    }

    async fn client(&self) -> Result<Client, Failure> {
        Ok(Client::connect(self.registry()?, self.timeout).await?)
    }

    async fn catalog(&self) -> Result<Catalog, Failure> {
        Ok(self.client().await?.catalog().await?)
    }
}

fn out(line: &str) {
    let mut o = std::io::stdout().lock();
    let _ = writeln!(o, "{line}");
}

async fn tables(ctx: &Ctx) -> Result<(), Failure> {
    let cat = ctx.catalog().await?;
    if ctx.format == Format::Tsv {
        out("table");
    }
    for t in cat.tables() {
        match ctx.format {
            Format::Tsv => out(&t.name),
            Format::Json => out(&json!({"table": t.name}).to_string()),
        }
    }
    Ok(())
}

async fn describe(ctx: &Ctx, table: &str) -> Result<(), Failure> {
    let cat = ctx.catalog().await?;
    let t = cat.require(table).map_err(|e| Failure::Rejected(e.to_string()))?;
    if ctx.format == Format::Tsv {
        out("column\ttype\trole");
    }
    for c in &t.columns {
        let role = if t.defining_key.contains(&c.name) {
            "key"
        } else if c.name == t.timestamp_column {
            "timestamp"
        } else {
            "value"
        };
        match ctx.format {
            Format::Tsv => out(&format!("{}\t{}\t{role}", c.name, c.ty.keyword())),
            Format::Json => out(&json!({"column": c.name, "type": c.ty.keyword(), "role": role}).to_string()),
        }
    }
    Ok(())
}

async fn create_table(ctx: &Ctx, sql: &str, key: &[String]) -> Result<(), Failure> {
    let key: Vec<&str> = key.iter().map(String::as_str).collect();
    let def = parse_create_table(sql, &key).map_err(|e| Failure::Rejected(e.to_string()))?;
    ctx.client().await?.declare_table(def).await?;
    Ok(())
}

fn daemon_path() -> PathBuf {
    if let Some(p) = std::env::var_os("RGMA_DAEMON") {
        return PathBuf::from(p);
    }
    let exe = std::env::current_exe().unwrap_or_default();
    exe.with_file_name(format!("rgmad{}", std::env::consts::EXE_SUFFIX))
}

async fn alive(entry: &SessionEntry) -> bool {
    Client::connect(&entry.address, Duration::from_millis(500)).await.is_ok()
}

/// Starts `rgmad` in the background and waits for its listening line.
fn spawn_daemon(ctx: &Ctx, kind: &str, id: &str, mode_args: Vec<String>) -> Result<(String, u32), Failure> {
    std::fs::create_dir_all(ctx.session.dir()).map_err(|e| Failure::Other(e.to_string()))?;
    let log = std::fs::File::create(ctx.session.log_path(kind)).map_err(|e| Failure::Other(e.to_string()))?;
    let mut cmd = Command::new(daemon_path());
    cmd.arg("--id").arg(id);
    if let Some(h) = &ctx.advertise {
        cmd.arg("--advertise").arg(h).arg("--listen").arg("0.0.0.0:0");
    }
    cmd.args(mode_args).stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::from(log));
    let mut child = cmd.spawn().map_err(|e| Failure::Other(format!("cannot start {}: {e}", daemon_path().display())))?;
    let stdout = child.stdout.take().expect("piped");
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let mut line = String::new();
        let _ = BufReader::new(stdout).read_line(&mut line);
        let _ = tx.send(line);
    });
    let line = rx.recv_timeout(ctx.timeout.max(Duration::from_secs(5))).unwrap_or_default();
    match line.trim().strip_prefix("listening ") {
        Some(addr) => Ok((addr.to_string(), child.id())),
        None => {
            let _ = child.kill();
            let _ = child.wait();
            let log = std::fs::read_to_string(ctx.session.log_path(kind)).unwrap_or_default();
            Err(Failure::Rejected(format!("{kind} did not start: {}", log.trim())))
        }
    }
}

async fn create_producer(ctx: &Ctx, ty: ProducerType, table: &str, view: Option<String>, interval_ms: u64) -> Result<(), Failure> {
    let kind = ty.name();
    if ty == ProducerType::Canonical {
        return Err(Failure::Usage("canonical producers are embedded through the client library".into()));
    }
    if let Some(e) = ctx.session.get(kind) {
        if alive(&e).await {
            return Err(Failure::Rejected(format!("this session already has a {kind} producer ({})", e.component_id)));
        }
    }
    let registry = ctx.registry()?.to_string();
    let cat = ctx.catalog().await?;
    let def = cat.require(table).map_err(|e| Failure::Rejected(e.to_string()))?;
    if let Some(v) = &view {
        rgma_core::sql::parse_view(v, def).map_err(|e| Failure::Rejected(e.to_string()))?;
    }
    let id = format!("{kind}-{}-{}", std::process::id(), rgma::now_ms());
    let mut args = vec!["producer".into(), "--registry".into(), registry, "--type".into(), kind.into()];
    args.extend(["--table".into(), def.name.clone(), "--interval-ms".into(), interval_ms.to_string()]);
    if let Some(v) = view {
        args.extend(["--view".into(), v]);
    }
    if matches!(ty, ProducerType::ResilientStream | ProducerType::DataBase | ProducerType::Latest) {
        args.extend(["--storage".into(), ctx.session.storage_path(&id).display().to_string()]);
    }
    let (address, pid) = spawn_daemon(ctx, kind, &id, args)?;
    let entry = SessionEntry { kind: kind.into(), component_id: id, table: def.name.clone(), address, pid };
    ctx.session.put(&entry).map_err(|e| Failure::Other(e.to_string()))?;
    print_entries(ctx, &[entry]);
    Ok(())
}

fn print_entries(ctx: &Ctx, entries: &[SessionEntry]) {
    if ctx.format == Format::Tsv {
        out("kind\tcomponent\ttable\taddress");
    }
    for e in entries {
        match ctx.format {
            Format::Tsv => out(&format!("{}\t{}\t{}\t{}", e.kind, e.component_id, e.table, e.address)),
            Format::Json => out(&serde_json::to_string(e).expect("entry encodes")),
        }
    }
}

fn close(ctx: &Ctx, kind: &str) -> Result<(), Failure> {
    let kind = match kind.parse::<ProducerType>() {
        Ok(t) => t.name().to_string(),
        Err(_) if kind == "archiver" => kind.to_string(),
        Err(e) => return Err(Failure::Usage(e)),
    };
    let Some(e) = ctx.session.get(&kind) else {
        return Err(Failure::Rejected(format!("this session has no {kind}")));
    };
    // SIGTERM lets the daemon unregister before exiting
    let _ = Command::new("kill").arg(e.pid.to_string()).stderr(Stdio::null()).status();
    ctx.session.remove(&kind).map_err(|e| Failure::Other(e.to_string()))
}

async fn insert(ctx: &Ctx, sql: &str, ty: Option<ProducerType>) -> Result<(), Failure> {
    let cat = ctx.catalog().await?;
    let tuple = match parse_statement(sql, &cat, &[]) {
        Ok(Statement::Insert(t)) => t,
        Ok(_) => return Err(Failure::Usage("insert takes an INSERT statement".into())),
        Err(e) => return Err(Failure::Rejected(e.to_string())),
    };
    let candidates: Vec<SessionEntry> = ctx
        .session
        .entries()
        .into_iter()
        .filter(|e| e.kind != "archiver" && e.table == tuple.table())
        .filter(|e| ty.is_none_or(|t| t.name() == e.kind))
        .collect();
    let entry = match candidates.as_slice() {
        [one] => one.clone(),
        [] => {
            return Err(Failure::Usage(format!(
                "no producer for table '{}' in this session; run create-producer first",
                tuple.table()
            )))
        }
        _ => return Err(Failure::Usage("several session producers serve this table; pass --type".into())),
    };
    let mut c = Client::connect(&entry.address, ctx.timeout).await?;
    let seq = c.insert(&entry.component_id, vec![tuple]).await?;
    if ctx.format == Format::Json {
        out(&json!({"producer": entry.component_id, "seq": seq}).to_string());
    }
    Ok(())
}

async fn archive(ctx: &Ctx, table: &str, sink_type: ProducerType, condition: Option<String>, interval_ms: u64) -> Result<(), Failure> {
    if let Some(e) = ctx.session.get("archiver") {
        if alive(&e).await {
            return Err(Failure::Rejected(format!("this session already has an archiver ({})", e.component_id)));
        }
    }
    let registry = ctx.registry()?.to_string();
    let cat = ctx.catalog().await?;
    let def = cat.require(table).map_err(|e| Failure::Rejected(e.to_string()))?;
    if let Some(c) = &condition {
        rgma_core::sql::parse_condition(c, def).map_err(|e| Failure::Rejected(e.to_string()))?;
    }
    let id = format!("archiver-{}-{}", std::process::id(), rgma::now_ms());
    let mut args = vec!["archiver".into(), "--registry".into(), registry, "--table".into(), def.name.clone()];
    args.extend(["--sink-type".into(), sink_type.name().into(), "--interval-ms".into(), interval_ms.to_string()]);
    args.extend(["--storage".into(), ctx.session.storage_path(&id).display().to_string()]);
    if let Some(c) = condition {
        args.extend(["--where".into(), c]);
    }
    let (address, pid) = spawn_daemon(ctx, "archiver", &id, args)?;
    let entry = SessionEntry { kind: "archiver".into(), component_id: id, table: def.name.clone(), address, pid };
    ctx.session.put(&entry).map_err(|e| Failure::Other(e.to_string()))?;
    print_entries(ctx, &[entry]);
    Ok(())
}

async fn status(ctx: &Ctx) -> Result<(), Failure> {
    let (producers, consumers) = ctx.client().await?.status().await?;
    let now = rgma::now_ms();
    if ctx.format == Format::Tsv {
        out("role\tcomponent\ttype\ttable\tpredicate\tendpoint\texpires_in_ms");
    }
    for p in &producers {
        let left = p.termination_deadline - now;
        match ctx.format {
            Format::Tsv => out(&format!(
                "producer\t{}\t{}\t{}\t{}\t{}\t{left}",
                p.component_id,
                p.producer_type.name(),
                p.table,
                p.view,
                p.endpoint.address()
            )),
            Format::Json => out(&json!({
                "role": "producer", "component": p.component_id, "type": p.producer_type.name(), "table": p.table,
                "predicate": p.view.to_string(), "endpoint": p.endpoint.address(), "expires_in_ms": left,
            })
            .to_string()),
        }
    }
    for c in &consumers {
        let left = c.termination_deadline - now;
        let query = c.query_text.replace(['\t', '\n'], " ");
        match ctx.format {
            Format::Tsv => out(&format!(
                "consumer\t{}\t{}\t\t{query}\t{}\t{left}",
                c.component_id,
                c.query_class.name(),
                c.endpoint.address()
            )),
            Format::Json => out(&json!({
                "role": "consumer", "component": c.component_id, "type": c.query_class.name(),
                "predicate": c.query_text, "endpoint": c.endpoint.address(), "expires_in_ms": left,
            })
            .to_string()),
        }
    }
    let mine = ctx.session.entries();
    if !mine.is_empty() {
        for e in mine {
            eprintln!("session: {} {} on {} at {}", e.kind, e.component_id, e.table, e.address);
        }
    }
    Ok(())
}

async fn query(ctx: &Ctx, class: QueryClass, sql: &str) -> Result<(), Failure> {
    let registry = ctx.registry()?.to_string();
    let cat = ctx.catalog().await?;
    let q = parse_select(sql, &cat).map_err(|e| Failure::Rejected(e.to_string()))?;
    let cols = Columns::of(&q, &cat);
    let id = format!("rgma-{}-{}", std::process::id(), rgma::now_ms());
    let listen = if ctx.advertise.is_some() { "0.0.0.0:0" } else { "127.0.0.1:0" };
    let service =
        Service::bind(&id, listen, ctx.advertise.as_deref()).await.map_err(|e| Failure::Other(format!("cannot listen: {e}")))?;
    let spec = ConsumerSpec {
        component_id: id.clone(),
        query: sql.to_string(),
        query_class: class,
        registry,
        interval_ms: 30_000,
        repeat_ms: None,
    };
    service.apply(|node, now| node.add_consumer(spec, &cat, now)).map_err(|e| Failure::Rejected(e.to_string()))?;
    if ctx.format == Format::Tsv {
        out(&tsv_header(&cols));
    }
    let limit = match class {
        QueryClass::Continuous => ctx.explicit_timeout,
        _ => Some(ctx.timeout),
    };
    let deadline = limit.map(|l| tokio::time::Instant::now() + l);
    let interrupt = tokio::signal::ctrl_c();
    tokio::pin!(interrupt);
    let result = loop {
        let wait = match deadline {
            Some(d) => d.saturating_duration_since(tokio::time::Instant::now()).min(Duration::from_millis(500)),
            None => Duration::from_millis(500),
        };
        let buf = tokio::select! {
            b = service.next_results(&id, wait) => b.unwrap_or_default(),
            _ = &mut interrupt => break Ok(()),
        };
        {
            let mut o = std::io::stdout().lock();
            for r in &buf.rows {
                let line = match ctx.format {
                    Format::Tsv => tsv_row(&cols, r),
                    Format::Json => json_row(&cols, r).to_string(),
                };
                let _ = writeln!(o, "{line}");
            }
            let _ = o.flush();
        }
        if buf.dropped > 0 {
            eprintln!("rgma: {} rows dropped (consumer buffer full)", buf.dropped);
        }
        let mut failed = None;
        for n in &buf.notices {
            eprintln!("rgma: notice: {n}");
            if let Some(m) = n.strip_prefix("registry: ") {
                failed = Some(if m.contains("unreachable") { Failure::Connection(m.into()) } else { Failure::Rejected(m.into()) });
            }
        }
        if let Some(f) = failed {
            break Err(f);
        }
        if buf.done {
            break Ok(());
        }
        if deadline.is_some_and(|d| tokio::time::Instant::now() >= d) {
            break match class {
                QueryClass::Continuous => Ok(()),
                _ => Err(Failure::Connection("query timed out".into())),
            };
        }
    };
    service.apply(|node, now| Ok::<_, std::convert::Infallible>(node.remove_component(&id, now))).expect("infallible");
    tokio::time::sleep(Duration::from_millis(50)).await;
    service.close();
    result
}

async fn run(args: Args) -> Result<(), Failure> {
    let ctx = Ctx {
        registry: args.registry,
        timeout: Duration::from_millis(args.timeout.unwrap_or(10_000)),
        explicit_timeout: args.timeout.map(Duration::from_millis),
        format: args.format,
        advertise: args.advertise,
        session: SessionDir::from_env(),
    };
    match args.command {
        Cmd::Tables => tables(&ctx).await,
        Cmd::Describe { table } => describe(&ctx, &table).await,
        Cmd::CreateTable { sql, key } => create_table(&ctx, &sql, &key).await,
        Cmd::CreateProducer { producer_type, table, view, interval_ms } => {
            create_producer(&ctx, producer_type, &table, view, interval_ms).await
        }
        Cmd::Close { kind } => close(&ctx, &kind),
        Cmd::Insert { sql, producer_type } => insert(&ctx, &sql, producer_type).await,
        Cmd::Query { continuous, latest, history, sql, .. } => {
            let class = match (continuous, latest, history) {
                (true, _, _) => QueryClass::Continuous,
                (_, true, _) => QueryClass::Latest,
                (_, _, true) => QueryClass::History,
                _ => return Err(Failure::Usage("query needs one of -c, -l or -h".into())),
            };
            query(&ctx, class, &sql).await
        }
        Cmd::Archive { table, sink_type, condition, interval_ms } => {
            archive(&ctx, &table, sink_type, condition, interval_ms).await
        }
        Cmd::Status => status(&ctx).await,
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("RGMA_LOG").unwrap_or_else(|_| "error".into()))
        .init();
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    match rt.block_on(run(args)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("rgma: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
