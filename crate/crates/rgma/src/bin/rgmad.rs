//! Runs one component: a registry, a producer, an archiver or an HTTP
//! consumer service. Prints `listening HOST:PORT` (and `http HOST:PORT`
//! for the consumer service) on stdout once ready.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use rgma::client::fetch_catalog;
use rgma::components::{
    parse_schema, start_archiver, start_monitoring, start_producer, start_registry, ArchiveTarget, ArchiverOptions,
    ProducerOptions, RegistryOptions, RegistryStore,
};
use rgma::http::{serve, HttpState};
use rgma::Service;
use rgma_core::harness::demo_schema;
use rgma_core::registry::ProducerType;
use rgma_core::sql::Catalog;

#[derive(Parser)]
#[command(name = "rgmad", about = "Run a registry, producer, archiver or consumer service")]
struct Args {
    /// Address to listen on for the wire protocol.
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: String,
    /// Host to put in endpoints instead of the listening address.
    #[arg(long)]
    advertise: Option<String>,
    /// Component id (defaults depend on the mode).
    #[arg(long)]
    id: Option<String>,
    /// Publish self-monitoring records at this period.
    #[arg(long)]
    monitor_ms: Option<u64>,
    #[command(subcommand)]
    mode: Mode,
}

#[derive(Subcommand)]
enum Mode {
    /// A registry replica.
    Registry {
        /// Other replicas, HOST:PORT, comma separated.
        #[arg(long, value_delimiter = ',')]
        peers: Vec<String>,
        #[arg(long, default_value_t = 1000)]
        sync_ms: u64,
        #[arg(long, default_value_t = 250)]
        sweep_ms: u64,
        /// TOML file with `[[tables]]` entries (`create`, `key`).
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Declare the Service/ServiceStatus demo tables.
        #[arg(long)]
        demo_schema: bool,
        /// Keep registry state here across restarts.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// One producer instance.
    Producer {
        #[arg(long, env = "RGMA_REGISTRY")]
        registry: String,
        #[arg(long = "type")]
        producer_type: ProducerType,
        #[arg(long)]
        table: String,
        /// View predicate, e.g. "WHERE (site = 'RAL')".
        #[arg(long)]
        view: Option<String>,
        /// Backing file (required for resilient producers).
        #[arg(long)]
        storage: Option<PathBuf>,
        #[arg(long, default_value_t = 30_000)]
        interval_ms: u64,
    },
    /// An archiver with one sink.
    Archiver {
        #[arg(long, env = "RGMA_REGISTRY")]
        registry: String,
        #[arg(long)]
        table: String,
        #[arg(long)]
        sink_type: ProducerType,
        /// Sink component id (default: `<id>/sink`).
        #[arg(long)]
        sink: Option<String>,
        /// Only archive rows satisfying this condition.
        #[arg(long = "where")]
        condition: Option<String>,
        #[arg(long)]
        sink_view: Option<String>,
        #[arg(long)]
        storage: Option<PathBuf>,
        #[arg(long, default_value_t = 30_000)]
        interval_ms: u64,
    },
    /// HTTP long-poll consumer service.
    Consumer {
        #[arg(long, env = "RGMA_REGISTRY")]
        registry: String,
        #[arg(long, default_value = "127.0.0.1:0")]
        http: String,
        #[arg(long, default_value_t = 30_000)]
        interval_ms: u64,
    },
}

async fn catalog_with_retry(registry: &str) -> Result<Catalog, String> {
    let deadline = tokio::time::Instant::now() + Duration::from_secs(10);
    loop {
        match fetch_catalog(registry, Duration::from_secs(5)).await {
            Ok(c) => return Ok(c),
            Err(e) if e.is_connection() && tokio::time::Instant::now() < deadline => {
                tokio::time::sleep(Duration::from_millis(200)).await
            }
            Err(e) => return Err(e.to_string()),
        }
    }
}

async fn run(args: Args) -> Result<(), String> {
    let default_id = match &args.mode {
        Mode::Registry { .. } => "registry".to_string(),
        Mode::Producer { producer_type, .. } => format!("{}-{}", producer_type.name(), std::process::id()),
        Mode::Archiver { .. } => format!("archiver-{}", std::process::id()),
        Mode::Consumer { .. } => format!("consumer-{}", std::process::id()),
    };
    let id = args.id.clone().unwrap_or(default_id);
    let service = Service::bind(&id, &args.listen, args.advertise.as_deref()).await.map_err(|e| format!("{}: {e}", args.listen))?;
    let address = service.address();
    let mut owned: Vec<String> = Vec::new();
    let mut http_line = None;
    let monitor_registry = match args.mode {
        Mode::Registry { peers, sync_ms, sweep_ms, schema, demo_schema: demo, data_dir } => {
            let mut opts = RegistryOptions::new(&id);
            opts.peers = peers;
            opts.sync_ms = sync_ms;
            opts.sweep_ms = sweep_ms;
            if demo {
                opts.tables.extend(demo_schema());
            }
            if let Some(path) = schema {
                let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                opts.tables.extend(parse_schema(&text).map_err(|e| e.to_string())?);
            }
            if let Some(dir) = data_dir {
                std::fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
                opts.store = Some(RegistryStore::new(&dir, &id));
            }
            start_registry(&service, opts).map_err(|e| e.to_string())?;
            address.clone()
        }
        Mode::Producer { registry, producer_type, table, view, storage, interval_ms } => {
            let catalog = catalog_with_retry(&registry).await?;
            let mut opts = ProducerOptions::new(&id, producer_type, &table);
            opts.view = view;
            opts.storage = storage;
            opts.interval_ms = interval_ms;
            start_producer(&service, &catalog, &registry, opts).map_err(|e| e.to_string())?;
            owned.push(id.clone());
            registry
        }
        Mode::Archiver { registry, table, sink_type, sink, condition, sink_view, storage, interval_ms } => {
            let catalog = catalog_with_retry(&registry).await?;
            let sink = sink.unwrap_or_else(|| format!("{id}/sink"));
            let opts = ArchiverOptions {
                id: id.clone(),
                targets: vec![ArchiveTarget { table, condition, sink: sink.clone(), sink_type, sink_view, storage }],
                interval_ms,
            };
            let tables: Vec<String> = opts.targets.iter().map(|t| format!("{id}/{}", rgma_core::sql::canonical_ident(&t.table))).collect();
            start_archiver(&service, &catalog, &registry, opts).map_err(|e| e.to_string())?;
            owned.push(sink);
            owned.extend(tables);
            registry
        }
        Mode::Consumer { registry, http, interval_ms } => {
            let listener = tokio::net::TcpListener::bind(&http).await.map_err(|e| format!("{http}: {e}"))?;
            http_line = Some(listener.local_addr().map_err(|e| e.to_string())?);
            let state = HttpState::new(service.clone(), &registry, Duration::from_secs(10), interval_ms);
            tokio::spawn(async move {
                if let Err(e) = serve(listener, state).await {
                    tracing::error!(error = %e, "http service stopped");
                }
            });
            registry
        }
    };
    if let Some(period) = args.monitor_ms {
        start_monitoring(&service, &monitor_registry, period, 30_000).map_err(|e| e.to_string())?;
        owned.push(format!("{id}/monitor"));
    }
    {
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "listening {address}");
        if let Some(h) = http_line {
            let _ = writeln!(out, "http {h}");
        }
        let _ = out.flush();
    }
    shutdown_signal().await;
    service.apply(|node, now| {
        Ok::<_, std::convert::Infallible>(owned.iter().flat_map(|c| node.remove_component(c, now)).collect())
    })
    .expect("infallible");
    // give the unregistrations a moment to leave
    tokio::time::sleep(Duration::from_millis(200)).await;
    service.close();
    Ok(())
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()).expect("signal handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}

fn main() -> ExitCode {
    let args = Args::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("RGMA_LOG").unwrap_or_else(|_| "warn".into()))
        .init();
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    match rt.block_on(run(args)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rgmad: {e}");
            ExitCode::FAILURE
        }
    }
}
