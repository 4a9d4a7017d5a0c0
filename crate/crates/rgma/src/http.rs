//! HTTP long-poll front end to a consumer service.
//!
//! - `POST /query` with `{"query": "...", "class": "continuous|latest|history"}`
//!   starts a query and returns its id and output columns.
//! - `GET /query/{id}/next?wait_ms=N` returns whatever rows arrived since
//!   the last call, waiting up to `N` ms (default 1000) for some.
//! - `DELETE /query/{id}` stops it.
//! - `GET /tables` lists the schema.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, Query as UrlQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rgma_core::node::ConsumerSpec;
use rgma_core::registry::QueryClass;
use rgma_core::sql::parse_select;
use rgma_core::transport::ErrorKind;
use serde::Deserialize;
use serde_json::json;

use crate::client::{fetch_catalog, ClientError};
use crate::display::{json_value, Columns};
use crate::service::Service;

const MAX_WAIT_MS: u64 = 30_000;

struct Running {
    consumer: String,
    columns: Columns,
}

pub struct HttpState {
    service: Service,
    registry: String,
    timeout: Duration,
    interval_ms: u64,
    next: AtomicU64,
    queries: Mutex<HashMap<String, Running>>,
}

impl HttpState {
    pub fn new(service: Service, registry: &str, timeout: Duration, interval_ms: u64) -> Arc<HttpState> {
        Arc::new(HttpState {
            service,
            registry: registry.into(),
            timeout,
            interval_ms,
            next: AtomicU64::new(1),
            queries: Mutex::new(HashMap::new()),
        })
    }
}

pub fn router(state: Arc<HttpState>) -> Router {
    Router::new()
        .route("/tables", get(tables))
        .route("/query", post(start))
        .route("/query/{id}/next", get(next))
        .route("/query/{id}", axum::routing::delete(stop))
        .with_state(state)
}

/// Serves until the task is aborted.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<HttpState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

fn error(status: StatusCode, kind: &str, message: impl Into<String>) -> Response {
    (status, Json(json!({"error": {"kind": kind, "message": message.into()}}))).into_response()
}

fn client_error(e: ClientError) -> Response {
    match e {
        ClientError::Rejected(b) => error(StatusCode::BAD_REQUEST, &format!("{:?}", b.kind), b.message),
        other => error(StatusCode::BAD_GATEWAY, "Connection", other.to_string()),
    }
}

async fn tables(State(st): State<Arc<HttpState>>) -> Response {
    match fetch_catalog(&st.registry, st.timeout).await {
        Ok(cat) => {
            let list: Vec<_> = cat
                .tables()
                .map(|t| {
                    json!({
                        "name": t.name,
                        "columns": t.columns.iter().map(|c| json!({"name": c.name, "type": c.ty.keyword()})).collect::<Vec<_>>(),
                        "key": t.defining_key,
                    })
                })
                .collect();
            Json(list).into_response()
        }
        Err(e) => client_error(e),
    }
}

#[derive(Deserialize)]
struct StartBody {
    query: String,
    class: String,
}

async fn start(State(st): State<Arc<HttpState>>, Json(body): Json<StartBody>) -> Response {
    let class: QueryClass = match body.class.parse() {
        Ok(c) => c,
        Err(e) => return error(StatusCode::BAD_REQUEST, "Usage", e),
    };
    let catalog = match fetch_catalog(&st.registry, st.timeout).await {
        Ok(c) => c,
        Err(e) => return client_error(e),
    };
    let query = match parse_select(&body.query, &catalog) {
        Ok(q) => q,
        Err(e) => return error(StatusCode::BAD_REQUEST, &format!("{:?}", rgma_core::sql_error_kind(&e)), e.to_string()),
    };
    let n = st.next.fetch_add(1, Ordering::SeqCst);
    let id = format!("q{n}");
    let consumer = format!("{}/{id}", st.service.inspect(|node| node.id().to_string()));
    let spec = ConsumerSpec {
        component_id: consumer.clone(),
        query: body.query,
        query_class: class,
        registry: st.registry.clone(),
        interval_ms: st.interval_ms,
        repeat_ms: None,
    };
    if let Err(e) = st.service.apply(|node, now| node.add_consumer(spec, &catalog, now)) {
        let kind = match &e {
            rgma_core::node::NodeError::Sql(s) => rgma_core::sql_error_kind(s),
            rgma_core::node::NodeError::Mediator(m) => m.kind(),
            _ => ErrorKind::Internal,
        };
        return error(StatusCode::BAD_REQUEST, &format!("{kind:?}"), e.to_string());
    }
    let columns = Columns::of(&query, &catalog);
    let labels = columns.labels.clone();
    st.queries.lock().expect("queries lock").insert(id.clone(), Running { consumer, columns });
    (StatusCode::CREATED, Json(json!({"id": id, "class": class.name(), "columns": labels}))).into_response()
}

#[derive(Deserialize)]
struct Wait {
    wait_ms: Option<u64>,
}

async fn next(State(st): State<Arc<HttpState>>, Path(id): Path<String>, UrlQuery(w): UrlQuery<Wait>) -> Response {
    let Some((consumer, columns)) =
        st.queries.lock().expect("queries lock").get(&id).map(|r| (r.consumer.clone(), r.columns.clone()))
    else {
        return error(StatusCode::NOT_FOUND, "UnknownQuery", format!("no query '{id}'"));
    };
    let wait = Duration::from_millis(w.wait_ms.unwrap_or(1000).min(MAX_WAIT_MS));
    let Some(buf) = st.service.next_results(&consumer, wait).await else {
        return error(StatusCode::NOT_FOUND, "UnknownQuery", format!("no query '{id}'"));
    };
    let rows: Vec<_> = buf
        .rows
        .iter()
        .map(|r| json!({"producer": r.producer, "values": columns.project(r).into_iter().map(json_value).collect::<Vec<_>>()}))
        .collect();
    Json(json!({"rows": rows, "notices": buf.notices, "done": buf.done, "dropped": buf.dropped})).into_response()
}

async fn stop(State(st): State<Arc<HttpState>>, Path(id): Path<String>) -> Response {
    let Some(r) = st.queries.lock().expect("queries lock").remove(&id) else {
        return error(StatusCode::NOT_FOUND, "UnknownQuery", format!("no query '{id}'"));
    };
    st.service.apply(|node, now| Ok::<_, std::convert::Infallible>(node.remove_component(&r.consumer, now))).expect("infallible");
    StatusCode::NO_CONTENT.into_response()
}
