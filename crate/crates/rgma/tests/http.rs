use std::time::Duration;

use rgma::components::{start_producer, start_registry, ProducerOptions, RegistryOptions};
use rgma::http::{serve, HttpState};
use rgma::{Client, Service};
use rgma_core::harness::demo_schema;
use rgma_core::registry::ProducerType;
use rgma_core::sql::{parse_statement, Statement};
use serde_json::{json, Value};

struct Setup {
    base: String,
    producer: String,
    catalog: rgma_core::sql::Catalog,
    _services: Vec<Service>,
}

async fn setup() -> Setup {
    let reg = Service::bind("registry", "127.0.0.1:0", None).await.unwrap();
    let mut opts = RegistryOptions::new("registry");
    opts.tables = demo_schema();
    start_registry(&reg, opts).unwrap();
    let raddr = reg.address();
    let catalog = Client::connect(&raddr, Duration::from_secs(5)).await.unwrap().catalog().await.unwrap();

    let ps = Service::bind("p-host", "127.0.0.1:0", None).await.unwrap();
    start_producer(&ps, &catalog, &raddr, ProducerOptions::new("stream", ProducerType::Stream, "service")).unwrap();
    start_producer(&ps, &catalog, &raddr, ProducerOptions::new("latest", ProducerType::Latest, "service")).unwrap();

    let cs = Service::bind("web", "127.0.0.1:0", None).await.unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(serve(listener, HttpState::new(cs.clone(), &raddr, Duration::from_secs(5), 30_000)));
    Setup { base, producer: ps.address(), catalog, _services: vec![reg, ps, cs] }
}

async fn insert(s: &Setup, sql: &str) {
    let Statement::Insert(t) = parse_statement(sql, &s.catalog, &[]).unwrap() else { unreachable!() };
    let mut c = Client::connect(&s.producer, Duration::from_secs(5)).await.unwrap();
    c.insert("stream", vec![t.clone()]).await.unwrap();
    c.insert("latest", vec![t]).await.unwrap();
}

async fn poll_until(http: &reqwest::Client, url: &str, want: usize) -> (Vec<Value>, bool) {
    let mut rows = Vec::new();
    let deadline = tokio::time::Instant::now() + Duration::from_secs(10);
    loop {
        let r: Value = http.get(url).send().await.unwrap().json().await.unwrap();
        rows.extend(r["rows"].as_array().unwrap().iter().cloned());
        let done = r["done"].as_bool().unwrap();
        if done || rows.len() >= want || tokio::time::Instant::now() > deadline {
            return (rows, done);
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn long_poll_query_lifecycle() {
    let s = setup().await;
    let http = reqwest::Client::new();

    let tables: Value = http.get(format!("{}/tables", s.base)).send().await.unwrap().json().await.unwrap();
    let names: Vec<&str> = tables.as_array().unwrap().iter().map(|t| t["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"service") && names.contains(&"servicestatus"));

    let r = http
        .post(format!("{}/query", s.base))
        .json(&json!({"query": "SELECT uri, site FROM Service WHERE site = 'RAL'", "class": "continuous"}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 201);
    let started: Value = r.json().await.unwrap();
    assert_eq!(started["columns"], json!(["uri", "site"]));
    let id = started["id"].as_str().unwrap().to_string();
    tokio::time::sleep(Duration::from_millis(500)).await;

    insert(&s, "INSERT INTO Service VALUES ('gk1', 'CE', 'RAL', 10)").await;
    insert(&s, "INSERT INTO Service VALUES ('gk2', 'CE', 'CERN', 11)").await;
    insert(&s, "INSERT INTO Service VALUES ('se1', 'SE', 'RAL', 12)").await;

    let next = format!("{}/query/{id}/next?wait_ms=500", s.base);
    let (rows, done) = poll_until(&http, &next, 2).await;
    assert!(!done);
    let values: Vec<&Value> = rows.iter().map(|r| &r["values"]).collect();
    assert_eq!(values, [&json!(["gk1", "RAL"]), &json!(["se1", "RAL"])]);
    assert_eq!(rows[0]["producer"], "stream");

    let r = http.delete(format!("{}/query/{id}", s.base)).send().await.unwrap();
    assert_eq!(r.status(), 204);
    assert_eq!(http.get(&next).send().await.unwrap().status(), 404);
    assert_eq!(http.delete(format!("{}/query/{id}", s.base)).send().await.unwrap().status(), 404);

    let r: Value = http
        .post(format!("{}/query", s.base))
        .json(&json!({"query": "SELECT * FROM Service", "class": "latest"}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let next = format!("{}/query/{}/next?wait_ms=500", s.base, r["id"].as_str().unwrap());
    let (rows, done) = poll_until(&http, &next, usize::MAX).await;
    assert!(done);
    assert_eq!(rows.len(), 3);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn bad_requests() {
    let s = setup().await;
    let http = reqwest::Client::new();
    let post = |body: Value| http.post(format!("{}/query", s.base)).json(&body).send();

    let r = post(json!({"query": "SELECT * FROM Nope", "class": "latest"})).await.unwrap();
    assert_eq!(r.status(), 400);
    let e: Value = r.json().await.unwrap();
    assert_eq!(e["error"]["kind"], "Schema");

    let r = post(json!({"query": "SELEC * FROM Service", "class": "latest"})).await.unwrap();
    assert_eq!(r.status(), 400);
    assert_eq!(r.json::<Value>().await.unwrap()["error"]["kind"], "Syntax");

    let r = post(json!({"query": "SELECT * FROM Service", "class": "sometimes"})).await.unwrap();
    assert_eq!(r.status(), 400);

    let r = http.get(format!("{}/query/q999/next", s.base)).send().await.unwrap();
    assert_eq!(r.status(), 404);
}
