use std::collections::BTreeSet;
use std::time::Duration;

use rgma::components::{start_consumer, start_producer, start_registry, ProducerOptions, RegistryOptions};
use rgma::{Client, Service};
use rgma_core::harness::demo_schema;
use rgma_core::node::ConsumerSpec;
use rgma_core::registry::{ProducerType, QueryClass};
use rgma_core::model::Tuple;
use rgma_core::sql::{parse_statement, Catalog, Statement};

async fn registry() -> (Service, String) {
    let s = Service::bind("registry", "127.0.0.1:0", None).await.unwrap();
    let mut opts = RegistryOptions::new("registry");
    opts.tables = demo_schema();
    start_registry(&s, opts).unwrap();
    let addr = s.address();
    (s, addr)
}

fn tuple(cat: &Catalog, sql: &str) -> Tuple {
    match parse_statement(sql, cat, &[]).unwrap() {
        Statement::Insert(t) => t,
        _ => unreachable!(),
    }
}

async fn collect(s: &Service, consumer: &str, want: usize, limit: Duration) -> Vec<Tuple> {
    let deadline = tokio::time::Instant::now() + limit;
    let mut got = Vec::new();
    while got.len() < want && tokio::time::Instant::now() < deadline {
        if let Some(b) = s.next_results(consumer, Duration::from_millis(200)).await {
            got.extend(b.rows.into_iter().flat_map(|r| r.tuples));
        }
    }
    got
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn continuous_and_latest_over_tcp() {
    let (_reg, raddr) = registry().await;
    let cat = Client::connect(&raddr, Duration::from_secs(5)).await.unwrap().catalog().await.unwrap();

    let ps = Service::bind("p-host", "127.0.0.1:0", None).await.unwrap();
    start_producer(&ps, &cat, &raddr, ProducerOptions::new("stream", ProducerType::Stream, "service")).unwrap();
    start_producer(&ps, &cat, &raddr, ProducerOptions::new("latest", ProducerType::Latest, "service")).unwrap();

    let cs = Service::bind("c-host", "127.0.0.1:0", None).await.unwrap();
    let spec = ConsumerSpec {
        component_id: "watch".into(),
        query: "SELECT * FROM Service WHERE site = 'RAL'".into(),
        query_class: QueryClass::Continuous,
        registry: raddr.clone(),
        interval_ms: 30_000,
        repeat_ms: None,
    };
    start_consumer(&cs, &cat, spec).unwrap();
    tokio::time::sleep(Duration::from_millis(500)).await;

    let mut c = Client::connect(&ps.address(), Duration::from_secs(5)).await.unwrap();
    let rows = [
        "INSERT INTO Service VALUES ('gk1', 'CE', 'RAL', 1000)",
        "INSERT INTO Service VALUES ('gk2', 'CE', 'CERN', 1001)",
        "INSERT INTO Service VALUES ('gk1', 'CE', 'RAL', 1002)",
        "INSERT INTO Service VALUES ('se1', 'SE', 'RAL', 1003)",
    ];
    for r in rows {
        c.insert("stream", vec![tuple(&cat, r)]).await.unwrap();
        c.insert("latest", vec![tuple(&cat, r)]).await.unwrap();
    }
    let got = collect(&cs, "watch", 3, Duration::from_secs(10)).await;
    let ts: Vec<i64> = got.iter().map(Tuple::timestamp).collect();
    assert_eq!(ts, vec![1000, 1002, 1003]);

    let spec = ConsumerSpec {
        component_id: "now".into(),
        query: "SELECT uri, ts FROM Service".into(),
        query_class: QueryClass::Latest,
        registry: raddr.clone(),
        interval_ms: 30_000,
        repeat_ms: None,
    };
    start_consumer(&cs, &cat, spec).unwrap();
    let deadline = tokio::time::Instant::now() + Duration::from_secs(10);
    let mut latest = BTreeSet::new();
    loop {
        let b = cs.next_results("now", Duration::from_millis(200)).await.unwrap();
        latest.extend(b.rows.iter().flat_map(|r| r.tuples.iter().map(|t| (t.values()[0].to_string(), t.timestamp()))));
        if b.done || tokio::time::Instant::now() > deadline {
            break;
        }
    }
    let want: BTreeSet<_> = [("gk1", 1002), ("gk2", 1001), ("se1", 1003)]
        .into_iter()
        .map(|(u, t)| (u.to_string(), t))
        .collect();
    assert_eq!(latest, want);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn registry_lists_live_components_and_expires_crashed_ones() {
    let (_reg, raddr) = registry().await;
    let cat = Client::connect(&raddr, Duration::from_secs(5)).await.unwrap().catalog().await.unwrap();
    let ps = Service::bind("p-host", "127.0.0.1:0", None).await.unwrap();
    let mut opts = ProducerOptions::new("short", ProducerType::Stream, "servicestatus");
    opts.interval_ms = 600;
    start_producer(&ps, &cat, &raddr, opts).unwrap();

    let mut c = Client::connect(&raddr, Duration::from_secs(5)).await.unwrap();
    let deadline = tokio::time::Instant::now() + Duration::from_secs(5);
    while c.lookup("SELECT * FROM ServiceStatus", QueryClass::Continuous).await.unwrap().is_empty() {
        assert!(tokio::time::Instant::now() < deadline, "producer never registered");
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    // heartbeats keep it alive past its interval
    tokio::time::sleep(Duration::from_millis(1500)).await;
    assert_eq!(c.lookup("SELECT * FROM ServiceStatus", QueryClass::Continuous).await.unwrap().len(), 1);

    ps.close();
    tokio::time::sleep(Duration::from_millis(1200)).await;
    assert!(c.lookup("SELECT * FROM ServiceStatus", QueryClass::Continuous).await.unwrap().is_empty());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_insert_is_rejected() {
    let (_reg, raddr) = registry().await;
    let cat = Client::connect(&raddr, Duration::from_secs(5)).await.unwrap().catalog().await.unwrap();
    let ps = Service::bind("p-host", "127.0.0.1:0", None).await.unwrap();
    start_producer(&ps, &cat, &raddr, ProducerOptions::new("p", ProducerType::Stream, "service")).unwrap();
    let mut c = Client::connect(&ps.address(), Duration::from_secs(5)).await.unwrap();
    let wrong_table = tuple(&cat, "INSERT INTO ServiceStatus VALUES ('x', 'RAL', 1, 0.5, 5)");
    assert!(matches!(c.insert("p", vec![wrong_table]).await, Err(rgma::ClientError::Rejected(_))));
    let unknown = tuple(&cat, "INSERT INTO Service VALUES ('x', 'CE', 'RAL', 5)");
    assert!(matches!(c.insert("nobody", vec![unknown]).await, Err(rgma::ClientError::Rejected(_))));
}
