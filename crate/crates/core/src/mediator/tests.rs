use super::*;
use crate::model::Tuple;
use crate::registry::{ProducerType, VersionStamp};
use crate::sql::{parse_create_table, parse_select, parse_view, TableDefinition, Value, ViewPredicate};

fn service() -> TableDefinition {
    parse_create_table("CREATE TABLE Service (uri STRING, type STRING, site STRING, ts TIMESTAMP)", &["uri"]).unwrap()
}

fn status() -> TableDefinition {
    parse_create_table("CREATE TABLE ServiceStatus (uri STRING, site STRING, up INT, load REAL, ts TIMESTAMP)", &["uri"])
        .unwrap()
}

fn catalog() -> Catalog {
    [service(), status()].into_iter().collect()
}

fn entry(id: &str, port: u16, ty: ProducerType, table: &str, view: &str) -> ProducerEntry {
    let def = catalog().get(table).unwrap().clone();
    ProducerEntry {
        component_id: id.into(),
        endpoint: Endpoint::new("h", port, id),
        producer_type: ty,
        table: table.into(),
        view: parse_view(view, &def).unwrap(),
        termination_deadline: 1000,
        interval_ms: 1000,
        epoch: 1,
        master: "r".into(),
        version: VersionStamp { master: "r".into(), counter: 1 },
    }
}

fn svc(uri: &str, ts: i64) -> Tuple {
    Tuple::new(&service(), vec![Value::Str(uri.into()), Value::Str("CE".into()), Value::Str("RAL".into()), Value::Int(ts)])
        .unwrap()
}

fn row(producer: &str, t: Tuple) -> ResultRow {
    ResultRow { producer: producer.into(), epoch: 0, seq: 0, backlog: false, tuples: vec![t] }
}

#[test]
fn classify_examples() {
    let cat = catalog();
    let single = parse_select("SELECT * FROM Service WHERE type = 'CE'", &cat).unwrap();
    assert_eq!(classify(&single, QueryClass::Continuous), Ok(QueryClass::Continuous));
    let join = parse_select("SELECT * FROM Service s, ServiceStatus st WHERE s.uri = st.uri", &cat).unwrap();
    assert!(matches!(classify(&join, QueryClass::Continuous), Err(MediatorError::UnsupportedQueryClass(..))));
    assert_eq!(classify(&join, QueryClass::History), Ok(QueryClass::History));
}

#[test]
fn plan_carries_residuals_and_policy() {
    let sql = "SELECT * FROM Service WHERE site = 'RAL' AND type = 'CE'";
    let q = parse_select(sql, &catalog()).unwrap();
    let p = plan(sql, &q, QueryClass::Latest, &[entry("a", 1, ProducerType::Latest, "service", "site = 'RAL'")]).unwrap();
    assert_eq!(p.merge, MergePolicy::LatestPerKey);
    assert_eq!(p.targets.len(), 1);
    assert_eq!(p.targets[0].residual.as_ref().unwrap().to_string(), "type = 'CE'");
    let h = plan("SELECT * FROM Service", &parse_select("SELECT * FROM Service", &catalog()).unwrap(), QueryClass::History, &[
        entry("a", 1, ProducerType::DataBase, "service", ""),
        entry("b", 2, ProducerType::DataBase, "service", ""),
        entry("c", 3, ProducerType::DataBase, "service", ""),
    ])
    .unwrap();
    assert_eq!(h.targets.len(), 3);
    assert_eq!(h.merge, MergePolicy::Union);
}

#[test]
fn join_targets_need_every_table_at_one_endpoint() {
    let sql = "SELECT * FROM Service s, ServiceStatus st WHERE s.uri = st.uri";
    let q = parse_select(sql, &catalog()).unwrap();
    let candidates = [
        entry("s1", 1, ProducerType::DataBase, "service", ""),
        entry("st1", 1, ProducerType::DataBase, "servicestatus", ""),
        entry("s2", 2, ProducerType::DataBase, "service", ""),
    ];
    let p = plan(sql, &q, QueryClass::History, &candidates).unwrap();
    assert_eq!(p.targets.len(), 1);
    assert_eq!(p.targets[0].label(), "s1+st1");
}

#[test]
fn latest_merge_max_timestamp_and_tiebreak() {
    let q = parse_select("SELECT * FROM Service", &catalog()).unwrap();
    let p = plan("SELECT * FROM Service", &q, QueryClass::Latest, &[]).unwrap();
    let out = execute_latest(&p, &catalog(), vec![
        ("A".into(), Ok(vec![row("A", svc("k", 5))])),
        ("B".into(), Ok(vec![row("B", svc("k", 9))])),
    ]);
    assert_eq!(out.rows.len(), 1);
    assert_eq!(out.rows[0].producer, "B");
    let out = execute_latest(&p, &catalog(), vec![
        ("b".into(), Ok(vec![row("b", svc("k", 5))])),
        ("a".into(), Ok(vec![row("a", svc("k", 5))])),
    ]);
    assert_eq!(out.rows[0].producer, "a");
}

#[test]
fn history_union_keeps_duplicates_and_failures() {
    let q = parse_select("SELECT * FROM Service", &catalog()).unwrap();
    let p = plan("SELECT * FROM Service", &q, QueryClass::History, &[entry("a", 1, ProducerType::DataBase, "service", "")]).unwrap();
    let out = execute_history(&p, vec![
        ("a".into(), Ok(vec![row("a", svc("k", 1)), row("a", svc("j", 1))])),
        ("b".into(), Ok(vec![row("b", svc("k", 1)), row("b", svc("j", 1))])),
        ("c".into(), Err("connection refused".into())),
    ]);
    assert_eq!(out.rows.len(), 4);
    assert_eq!(out.failures.len(), 1);
    let empty = plan("SELECT * FROM Service", &q, QueryClass::History, &[]).unwrap();
    assert!(execute_history(&empty, vec![]).no_producers);
}

#[test]
fn session_dedups_and_filters() {
    let sql = "SELECT * FROM Service WHERE uri <> 'x'";
    let q = parse_select(sql, &catalog()).unwrap();
    let mut s = ContinuousSession::new(sql, q, service()).unwrap();
    let p = entry("p", 1, ProducerType::Stream, "service", "");
    let sub = s.on_notify(&p).unwrap();
    assert!(sub.request.resume_after.is_none());
    assert!(s.on_notify(&p).is_none(), "pending link is not resubscribed");
    s.on_subscribed("p");
    let mk = |seq, uri: &str| ResultRow { producer: "p".into(), epoch: 1, seq, backlog: false, tuples: vec![svc(uri, seq as i64)] };
    let got = s.on_rows(vec![mk(1, "a"), mk(2, "x"), mk(2, "a"), mk(3, "b")], 0);
    let seqs: Vec<u64> = got.iter().map(|r| r.seq).collect();
    assert_eq!(seqs, [1, 3]);
    s.on_disconnect("p");
    let again = s.replan(&[p.clone()]);
    assert_eq!(again[0].request.resume_after, Some(crate::transport::Cursor { epoch: 1, seq: 3 }));
    // unrelated producers are ignored
    assert!(s.on_notify(&entry("q", 2, ProducerType::Latest, "service", "")).is_none());
    assert!(s.on_notify(&entry("r", 2, ProducerType::Stream, "service", "uri = 'x'")).is_none());
}

#[test]
fn continuous_join_session_rejected() {
    let sql = "SELECT * FROM Service s, ServiceStatus st WHERE s.uri = st.uri";
    let q = parse_select(sql, &catalog()).unwrap();
    assert!(ContinuousSession::new(sql, q, service()).is_err());
    let _ = ViewPredicate::universal();
}
