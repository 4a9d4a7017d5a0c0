use std::collections::{BTreeMap, BTreeSet};

use rgma_core::harness::*;
use rgma_core::model::Tuple;
use rgma_core::registry::QueryClass;
use rgma_core::sql::Value;

fn latest_oracle(published: &BTreeMap<String, Vec<(i64, u64, Tuple)>>, producers: &[String]) -> BTreeSet<String> {
    let mut best: BTreeMap<Value, Tuple> = BTreeMap::new();
    for p in producers {
        for (_, _, t) in published.get(p).into_iter().flatten() {
            let key = t.values()[0].clone();
            match best.get(&key) {
                Some(old) if old.timestamp() > t.timestamp() => {}
                _ => {
                    best.insert(key, t.clone());
                }
            }
        }
    }
    best.values().map(|t| format!("{t:?}")).collect()
}

fn as_set(ts: &[Tuple]) -> BTreeSet<String> {
    ts.iter().map(|t| format!("{t:?}")).collect()
}

fn base(duration_ms: i64) -> Scenario {
    Scenario::from_toml(&format!(
        r#"
duration_ms = {duration_ms}
demo_schema = true
[registries]
count = 1
"#
    ))
    .unwrap()
}

fn producer(id: &str, ty: &str, start_ms: i64) -> ProducerSetup {
    ProducerSetup {
        id: id.into(),
        producer_type: ty.into(),
        table: "ServiceStatus".into(),
        view: Some("site = 'a'".into()),
        period_ms: 100,
        keys: 3,
        seed: Some(1),
        limit: None,
        start_ms,
        stop_ms: None,
        registry: 0,
        interval_ms: None,
    }
}

#[test]
fn typical_sites_latest_sink_matches_replay() {
    let sc = Scenario::typical_sites(2, 7);
    let report = run_scenario(&sc).unwrap();
    let ids: Vec<String> = sc.producers.iter().map(|p| p.id.clone()).collect();
    let published: usize = ids.iter().map(|p| report.published[p].len()).sum();
    assert!(published > 3000, "{published}");
    assert_eq!(as_set(&report.stores["latest-sink"]), latest_oracle(&report.published, &ids));
    assert!(report.rejected.is_empty(), "{:?}", report.rejected);
    // every sink row carries its producer's site
    for t in &report.stores["latest-sink"] {
        assert!(matches!(&t.values()[1], Value::Str(s) if s.starts_with("site")));
    }
    // monitoring reached the monitoring table
    assert!(!report.stores[MONITOR_NODE].is_empty());
    assert!(report.monitoring.iter().any(|m| m.metric == Metric::InfoAgeMs));
}

#[test]
fn seeded_runs_are_reproducible() {
    let a = run_scenario(&Scenario::typical_sites(1, 3)).unwrap();
    let b = run_scenario(&Scenario::typical_sites(1, 3)).unwrap();
    assert_eq!(a.digest, b.digest);
    assert_eq!(a.stores["latest-sink"], b.stores["latest-sink"]);
    let c = run_scenario(&Scenario::typical_sites(1, 4)).unwrap();
    assert_ne!(a.digest, c.digest);
}

#[test]
fn zero_producers_then_data() {
    let mut sc = base(20_000);
    sc.consumers.push(ConsumerSetup {
        id: "c".into(),
        query: "SELECT * FROM ServiceStatus".into(),
        class: "continuous".into(),
        registry: 0,
        start_ms: 0,
        repeat_ms: None,
    });
    sc.producers.push(producer("p", "stream", 10_000));
    let report = run_scenario(&sc).unwrap();
    let np = &report.no_producers["c"];
    assert_eq!(np.len(), 1);
    assert!(np[0] < 1_000);
    let first = report.delivered["c"].first().unwrap().0;
    assert!(first >= 10_000 && first < 10_500, "{first}");
    let seqs: Vec<u64> = report.delivered["c"].iter().map(|(_, r)| r.seq).collect();
    let want: Vec<u64> = report.published["p"].iter().map(|x| x.1).collect();
    // everything published after the subscription landed is delivered in order
    assert_eq!(&want[..seqs.len()], &seqs[..]);
    assert!(seqs.len() + 1 >= want.len());
}

#[test]
fn resilient_restart_loses_nothing_acked() {
    let mut sc = base(20_000);
    sc.producers.push(ProducerSetup { stop_ms: Some(18_000), ..producer("r", "resilient", 0) });
    sc.archivers.push(ArchiverSetup {
        id: "arch".into(),
        tables: vec![ArchivedSetup {
            table: "ServiceStatus".into(),
            condition: None,
            sink: "db".into(),
            sink_type: "database".into(),
        }],
        registry: 0,
        start_ms: 0,
        source_class: None,
    });
    sc.faults.push(Fault { at_ms: 5_000, action: FaultAction::Kill { component: "r".into() } });
    sc.faults.push(Fault { at_ms: 7_000, action: FaultAction::Restart { component: "r".into() } });
    let report = run_scenario(&sc).unwrap();
    let acked: BTreeSet<String> = report.published["r"].iter().map(|(_, _, t)| format!("{t:?}")).collect();
    assert!(acked.len() > 150);
    let sink = as_set(&report.stores["db"]);
    let missing: Vec<_> = report.published["r"].iter().filter(|(_, _, t)| !sink.contains(&format!("{t:?}"))).map(|(a, s, _)| (*a, *s)).collect();
    assert!(missing.is_empty(), "missing {missing:?}");
    // the publisher was down for two seconds
    assert!(report.published["r"].iter().all(|(t, _, _)| *t < 5_000 || *t >= 7_000));
}

#[test]
fn silent_producer_expires_within_bound() {
    let mut sc = base(30_000);
    sc.interval_ms = 4_000;
    sc.producers.push(producer("p", "stream", 0));
    sc.faults.push(Fault { at_ms: 2_000, action: FaultAction::Kill { component: "p".into() } });
    let mut sim = Simulation::new(&sc).unwrap();
    sim.run_until(1_000).unwrap();
    assert_eq!(sim.lookup(0, "SELECT * FROM ServiceStatus", QueryClass::Continuous), vec!["p"]);
    let mut gone_at = None;
    let mut t = 1_000;
    while t < 30_000 {
        t += 50;
        sim.run_until(t).unwrap();
        if gone_at.is_none() && sim.lookup(0, "SELECT * FROM ServiceStatus", QueryClass::Continuous).is_empty() {
            gone_at = Some(t);
        }
    }
    let gone = gone_at.expect("expired");
    assert!(gone - 2_000 <= 6_000, "{gone}");
}

#[test]
fn every_other_heartbeat_lost_never_expires() {
    let mut sc = base(300_000);
    sc.interval_ms = 4_000;
    sc.producers.push(producer("p", "stream", 0));
    sc.faults.push(Fault {
        at_ms: 0,
        action: FaultAction::Drop { from: "p".into(), to: registry_name(0), kind: "Heartbeat".into(), every: 2 },
    });
    let mut sim = Simulation::new(&sc).unwrap();
    let mut t = 0;
    while t < 300_000 {
        t += 100;
        sim.run_until(t).unwrap();
        assert_eq!(sim.lookup(0, "SELECT * FROM ServiceStatus", QueryClass::Continuous), vec!["p"], "at {t}");
    }
    assert!(sim.finish().expired.is_empty());
}

#[test]
fn consumer_notified_within_heartbeat_period() {
    let mut sc = base(30_000);
    sc.interval_ms = 10_000;
    sc.latency_ms = 20;
    sc.consumers.push(ConsumerSetup {
        id: "c".into(),
        query: "SELECT * FROM ServiceStatus WHERE site = 'a'".into(),
        class: "continuous".into(),
        registry: 0,
        start_ms: 0,
        repeat_ms: None,
    });
    sc.producers.push(producer("p", "stream", 4_321));
    let report = run_scenario(&sc).unwrap();
    let reg = report.registered.iter().find(|(_, _, c)| c == "p").unwrap().0;
    let first = report.delivered["c"][0].0;
    assert!(first >= reg && first - reg <= 5_000, "registered {reg}, first tuple {first}");
}

#[test]
fn one_shot_latest_over_two_producers() {
    let mut sc = base(10_000);
    sc.producers.push(ProducerSetup { stop_ms: Some(8_000), ..producer("p1", "latest", 0) });
    let mut p2 = ProducerSetup { stop_ms: Some(8_000), ..producer("p2", "latest", 0) };
    p2.view = Some("site = 'b'".into());
    sc.producers.push(p2);
    sc.consumers.push(ConsumerSetup {
        id: "q".into(),
        query: "SELECT * FROM ServiceStatus".into(),
        class: "latest".into(),
        registry: 0,
        start_ms: 9_000,
        repeat_ms: None,
    });
    let report = run_scenario(&sc).unwrap();
    let (_, outcome) = &report.results["q"][0];
    assert!(outcome.failures.is_empty());
    let got: BTreeSet<String> = outcome.rows.iter().map(|r| format!("{:?}", r.tuples[0])).collect();
    let mut want = as_set(&report.stores["p1"]);
    want.extend(as_set(&report.stores["p2"]));
    assert_eq!(got, want);
    assert_eq!(got.len(), 6);
}

#[test]
fn validation_rejects_bad_wiring() {
    let mut sc = base(1_000);
    sc.producers.push(ProducerSetup { table: "Nope".into(), ..producer("p", "stream", 0) });
    assert!(sc.validate().is_err());

    let mut sc = base(1_000);
    sc.faults.push(Fault { at_ms: 2_000, action: FaultAction::Kill { component: registry_name(0) } });
    assert!(sc.validate().is_err());

    let mut sc = base(1_000);
    sc.faults.push(Fault { at_ms: 10, action: FaultAction::Kill { component: "ghost".into() } });
    assert!(matches!(sc.validate(), Err(ScenarioError::Invalid(_))));

    let mut sc = base(1_000);
    sc.producers.push(producer("p", "stream", 0));
    sc.producers.push(producer("p", "stream", 0));
    assert!(sc.validate().is_err());

    let mut sc = base(1_000);
    sc.producers.push(producer("p", "stream", 0));
    sc.archivers.push(ArchiverSetup {
        id: "a".into(),
        tables: vec![ArchivedSetup {
            table: "ServiceStatus".into(),
            condition: None,
            sink: "s".into(),
            sink_type: "latest".into(),
        }],
        registry: 0,
        start_ms: 0,
        source_class: Some("latest".into()),
    });
    assert!(sc.validate().is_err());

    assert!(Scenario::from_toml("duration_ms = 5\n[registries]\ncount = 0\n").is_err());
    assert!(Scenario::from_toml("duration_ms = 5\nbogus = 1\n[registries]\ncount = 1\n").is_err());
}

#[test]
fn shipped_scenario_file_runs() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/typical-site.toml")).unwrap();
    let sc = Scenario::from_toml(&text).unwrap();
    let report = run_scenario(&sc).unwrap();
    assert!(!report.stores["latest-sink"].is_empty());
    assert!(!summarize(&report.monitoring, 10_000, Some(sc.duration_ms)).is_empty());
}

#[test]
fn toml_round_trip() {
    let sc = Scenario::typical_sites(2, 1);
    assert_eq!(Scenario::from_toml(&sc.to_toml()).unwrap(), sc);
}

fn rec(c: &str, m: Metric, v: f64, ts: i64) -> SelfMonitoringRecord {
    SelfMonitoringRecord::new(c, m, v, ts)
}

#[test]
fn always_up_is_fully_available() {
    let recs: Vec<_> = (0..30).map(|i| rec("x", Metric::Available, 1.0, i * 1_000)).collect();
    let s = summarize(&recs, 10_000, Some(30_000));
    assert_eq!(s.len(), 3);
    assert!(s.iter().all(|w| w.availability == Some(1.0)));
}

#[test]
fn half_window_down() {
    let recs = vec![
        rec("x", Metric::Available, 1.0, 0),
        rec("x", Metric::Available, 0.0, 5_000),
        rec("x", Metric::Available, 1.0, 10_000),
    ];
    let s = summarize(&recs, 10_000, Some(20_000));
    assert_eq!(s[0].availability, Some(0.5));
    assert_eq!(s[1].availability, Some(1.0));
}

#[test]
fn percentiles_and_csv() {
    let recs: Vec<_> = (1..=20).map(|i| rec("x", Metric::ResponseTimeMs, i as f64, i)).collect();
    let s = summarize(&recs, 1_000, None);
    assert_eq!(s[0].latency_p50_ms, Some(10.0));
    assert_eq!(s[0].latency_p95_ms, Some(19.0));
    let mut buf = Vec::new();
    write_summary_csv(&s, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("component,window_start,window_end,availability"));
    let mut buf = Vec::new();
    write_records_csv(&recs, &mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().contains("x,responseTimeMs,1.0,1"));
}

#[test]
fn availability_follows_kill_and_restart() {
    let mut sc = base(40_000);
    sc.monitor_ms = Some(500);
    sc.producers.push(producer("p", "stream", 0));
    sc.faults.push(Fault { at_ms: 10_000, action: FaultAction::Kill { component: "p".into() } });
    sc.faults.push(Fault { at_ms: 15_000, action: FaultAction::Restart { component: "p".into() } });
    let report = run_scenario(&sc).unwrap();
    let s = summarize(&report.monitoring, 10_000, Some(40_000));
    let p: Vec<_> = s.iter().filter(|w| w.component == "p").collect();
    assert_eq!(p[0].availability, Some(1.0));
    assert_eq!(p[1].availability, Some(0.5));
    assert_eq!(p[2].availability, Some(1.0));
}
