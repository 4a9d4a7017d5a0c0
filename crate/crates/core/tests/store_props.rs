//! Store, producer and merge properties checked against brute-force oracles.

use std::collections::BTreeMap;

use proptest::prelude::*;

use rgma_core::mediator::merge_latest;
use rgma_core::model::{apply_cleanup, latest_merge, CleanupRule, HistoryStore, LatestStore, Tuple, TupleRow};
use rgma_core::producer::{ProducerConfig, ProducerInstance};
use rgma_core::registry::ProducerType;
use rgma_core::sql::*;
use rgma_core::transport::ResultRow;

fn schema() -> TableDefinition {
    parse_create_table("CREATE TABLE T (k INT, v INT, ts TIMESTAMP)", &["k"]).unwrap()
}

fn t(k: i64, v: i64, ts: i64) -> Tuple {
    Tuple::new(&schema(), vec![Value::Int(k), Value::Int(v), Value::Timestamp(ts)]).unwrap()
}

fn ops() -> impl Strategy<Value = Vec<(i64, i64, i64)>> {
    prop::collection::vec((0i64..5, 0i64..100, 0i64..10), 0..50)
}

fn catalog() -> Catalog {
    let mut c = Catalog::new();
    c.declare(schema()).unwrap();
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn latest_store_is_group_by_max(seq in ops()) {
        let mut store = LatestStore::new(schema());
        for (k, v, ts) in &seq {
            store.insert(t(*k, *v, *ts)).unwrap();
        }
        // oracle: scan in arrival order, keep max ts, later arrival on ties
        let mut want: BTreeMap<i64, (i64, i64)> = BTreeMap::new();
        for (k, v, ts) in &seq {
            match want.get(k) {
                Some((_, old)) if old > ts => {}
                _ => {
                    want.insert(*k, (*v, *ts));
                }
            }
        }
        let mut got: Vec<(i64, i64, i64)> = store
            .rows()
            .map(|r| (r.values()[0].as_i64().unwrap(), r.values()[1].as_i64().unwrap(), r.timestamp()))
            .collect();
        got.sort();
        let want: Vec<(i64, i64, i64)> = want.into_iter().map(|(k, (v, ts))| (k, v, ts)).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn latest_merge_is_idempotent(k in 0i64..5, v in 0i64..9, ts in 0i64..9) {
        let x = t(k, v, ts);
        prop_assert_eq!(latest_merge(Some(&x), x.clone(), &schema()).unwrap(), x);
    }

    #[test]
    fn cleanup_removes_exactly_matching_rows(seq in ops(), now in 0i64..20, age in 0i64..10) {
        let s = schema();
        let mut store = HistoryStore::new(s.clone());
        for (k, v, ts) in &seq {
            store.append(t(*k, *v, *ts)).unwrap();
        }
        let rule = CleanupRule::delete_where(&s, &format!("ts < NOW - {age}"), 1000).unwrap();
        let removed = apply_cleanup(&mut store, &rule, now).unwrap();
        let kept: Vec<&(i64, i64, i64)> = seq.iter().filter(|(_, _, ts)| !(*ts < now - age)).collect();
        prop_assert_eq!(removed, seq.len() - kept.len());
        prop_assert_eq!(store.len(), kept.len());
        for (row, (k, v, ts)) in store.rows().iter().zip(kept) {
            prop_assert_eq!(row, &t(*k, *v, *ts));
        }
    }

    /// A subscriber sees exactly the later inserts that satisfy its
    /// condition, in order, whatever the storage.
    #[test]
    fn subscription_is_filtered_subsequence(before in ops(), after in ops(), lim in 0i64..100, resilient in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let ty = if resilient { ProducerType::ResilientStream } else { ProducerType::Stream };
        let mut cfg = ProducerConfig::new("p", ty, schema(), ViewPredicate::universal());
        cfg.ring_capacity = 8;
        if resilient {
            cfg.storage = Some(dir.path().join("p.wal"));
        }
        let mut p = ProducerInstance::open(cfg, 1).unwrap();
        for (k, v, ts) in &before {
            p.insert(vec![t(*k, *v, *ts)], 0).unwrap();
        }
        let cond = parse_condition(&format!("v >= {lim}"), &schema()).unwrap();
        let (sub, _) = p.subscribe(Some(cond), None, 0).unwrap();
        let mut got = vec![];
        for (k, v, ts) in &after {
            let (_, ds) = p.insert(vec![t(*k, *v, *ts)], 0).unwrap();
            got.extend(ds.into_iter().filter(|d| d.subscription == sub).flat_map(|d| d.row.tuples));
        }
        let want: Vec<Tuple> = after.iter().filter(|(_, v, _)| *v >= lim).map(|(k, v, ts)| t(*k, *v, *ts)).collect();
        prop_assert_eq!(got, want);
    }

    /// Resuming from any cursor yields exactly the rows after it.
    #[test]
    fn resume_replays_from_cursor(n in 1usize..40, cut in 0usize..40, cap in 1usize..10) {
        let cut = cut.min(n);
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ProducerConfig::new("p", ProducerType::ResilientStream, schema(), ViewPredicate::universal());
        cfg.ring_capacity = cap;
        cfg.storage = Some(dir.path().join("p.wal"));
        let mut p = ProducerInstance::open(cfg.clone(), 1).unwrap();
        for i in 0..n {
            p.insert(vec![t(i as i64, 0, i as i64)], 0).unwrap();
        }
        let epoch = p.epoch();
        drop(p);
        let mut p = ProducerInstance::open(cfg, 99).unwrap();
        prop_assert_eq!(p.epoch(), epoch);
        let cursor = rgma_core::transport::Cursor { epoch, seq: cut as u64 };
        let (_, backlog) = p.subscribe(None, Some(cursor), 0).unwrap();
        let seqs: Vec<u64> = backlog.iter().map(|r| r.seq).collect();
        prop_assert_eq!(seqs, ((cut as u64 + 1)..=n as u64).collect::<Vec<_>>());
    }

    /// Cross-producer latest merge does not depend on arrival order.
    #[test]
    fn merge_latest_is_order_independent(rows in prop::collection::vec((0usize..3, 0i64..4, 0i64..9, 0i64..5), 0..30), seed in any::<u64>()) {
        let mk = |(p, k, v, ts): &(usize, i64, i64, i64)| ResultRow {
            producer: format!("p{p}"),
            epoch: 1,
            seq: 1,
            backlog: false,
            tuples: vec![t(*k, *v, *ts)],
        };
        let a: Vec<ResultRow> = rows.iter().map(mk).collect();
        let mut b = a.clone();
        // deterministic shuffle
        let mut s = seed;
        for i in (1..b.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            b.swap(i, (s >> 33) as usize % (i + 1));
        }
        let cat = catalog();
        let ma = merge_latest(a.clone(), &cat);
        prop_assert_eq!(&ma, &merge_latest(b, &cat));
        // one row per key, carrying that key's max timestamp
        for r in &ma {
            let k = r.tuples[0].values()[0].clone();
            let max = a.iter().filter(|x| x.tuples[0].values()[0] == k).map(|x| x.tuples[0].timestamp()).max().unwrap();
            prop_assert_eq!(r.tuples[0].timestamp(), max);
        }
        let keys: std::collections::BTreeSet<i64> = rows.iter().map(|r| r.1).collect();
        prop_assert_eq!(ma.len(), keys.len());
    }

    /// Inserts violating the view are rejected whole; stored rows satisfy it.
    #[test]
    fn view_is_enforced(seq in prop::collection::vec(prop::collection::vec((0i64..3, 0i64..3, 0i64..9), 1..4), 0..10)) {
        let view = parse_view("v = 1", &schema()).unwrap();
        let mut p = ProducerInstance::open(ProducerConfig::new("p", ProducerType::DataBase, schema(), view.clone()), 1).unwrap();
        let mut want = 0;
        for batch in &seq {
            let tuples: Vec<Tuple> = batch.iter().map(|(k, v, ts)| t(*k, *v, *ts)).collect();
            let ok = batch.iter().all(|(_, v, _)| *v == 1);
            prop_assert_eq!(p.insert(tuples, 0).is_ok(), ok);
            if ok {
                want += batch.len();
            }
        }
        prop_assert_eq!(p.len(), want);
        let s = schema();
        for row in p.contents() {
            let row_ctx = TupleRow { schema: &s, tuple: &row };
            prop_assert!(evaluate(&view.to_condition(), &row_ctx, None).unwrap());
        }
    }
}
