//! Registry behaviour against an independent model.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use rgma_core::registry::{ProducerType, QueryClass, Registry};
use rgma_core::sql::{parse_create_table, TableDefinition, Value, ViewPredicate};
use rgma_core::transport::{ConsumerRegistration, Endpoint, ProducerRegistration};

fn service() -> TableDefinition {
    parse_create_table("CREATE TABLE Service (uri STRING, type STRING, site STRING, ts TIMESTAMP)", &["uri"]).unwrap()
}

fn registry(id: &str) -> Registry {
    let mut r = Registry::new(id);
    r.declare_table(service()).unwrap();
    r
}

const VALS: [&str; 3] = ["a", "b", "c"];
const DOMAIN: [&str; 7] = ["", "a", "aa", "b", "bb", "c", "cc"];
const OPS: [&str; 6] = ["=", "<>", "<", "<=", ">", ">="];

#[derive(Debug, Clone)]
struct Atom {
    col: &'static str,
    op: usize,
    val: &'static str,
}

fn holds(op: usize, o: std::cmp::Ordering) -> bool {
    use std::cmp::Ordering::*;
    [o == Equal, o != Equal, o == Less, o != Greater, o == Greater, o != Less][op]
}

/// Conjunctive query over (type, site) as atoms.
#[derive(Debug, Clone)]
struct Q(Vec<Atom>);

impl Q {
    fn sql(&self) -> String {
        if self.0.is_empty() {
            return "SELECT * FROM Service".into();
        }
        let w: Vec<String> = self.0.iter().map(|a| format!("{} {} '{}'", a.col, OPS[a.op], a.val)).collect();
        format!("SELECT * FROM Service WHERE {}", w.join(" AND "))
    }

    fn eval(&self, ty: &str, site: &str) -> bool {
        self.0.iter().all(|a| holds(a.op, if a.col == "type" { ty } else { site }.cmp(a.val)))
    }
}

fn query() -> impl Strategy<Value = Q> {
    prop::collection::vec(
        (prop::bool::ANY, 0..6usize, 0..3usize).prop_map(|(t, op, v)| Atom {
            col: if t { "type" } else { "site" },
            op,
            val: VALS[v],
        }),
        0..3,
    )
    .prop_map(Q)
}

#[derive(Debug, Clone)]
struct P {
    ty: ProducerType,
    ty_col: Option<&'static str>,
    site: Option<&'static str>,
}

impl P {
    fn view(&self) -> ViewPredicate {
        let mut atoms = vec![];
        if let Some(t) = self.ty_col {
            atoms.push(("type".to_string(), Value::Str(t.into())));
        }
        if let Some(s) = self.site {
            atoms.push(("site".to_string(), Value::Str(s.into())));
        }
        ViewPredicate::new(atoms).unwrap()
    }

    fn could_answer(&self, q: &Q) -> bool {
        DOMAIN.iter().any(|t| {
            DOMAIN.iter().any(|s| {
                self.ty_col.map_or(true, |x| x == *t) && self.site.map_or(true, |x| x == *s) && q.eval(t, s)
            })
        })
    }
}

fn producer_strategy() -> impl Strategy<Value = P> {
    (0..ProducerType::ALL.len(), prop::option::of(0..3usize), prop::option::of(0..3usize))
        .prop_map(|(t, a, b)| P { ty: ProducerType::ALL[t], ty_col: a.map(|i| VALS[i]), site: b.map(|i| VALS[i]) })
}

fn class_strategy() -> impl Strategy<Value = QueryClass> {
    prop_oneof![Just(QueryClass::Continuous), Just(QueryClass::Latest), Just(QueryClass::History)]
}

fn reg(id: &str, p: &P, interval: u64, epoch: u64) -> ProducerRegistration {
    ProducerRegistration {
        component_id: id.into(),
        endpoint: Endpoint::new("h", 1, id),
        producer_type: p.ty,
        table: "service".into(),
        view: p.view(),
        interval_ms: interval,
        epoch,
    }
}

fn creg(id: &str, q: &Q, class: QueryClass) -> ConsumerRegistration {
    ConsumerRegistration {
        component_id: id.into(),
        endpoint: Endpoint::new("c", 2, id),
        query: q.sql(),
        query_class: class,
        interval_ms: 10_000,
    }
}

#[derive(Debug, Clone)]
enum Op {
    Register(usize),
    Heartbeat(usize),
    Unregister(usize),
    Advance(i64),
    Sweep,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0..6usize).prop_map(Op::Register),
        3 => (0..6usize).prop_map(Op::Heartbeat),
        1 => (0..6usize).prop_map(Op::Unregister),
        3 => (1i64..800).prop_map(Op::Advance),
        1 => Just(Op::Sweep),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Lookup equals relevance-by-enumeration intersected with the
    /// capability matrix, over live entries of a model automaton.
    #[test]
    fn lookup_matches_model(
        ps in prop::collection::vec(producer_strategy(), 6),
        ops in prop::collection::vec(op(), 0..60),
        q in query(),
        class in class_strategy(),
    ) {
        let interval = 1000u64;
        let mut r = registry("r");
        let mut deadline: BTreeMap<usize, i64> = BTreeMap::new();
        let mut now = 0i64;
        for o in &ops {
            match o {
                Op::Register(i) => {
                    r.register_producer(&reg(&format!("p{i}"), &ps[*i], interval, 1), now).unwrap();
                    deadline.insert(*i, now + interval as i64);
                }
                Op::Heartbeat(i) => {
                    let live = deadline.get(i).is_some_and(|d| *d > now);
                    prop_assert_eq!(r.heartbeat(&format!("p{i}"), now).is_ok(), live);
                    if live {
                        deadline.insert(*i, now + interval as i64);
                    }
                }
                Op::Unregister(i) => {
                    let live = deadline.get(i).is_some_and(|d| *d > now);
                    prop_assert_eq!(r.unregister(&format!("p{i}"), now).is_ok(), live);
                    if live {
                        deadline.remove(i);
                    }
                }
                Op::Advance(d) => now += d,
                Op::Sweep => {
                    let first = r.expire_sweep(now);
                    let bytes = r.canonical_bytes();
                    prop_assert!(r.expire_sweep(now).is_empty());
                    prop_assert_eq!(bytes, r.canonical_bytes());
                    for id in first {
                        let i: usize = id[1..].parse().unwrap();
                        prop_assert!(deadline.get(&i).is_some_and(|d| *d <= now));
                    }
                }
            }
        }
        let got: BTreeSet<String> = r.lookup_text(&q.sql(), class, now).unwrap().into_iter().map(|p| p.component_id).collect();
        let want: BTreeSet<String> = deadline
            .iter()
            .filter(|(i, d)| **d > now && ps[**i].ty.supports(class) && ps[**i].could_answer(&q))
            .map(|(i, _)| format!("p{i}"))
            .collect();
        prop_assert_eq!(got, want, "query {}", q.sql());
    }

    /// A new producer notifies exactly the live mastered consumers whose
    /// query it could answer in their class.
    #[test]
    fn notifications_match_model(
        cs in prop::collection::vec((query(), class_strategy()), 0..6),
        p in producer_strategy(),
    ) {
        let mut r = registry("r");
        for (i, (q, class)) in cs.iter().enumerate() {
            r.register_consumer(&creg(&format!("c{i}"), q, *class), 0).unwrap();
        }
        let (_, notes) = r.register_producer(&reg("p", &p, 1000, 1), 10).unwrap();
        let got: BTreeSet<String> = notes.into_iter().map(|n| n.consumer.component_id).collect();
        let want: BTreeSet<String> = cs
            .iter()
            .enumerate()
            .filter(|(_, (q, class))| p.ty.supports(*class) && p.could_answer(q))
            .map(|(i, _)| format!("c{i}"))
            .collect();
        prop_assert_eq!(got, want);
        // same incarnation again: nothing new
        let (_, again) = r.register_producer(&reg("p", &p, 1000, 1), 20).unwrap();
        prop_assert!(again.is_empty());
    }

    /// Replicas converge once operations stop and every pair has synced.
    #[test]
    fn replicas_converge(
        steps in prop::collection::vec((0..3usize, 0..5usize, 0..4u8, 0..3usize, 1i64..400), 1..80),
        p in producer_strategy(),
    ) {
        let mut rs: Vec<Registry> = (0..3).map(|i| registry(&format!("r{i}"))).collect();
        let mut now = 0;
        for (at, comp, what, peer, dt) in &steps {
            now += dt;
            let id = format!("p{comp}");
            match what {
                0 => {
                    rs[*at].register_producer(&reg(&id, &p, 1000, *comp as u64), now).unwrap();
                }
                1 => {
                    let _ = rs[*at].heartbeat(&id, now);
                }
                2 => {
                    let _ = rs[*at].unregister(&id, now);
                }
                _ => {
                    if peer != at {
                        let snap = rs[*at].snapshot();
                        rs[*peer].apply_sync(&snap, now).unwrap();
                    }
                    rs[*at].expire_sweep(now);
                }
            }
        }
        now += 1;
        for r in rs.iter_mut() {
            r.expire_sweep(now);
        }
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    let snap = rs[a].snapshot();
                    rs[b].apply_sync(&snap, now).unwrap();
                }
            }
        }
        let first = rs[0].canonical_bytes();
        prop_assert!(rs.iter().all(|r| r.canonical_bytes() == first));
    }

    /// Version counters strictly increase per master.
    #[test]
    fn versions_increase(n in 1usize..30) {
        let mut r = registry("r");
        let p = P { ty: ProducerType::Stream, ty_col: None, site: None };
        let mut last = 0;
        for i in 0..n {
            r.register_producer(&reg("p", &p, 1000, 1), i as i64 * 10).unwrap();
            let v = r.producers(i as i64 * 10)[0].version.counter;
            prop_assert!(v > last);
            last = v;
        }
    }
}
