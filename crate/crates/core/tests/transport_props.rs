use proptest::prelude::*;

use rgma_core::model::Tuple;
use rgma_core::registry::{ProducerType, QueryClass};
use rgma_core::sql::{parse_create_table, Value, ViewPredicate};
use rgma_core::transport::*;

fn message() -> impl Strategy<Value = Message> {
    let schema = parse_create_table("CREATE TABLE T (k STRING, v REAL, ts TIMESTAMP)", &["k"]).unwrap();
    let tuple = ("[a-z\u{e9}\"\\\\]{0,6}", -1e6f64..1e6, 0i64..1 << 50)
        .prop_map(move |(k, v, ts)| Tuple::new(&schema, vec![Value::Str(k), Value::Real(v), Value::Timestamp(ts)]).unwrap());
    let body = prop_oneof![
        "[a-z]{1,8}".prop_map(|c| Body::Heartbeat { component_id: c }),
        ("[a-z]{1,8}", prop::collection::vec(tuple.clone(), 0..4)).prop_map(|(p, tuples)| Body::Insert { producer: p, tuples }),
        (prop::collection::vec(tuple, 0..3), 0u64..1000).prop_map(|(tuples, seq)| Body::TupleBatch {
            rows: vec![ResultRow { producer: "p".into(), epoch: 7, seq, backlog: seq % 2 == 0, tuples }]
        }),
        "[ -~]{0,30}".prop_map(|q| Body::Lookup { query: q, query_class: QueryClass::Latest }),
        "[ -~]{0,20}".prop_map(|m| Body::error(ErrorKind::Syntax, m)),
        (0u64..u64::MAX).prop_map(|n| Body::Ack(AckPayload::Inserted { count: 1, last_seq: n })),
        Just(Body::RegisterProducer(ProducerRegistration {
            component_id: "p".into(),
            endpoint: Endpoint::new("h", 9, "p"),
            producer_type: ProducerType::ResilientStream,
            table: "t".into(),
            view: ViewPredicate::new(vec![("k".into(), Value::Str("a".into()))]).unwrap(),
            interval_ms: 1000,
            epoch: 3,
        })),
        Just(Body::EndOfResults { failures: vec![] }),
    ];
    (any::<u64>(), body).prop_map(|(id, body)| Message::new(id, body))
}

#[derive(Debug, Clone)]
enum Mutation {
    Flip(usize, u8),
    Set(usize, u8),
    Insert(usize, u8),
    Delete(usize),
    Truncate(usize),
}

fn mutation() -> impl Strategy<Value = Mutation> {
    prop_oneof![
        (any::<usize>(), 1u8..=255).prop_map(|(i, b)| Mutation::Flip(i, b)),
        (any::<usize>(), any::<u8>()).prop_map(|(i, b)| Mutation::Set(i, b)),
        (any::<usize>(), any::<u8>()).prop_map(|(i, b)| Mutation::Insert(i, b)),
        any::<usize>().prop_map(Mutation::Delete),
        any::<usize>().prop_map(Mutation::Truncate),
    ]
}

fn apply(bytes: &mut Vec<u8>, m: &Mutation) {
    let n = bytes.len();
    match *m {
        Mutation::Flip(i, b) => bytes[i % n] ^= b,
        Mutation::Set(i, b) => bytes[i % n] = b,
        Mutation::Insert(i, b) => bytes.insert(i % (n + 1), b),
        Mutation::Delete(i) => {
            bytes.remove(i % n);
        }
        Mutation::Truncate(i) => bytes.truncate(i % n),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn frames_round_trip(m in message()) {
        prop_assert_eq!(unframe(&frame(&m).unwrap()).unwrap(), m);
    }

    /// A mutated frame decodes to the original message or fails as a frame
    /// error; it never yields a different message.
    #[test]
    fn mutated_frames_never_misparse(m in message(), muts in prop::collection::vec(mutation(), 1..4)) {
        let mut bytes = frame(&m).unwrap();
        for mu in &muts {
            if bytes.is_empty() {
                break;
            }
            apply(&mut bytes, mu);
        }
        match unframe(&bytes) {
            Ok(got) => prop_assert_eq!(got, m),
            Err(e) => prop_assert!(matches!(e, TransportError::Frame(_)), "{:?}", e),
        }
    }

    #[test]
    fn random_bytes_are_rejected(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        prop_assert!(unframe(&bytes).is_err());
    }

    #[test]
    fn schedule_keeps_a_margin(ms in 1u64..10_000_000) {
        let s = heartbeat_schedule(TerminationInterval::new(ms).unwrap());
        prop_assert!(s >= 1);
        prop_assert!(s <= ms.max(1));
        if ms > 200 {
            prop_assert!(s < ms);
            prop_assert!(s <= ms / 2 || s == 100);
        }
    }
}

#[test]
fn unknown_kind_is_a_protocol_error() {
    // a well-formed frame whose kind is not part of the protocol
    let mut v = serde_json::json!({"request_id": 1, "kind": "Teleport", "body": null});
    let crc = crc32fast::hash(&serde_json::to_vec(&v).unwrap());
    v.as_object_mut().unwrap().insert("crc".into(), crc.into());
    let body = serde_json::to_vec(&v).unwrap();
    let mut bytes = (body.len() as u32).to_be_bytes().to_vec();
    bytes.extend(body);
    assert!(matches!(unframe(&bytes), Err(TransportError::Protocol(_))));
}
