//! Property tests for the SQL subset against brute-force oracles over small
//! finite domains.

use proptest::prelude::*;

use rgma_core::model::{history_query, Tuple, TupleRow};
use rgma_core::sql::*;

fn schema() -> TableDefinition {
    parse_create_table("CREATE TABLE T (a INT, b INT, c STRING, ts TIMESTAMP)", &["a"]).unwrap()
}

/// Oracle-side condition; evaluated directly, rendered to SQL for the parser.
#[derive(Debug, Clone)]
enum Tc {
    Const(bool),
    Int { col: usize, offset: i64, op: u8, lit: i64 },
    Str { op: u8, lit: &'static str },
    Cols { op: u8 },
    And(Vec<Tc>),
    Or(Vec<Tc>),
    Not(Box<Tc>),
}

const OPS: [&str; 6] = ["=", "<>", "<", "<=", ">", ">="];
const STRS: [&str; 3] = ["x", "y", "z"];
const INT_COLS: [&str; 2] = ["a", "b"];

fn holds(op: u8, o: std::cmp::Ordering) -> bool {
    use std::cmp::Ordering::*;
    match op {
        0 => o == Equal,
        1 => o != Equal,
        2 => o == Less,
        3 => o != Greater,
        4 => o == Greater,
        _ => o != Less,
    }
}

impl Tc {
    fn sql(&self) -> String {
        self.sql_in("")
    }

    /// Renders with every column qualified by `q` (when non-empty).
    fn sql_in(&self, q: &str) -> String {
        let qc = |c: &str| if q.is_empty() { c.to_string() } else { format!("{q}.{c}") };
        match self {
            Tc::Const(b) => if *b { "TRUE" } else { "FALSE" }.into(),
            Tc::Int { col, offset, op, lit } => {
                let lhs = match offset {
                    0 => qc(INT_COLS[*col]),
                    o if *o > 0 => format!("{} + {o}", qc(INT_COLS[*col])),
                    o => format!("{} - {}", qc(INT_COLS[*col]), -o),
                };
                format!("{lhs} {} {lit}", OPS[*op as usize])
            }
            Tc::Str { op, lit } => format!("{} {} '{lit}'", qc("c"), OPS[*op as usize]),
            Tc::Cols { op } => format!("{} {} {}", qc("a"), OPS[*op as usize], qc("b")),
            Tc::And(v) => v.iter().map(|c| format!("({})", c.sql_in(q))).collect::<Vec<_>>().join(" AND "),
            Tc::Or(v) => v.iter().map(|c| format!("({})", c.sql_in(q))).collect::<Vec<_>>().join(" OR "),
            Tc::Not(c) => format!("NOT ({})", c.sql_in(q)),
        }
    }

    fn eval(&self, a: i64, b: i64, c: &str) -> bool {
        match self {
            Tc::Const(x) => *x,
            Tc::Int { col, offset, op, lit } => holds(*op, ([a, b][*col] + offset).cmp(lit)),
            Tc::Str { op, lit } => holds(*op, c.cmp(lit)),
            Tc::Cols { op } => holds(*op, a.cmp(&b)),
            Tc::And(v) => v.iter().all(|x| x.eval(a, b, c)),
            Tc::Or(v) => v.iter().any(|x| x.eval(a, b, c)),
            Tc::Not(x) => !x.eval(a, b, c),
        }
    }
}

fn leaf(col_cmp: bool, arith: bool) -> BoxedStrategy<Tc> {
    let int = (0..2usize, if arith { -1i64..=1 } else { 0i64..=0 }, 0u8..6, 0i64..3)
        .prop_map(|(col, offset, op, lit)| Tc::Int { col, offset, op, lit });
    let s = (0u8..6, 0..3usize).prop_map(|(op, i)| Tc::Str { op, lit: STRS[i] });
    let mut options = vec![int.boxed(), s.boxed(), any::<bool>().prop_map(Tc::Const).boxed()];
    if col_cmp {
        options.push((0u8..6).prop_map(|op| Tc::Cols { op }).boxed());
    }
    proptest::strategy::Union::new(options).boxed()
}

fn cond(col_cmp: bool, arith: bool) -> impl Strategy<Value = Tc> {
    leaf(col_cmp, arith).prop_recursive(3, 16, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 1..4).prop_map(Tc::And),
            prop::collection::vec(inner.clone(), 1..4).prop_map(Tc::Or),
            inner.prop_map(|c| Tc::Not(Box::new(c))),
        ]
    })
}

/// Two values in every gap around the literals 0..=2, enough for a < b.
const INT_DOMAIN: [i64; 7] = [-2, -1, 0, 1, 2, 3, 4];
const STR_DOMAIN: [&str; 7] = ["", "x", "xx", "y", "yy", "z", "zz"];

fn tuple(a: i64, b: i64, c: &str) -> Tuple {
    Tuple::new(&schema(), vec![Value::Int(a), Value::Int(b), Value::Str(c.into()), Value::Timestamp(0)]).unwrap()
}

fn domain() -> impl Iterator<Item = (i64, i64, &'static str)> {
    INT_DOMAIN.into_iter().flat_map(|a| INT_DOMAIN.into_iter().flat_map(move |b| STR_DOMAIN.into_iter().map(move |c| (a, b, c))))
}

fn catalog() -> Catalog {
    let mut c = Catalog::new();
    c.declare(schema()).unwrap();
    c.declare(parse_create_table("CREATE TABLE U (a INT, d STRING, ts TIMESTAMP)", &["a", "d"]).unwrap()).unwrap();
    c
}

fn view_strategy() -> impl Strategy<Value = ViewPredicate> {
    (prop::option::of(0i64..3), prop::option::of(0i64..3), prop::option::of(0..3usize)).prop_map(|(a, b, c)| {
        let mut atoms = vec![];
        if let Some(a) = a {
            atoms.push(("a".to_string(), Value::Int(a)));
        }
        if let Some(b) = b {
            atoms.push(("b".to_string(), Value::Int(b)));
        }
        if let Some(c) = c {
            atoms.push(("c".to_string(), Value::Str(STRS[c].into())));
        }
        ViewPredicate::new(atoms).unwrap()
    })
}

fn in_view(v: &ViewPredicate, a: i64, b: i64, c: &str) -> bool {
    v.atoms().iter().all(|(col, val)| match col.as_str() {
        "a" => val == &Value::Int(a),
        "b" => val == &Value::Int(b),
        _ => val == &Value::Str(c.into()),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn evaluate_agrees_with_truth_table(c in cond(true, true)) {
        let parsed = parse_condition(&c.sql(), &schema()).unwrap();
        let s = schema();
        for (a, b, cv) in domain() {
            let t = tuple(a, b, cv);
            let got = evaluate(&parsed, &TupleRow { schema: &s, tuple: &t }, None).unwrap();
            prop_assert_eq!(got, c.eval(a, b, cv), "{} at a={} b={} c={:?}", c.sql(), a, b, cv);
        }
    }

    #[test]
    fn select_parse_render_parse(c in cond(true, true), cols in prop::option::of(prop::collection::btree_set(0..4usize, 1..4))) {
        let names = ["a", "b", "c", "ts"];
        let proj = match &cols {
            None => "*".to_string(),
            Some(s) => s.iter().map(|i| names[*i]).collect::<Vec<_>>().join(", "),
        };
        let text = format!("SELECT {proj} FROM T WHERE {}", c.sql());
        let q1 = parse_select(&text, &catalog()).unwrap();
        let rendered = q1.to_string();
        let q2 = parse_select(&rendered, &catalog()).unwrap();
        prop_assert_eq!(&q1, &q2);
        prop_assert_eq!(rendered, q2.to_string());
    }

    #[test]
    fn join_select_round_trips(c in cond(false, false)) {
        let text = format!("SELECT T.a, U.d FROM T, U WHERE T.a = U.a AND ({})", c.sql_in("T"));
        let q1 = parse_select(&text, &catalog()).unwrap();
        let q2 = parse_select(&q1.to_string(), &catalog()).unwrap();
        prop_assert_eq!(q1, q2);
    }

    #[test]
    fn create_table_round_trips(
        cols in prop::collection::btree_map("[a-z][a-z0-9_]{0,6}", 0..3usize, 1..6),
        key_mask in 1u32..64,
    ) {
        prop_assume!(!cols.contains_key("ts"));
        let names: Vec<&String> = cols.keys().filter(|n| !is_keyword(n)).collect();
        prop_assume!(!names.is_empty());
        let types = ["INT", "REAL", "STRING"];
        let mut body: Vec<String> = names.iter().map(|n| format!("{n} {}", types[cols[*n]])).collect();
        body.push("ts TIMESTAMP".into());
        let key: Vec<&str> = names.iter().enumerate().filter(|(i, _)| key_mask & (1 << i) != 0).map(|(_, n)| n.as_str()).collect();
        let key = if key.is_empty() { vec![names[0].as_str()] } else { key };
        let text = format!("CREATE TABLE Gen ({})", body.join(", "));
        let t1 = parse_create_table(&text, &key).unwrap();
        let t2 = parse_create_table(&t1.to_sql(), &key).unwrap();
        prop_assert_eq!(t1, t2);
    }

    #[test]
    fn insert_round_trips(a in any::<i64>(), r in -1.0e12f64..1.0e12, s in "[ -~]{0,12}", ts in 0i64..i64::MAX) {
        let schema = parse_create_table("CREATE TABLE R (a INT, r REAL, s STRING, ts TIMESTAMP)", &["a"]).unwrap();
        let t = Tuple::new(&schema, vec![Value::Int(a), Value::Real(r), Value::Str(s), Value::Timestamp(ts)]).unwrap();
        let back = parse_insert(&t.to_insert_sql(&schema), &schema).unwrap();
        prop_assert_eq!(back, t);
    }

    /// Exclusion is sound: a witnessing tuple forces `relevant`.
    /// Over this domain the converse holds too.
    #[test]
    fn relevance_matches_enumeration(v in view_strategy(), c in cond(true, false)) {
        let q = parse_select(&format!("SELECT * FROM T WHERE {}", c.sql()), &catalog()).unwrap();
        let witness = domain().any(|(a, b, cv)| in_view(&v, a, b, cv) && c.eval(a, b, cv));
        let got = relevant(&v, &q, &schema()).unwrap();
        prop_assert_eq!(got, witness, "view {} query {}", v, c.sql());
    }

    #[test]
    fn residual_equals_original_on_view_tuples(v in view_strategy(), c in cond(true, true)) {
        let s = schema();
        let original = parse_condition(&c.sql(), &s).unwrap();
        let residual = substitute_view(&original, None, &v);
        for (a, b, cv) in domain().filter(|(a, b, cv)| in_view(&v, *a, *b, cv)) {
            let t = tuple(a, b, cv);
            let row = TupleRow { schema: &s, tuple: &t };
            prop_assert_eq!(evaluate(&residual, &row, None).unwrap(), evaluate(&original, &row, None).unwrap());
        }
    }

    #[test]
    fn history_join_matches_nested_loop(
        left in prop::collection::vec((0i64..4, 0i64..3, 0..3usize), 0..12),
        right in prop::collection::vec((0i64..4, 0..3usize), 0..12),
        lim in 0i64..3,
    ) {
        let cat = catalog();
        let t = cat.get("t").unwrap().clone();
        let u = cat.get("u").unwrap().clone();
        let lt: Vec<Tuple> = left.iter().map(|(a, b, c)| tuple(*a, *b, STRS[*c])).collect();
        let rt: Vec<Tuple> = right
            .iter()
            .map(|(a, d)| Tuple::new(&u, vec![Value::Int(*a), Value::Str(STRS[*d].into()), Value::Timestamp(1)]).unwrap())
            .collect();
        let q = parse_select(&format!("SELECT * FROM T x, U y WHERE x.a = y.a AND x.b >= {lim} AND y.d <> 'z'"), &cat).unwrap();
        let got = history_query(&q, &[(&t, &lt), (&u, &rt)], 0).unwrap();
        let mut want = vec![];
        for l in &lt {
            for r in &rt {
                let (la, lb) = (l.values()[0].as_i64().unwrap(), l.values()[1].as_i64().unwrap());
                if la == r.values()[0].as_i64().unwrap() && lb >= lim && r.values()[1].as_str() != Some("z") {
                    want.push(vec![l.clone(), r.clone()]);
                }
            }
        }
        let key = |r: &Vec<Tuple>| format!("{r:?}");
        let mut got: Vec<String> = got.iter().map(key).collect();
        let mut want: Vec<String> = want.iter().map(key).collect();
        got.sort();
        want.sort();
        prop_assert_eq!(got, want);
    }
}

fn is_keyword(s: &str) -> bool {
    parse_create_table(&format!("CREATE TABLE K ({s} INT, ts TIMESTAMP)"), &[s]).is_err()
}

#[test]
fn view_atoms_must_be_distinct() {
    assert!(ViewPredicate::new(vec![("a".into(), Value::Int(1)), ("A".into(), Value::Int(2))]).is_err());
    assert!(ViewPredicate::new(vec![]).unwrap().is_universal());
}
