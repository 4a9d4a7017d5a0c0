use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::Tuple;
use crate::sql::{ColumnType, TableDefinition, Value, ViewPredicate};

/// Synthetic load: one tuple every `period_ms`, cycling through `keys`
/// defining keys, consistent with the producer's view. Timestamps strictly
/// increase.
#[derive(Debug, Clone)]
pub struct Publisher {
    pub period_ms: u64,
    pub keys: usize,
    pub stop_at: Option<i64>,
    /// Stop after this many tuples.
    pub limit: Option<u64>,
    rng: ChaCha8Rng,
    last_ts: i64,
    count: u64,
}

impl Publisher {
    pub fn new(period_ms: u64, keys: usize, seed: u64) -> Self {
        Publisher {
            period_ms: period_ms.max(1),
            keys: keys.max(1),
            stop_at: None,
            limit: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last_ts: i64::MIN,
            count: 0,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn exhausted(&self, now: i64) -> bool {
        self.stop_at.is_some_and(|s| now >= s) || self.limit.is_some_and(|l| self.count >= l)
    }

    pub fn next_tuple(&mut self, producer: &str, table: &TableDefinition, view: &ViewPredicate, now: i64) -> Tuple {
        let ts = now.max(self.last_ts.saturating_add(1));
        self.last_ts = ts;
        let key_no = self.rng.gen_range(0..self.keys);
        let keys = table.key_indices();
        let values = table
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if let Some(v) = view.binding(&c.name) {
                    return v.clone();
                }
                if i == table.timestamp_index() {
                    return Value::Timestamp(ts);
                }
                let is_key = keys.contains(&i);
                match c.ty {
                    ColumnType::String if is_key => Value::Str(format!("{producer}-{}-{key_no}", c.name)),
                    ColumnType::Int | ColumnType::Timestamp if is_key => Value::Int(key_no as i64),
                    ColumnType::Real if is_key => Value::Real(key_no as f64),
                    ColumnType::String => Value::Str(format!("v{}", self.rng.gen_range(0..3))),
                    ColumnType::Int => Value::Int(self.rng.gen_range(0..2)),
                    ColumnType::Real => Value::Real((self.rng.gen_range(0..1000) as f64) / 1000.0),
                    ColumnType::Timestamp => Value::Timestamp(ts),
                }
            })
            .collect();
        self.count += 1;
        Tuple::new(table, values).expect("generated values follow the schema")
    }
}
