use serde::{Deserialize, Serialize};

use crate::model::Tuple;
use crate::sql::{parse_create_table, TableDefinition, Value};

pub const MONITOR_TABLE: &str = "rgma_monitor";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    ResponseTimeMs,
    Available,
    InfoAgeMs,
    ArchiverLag,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::ResponseTimeMs => "responseTimeMs",
            Metric::Available => "available",
            Metric::InfoAgeMs => "infoAgeMs",
            Metric::ArchiverLag => "archiverLag",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        [Metric::ResponseTimeMs, Metric::Available, Metric::InfoAgeMs, Metric::ArchiverLag]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

/// One self-monitoring observation, published like any other tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfMonitoringRecord {
    pub component: String,
    pub metric: Metric,
    pub value: f64,
    pub ts: i64,
}

impl SelfMonitoringRecord {
    pub fn new(component: &str, metric: Metric, value: f64, ts: i64) -> Self {
        SelfMonitoringRecord { component: component.to_string(), metric, value, ts }
    }

    pub fn to_tuple(&self) -> Tuple {
        Tuple::new(
            &monitor_table(),
            vec![
                Value::Str(self.component.clone()),
                Value::Str(self.metric.name().into()),
                Value::Real(self.value),
                Value::Timestamp(self.ts),
            ],
        )
        .expect("monitor rows match the monitor table")
    }

    pub fn from_tuple(t: &Tuple) -> Option<Self> {
        match t.values() {
            [Value::Str(c), Value::Str(m), Value::Real(v), ts] => Some(SelfMonitoringRecord {
                component: c.clone(),
                metric: Metric::parse(m)?,
                value: *v,
                ts: ts.as_i64()?,
            }),
            _ => None,
        }
    }
}

/// The reserved table monitoring records are published to.
pub fn monitor_table() -> TableDefinition {
    parse_create_table(
        "CREATE TABLE rgma_monitor (component STRING, metric STRING, value REAL, ts TIMESTAMP)",
        &["component", "metric"],
    )
    .expect("monitor table definition is valid")
}

/// Service and ServiceStatus: what runs where, and whether it is up.
pub fn demo_schema() -> Vec<TableDefinition> {
    vec![
        parse_create_table("CREATE TABLE Service (uri STRING, type STRING, site STRING, ts TIMESTAMP)", &["uri"])
            .expect("demo schema"),
        parse_create_table(
            "CREATE TABLE ServiceStatus (uri STRING, site STRING, up INT, load REAL, ts TIMESTAMP)",
            &["uri"],
        )
        .expect("demo schema"),
    ]
}
