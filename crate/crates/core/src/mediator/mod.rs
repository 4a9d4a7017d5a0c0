//! Consumer-side query engine: classification, planning against registry
//! lookups, result merging and continuous session bookkeeping. Fetching is
//! left to the caller so the same logic runs over sockets or in simulation.

mod session;

pub use session::{ContinuousSession, Subscribe};

use std::collections::BTreeMap;

use crate::model::DefiningKeyValue;
use crate::registry::{ProducerEntry, QueryClass};
use crate::sql::{substitute_view, Catalog, Condition, Query, SqlError};
use crate::transport::{Endpoint, ErrorKind, ProducerFailure, ResultRow, StartQuery};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MediatorError {
    #[error("{0:?} queries cannot {1}")]
    UnsupportedQueryClass(QueryClass, &'static str),
    #[error(transparent)]
    Sql(#[from] SqlError),
}

impl MediatorError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            MediatorError::UnsupportedQueryClass(..) => ErrorKind::UnsupportedQueryClass,
            MediatorError::Sql(e) => crate::sql_error_kind(e),
        }
    }
}

/// Continuous queries filter one stream; latest and history accept joins.
pub fn classify(query: &Query, requested: QueryClass) -> Result<QueryClass, MediatorError> {
    if requested == QueryClass::Continuous && query.is_join() {
        return Err(MediatorError::UnsupportedQueryClass(QueryClass::Continuous, "join tables"));
    }
    Ok(requested)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergePolicy {
    Union,
    LatestPerKey,
}

/// One endpoint to contact and the producer instances there that answer.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub endpoint: Endpoint,
    pub producers: Vec<ProducerEntry>,
    /// Query condition simplified under the producer's view (single-table
    /// queries only).
    pub residual: Option<Condition>,
}

impl Target {
    pub fn label(&self) -> String {
        self.producers.iter().map(|p| p.component_id.as_str()).collect::<Vec<_>>().join("+")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryPlan {
    pub query_text: String,
    pub query: Query,
    pub query_class: QueryClass,
    pub targets: Vec<Target>,
    pub merge: MergePolicy,
}

impl QueryPlan {
    /// The NoProducers signal.
    pub fn no_producers(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn request(&self, target: &Target) -> StartQuery {
        StartQuery {
            query: self.query_text.clone(),
            query_class: self.query_class,
            producers: target.producers.iter().map(|p| p.component_id.clone()).collect(),
            residual: target.residual.clone(),
            resume_after: None,
        }
    }
}

/// Builds a plan from the registry's lookup result for this query and class.
pub fn plan(
    query_text: &str,
    query: &Query,
    class: QueryClass,
    candidates: &[ProducerEntry],
) -> Result<QueryPlan, MediatorError> {
    let class = classify(query, class)?;
    let usable = candidates.iter().filter(|p| p.producer_type.supports(class) && query.binding_of(&p.table).is_some());
    let targets = if !query.is_join() {
        usable
            .map(|p| Target {
                endpoint: p.endpoint.clone(),
                producers: vec![p.clone()],
                residual: query
                    .condition
                    .as_ref()
                    .map(|c| substitute_view(c, query.binding_of(&p.table), &p.view).unqualified()),
            })
            .collect()
    } else {
        // a join is answered where every table is served by the same endpoint
        let mut by_address: BTreeMap<String, Vec<ProducerEntry>> = BTreeMap::new();
        for p in usable {
            by_address.entry(p.endpoint.address()).or_default().push(p.clone());
        }
        by_address
            .into_values()
            .filter(|ps| query.tables.iter().all(|t| ps.iter().any(|p| p.table == t.table)))
            .map(|ps| Target { endpoint: ps[0].endpoint.clone(), producers: ps, residual: None })
            .collect()
    };
    Ok(QueryPlan {
        query_text: query_text.to_string(),
        query: query.clone(),
        query_class: class,
        targets,
        merge: if class == QueryClass::Latest { MergePolicy::LatestPerKey } else { MergePolicy::Union },
    })
}

/// Result of a one-shot query.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Outcome {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<ProducerFailure>,
    pub no_producers: bool,
}

/// Per-target fetch result, as reported by whoever contacted the target.
pub type TargetResult = (String, Result<Vec<ResultRow>, String>);

fn split(results: Vec<TargetResult>) -> (Vec<ResultRow>, Vec<ProducerFailure>) {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (label, r) in results {
        match r {
            Ok(rs) => rows.extend(rs),
            Err(message) => failures.push(ProducerFailure { producer: label, message }),
        }
    }
    (rows, failures)
}

/// Union of every target's rows; duplicates across producers are kept.
pub fn execute_history(plan: &QueryPlan, results: Vec<TargetResult>) -> Outcome {
    let (rows, failures) = split(results);
    Outcome { rows, failures, no_producers: plan.no_producers() }
}

/// One row per defining key (per combination of keys for joins): the most
/// recent, ties going to the lexicographically smallest producer id.
pub fn execute_latest(plan: &QueryPlan, catalog: &Catalog, results: Vec<TargetResult>) -> Outcome {
    let (rows, failures) = split(results);
    Outcome { rows: merge_latest(rows, catalog), failures, no_producers: plan.no_producers() }
}

pub fn merge_latest(rows: Vec<ResultRow>, catalog: &Catalog) -> Vec<ResultRow> {
    let mut best: BTreeMap<Vec<DefiningKeyValue>, ResultRow> = BTreeMap::new();
    for row in rows {
        let key: Vec<DefiningKeyValue> = row
            .tuples
            .iter()
            .map(|t| match catalog.get(t.table()) {
                Some(schema) => t.key(schema),
                None => DefiningKeyValue { table: t.table().to_string(), key_values: t.values().to_vec() },
            })
            .collect();
        match best.get(&key) {
            Some(cur) if !beats(&row, cur) => {}
            _ => {
                best.insert(key, row);
            }
        }
    }
    best.into_values().collect()
}

fn beats(a: &ResultRow, b: &ResultRow) -> bool {
    let ta: Vec<i64> = a.tuples.iter().map(|t| t.timestamp()).collect();
    let tb: Vec<i64> = b.tuples.iter().map(|t| t.timestamp()).collect();
    match ta.cmp(&tb) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => (&a.producer, &a.tuples) < (&b.producer, &b.tuples),
    }
}

#[cfg(test)]
mod tests;
