//! Scenario runner and self-monitoring.

mod corpus;
mod record;
mod scenario;
mod sim;
mod summary;

pub use corpus::{run_corpus, CorpusCase};
pub use record::{demo_schema, monitor_table, Metric, SelfMonitoringRecord, MONITOR_TABLE};
pub use scenario::{
    registry_name, ArchivedSetup, ArchiverSetup, ConsumerSetup, Fault, FaultAction, ProducerSetup, RegistrySetup,
    Scenario, ScenarioError, TableSpec, MONITOR_NODE,
};
pub use sim::{run_scenario, ScenarioReport, Simulation};
pub use summary::{percentile, summarize, write_records_csv, write_summary_csv, WindowReport};
