//! Tuples and the stores that hold them: latest-value, history, cleanup and
//! the table-file format they persist to.

mod cleanup;
mod history;
mod latest;
mod table_file;
mod tuple;

pub use cleanup::{apply_cleanup, Cleanable, CleanupRule, RetentionKind};
pub use history::{history_query, HistoryStore, Row};
pub use latest::{latest_merge, LatestStore};
pub use table_file::{Durability, RecordFile};
pub use tuple::{DefiningKeyValue, JoinedRow, RowContext, Tuple, TupleRow};

use crate::sql::SqlError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("defining keys differ")]
    KeyMismatch,
    #[error("tuple for table {got} given to a store of table {expected}")]
    WrongTable { expected: String, got: String },
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("table file: {0}")]
    Format(String),
}
