//! Relational grid monitoring core: the SQL subset, tuple stores, the wire
//! protocol, and the registry, producer, mediator and archiver state
//! machines, plus a deterministic scenario harness.

pub mod archiver;
pub mod clock;
pub mod harness;
pub mod mediator;
pub mod model;
pub mod node;
pub mod producer;
pub mod registry;
pub mod sql;
pub mod transport;

/// Wire error kind for an SQL error.
pub fn sql_error_kind(e: &sql::SqlError) -> transport::ErrorKind {
    match e {
        sql::SqlError::Syntax(_) => transport::ErrorKind::Syntax,
        sql::SqlError::Schema(_) => transport::ErrorKind::Schema,
        sql::SqlError::Type(_) => transport::ErrorKind::Type,
        sql::SqlError::Unsupported(_) => transport::ErrorKind::Unsupported,
    }
}
