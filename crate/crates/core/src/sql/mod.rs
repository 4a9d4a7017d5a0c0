//! The SQL subset: CREATE TABLE, INSERT and SELECT, plus the predicate
//! algebra used to route queries to producers and filter streams.
//!
//! The grammar is documented in `docs/grammar.md`.

mod ast;
mod catalog;
mod eval;
mod lexer;
mod parser;
mod satisfy;
mod types;

pub use ast::{
    ArithOp, CmpOp, ColumnRef, Condition, Expr, Projection, Query, TableRef, ViewPredicate,
};
pub use catalog::Catalog;
pub use eval::{eval_expr, evaluate, evaluate_opt};
pub use parser::{parse_condition, parse_create_table, parse_insert, parse_select, parse_statement, parse_view, Statement};
pub use satisfy::{relevant, satisfiable, simplify, substitute_view};
pub use types::{canonical_ident, Column, ColumnType, TableDefinition, Value, NOW};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum SqlError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}
