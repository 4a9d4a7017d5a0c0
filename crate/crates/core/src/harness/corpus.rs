//! Checked-in statement corpus.
//!
//! One case per line: `<expect> <mode> <text>`. `expect` is `ok` or an
//! error kind (`syntax`, `schema`, `type`, `unsupported`). `mode` is
//! `stmt`, `create:<key,..>`, `view:<table>` or `cond:<table>`. Tables
//! created by passing `create` cases join the catalog for later lines.
//! Blank lines and lines starting with `#` are skipped.

use crate::sql::{parse_condition, parse_statement, parse_view, Catalog, SqlError, Statement};

use super::record::{demo_schema, monitor_table};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusCase {
    pub line: usize,
    pub text: String,
    pub expected: String,
    pub got: String,
}

impl CorpusCase {
    pub fn passed(&self) -> bool {
        self.expected == self.got
    }
}

fn outcome<T>(r: &Result<T, SqlError>) -> String {
    match r {
        Ok(_) => "ok",
        Err(SqlError::Syntax(_)) => "syntax",
        Err(SqlError::Schema(_)) => "schema",
        Err(SqlError::Type(_)) => "type",
        Err(SqlError::Unsupported(_)) => "unsupported",
    }
    .to_string()
}

/// Runs every case against the demo and monitor schemas. Malformed corpus
/// lines are reported as failing cases with `got = "bad line"`.
pub fn run_corpus(corpus: &str) -> Vec<CorpusCase> {
    let mut catalog = Catalog::new();
    for t in demo_schema().into_iter().chain([monitor_table()]) {
        catalog.declare(t).expect("base schema");
    }
    let mut cases = vec![];
    for (i, raw) in corpus.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(3, ' ');
        let (Some(expected), Some(mode)) = (parts.next(), parts.next()) else {
            cases.push(CorpusCase { line: i + 1, text: line.into(), expected: "ok".into(), got: "bad line".into() });
            continue;
        };
        let text = parts.next().unwrap_or("");
        let got = match mode.split_once(':').unwrap_or((mode, "")) {
            ("stmt", _) => {
                let r = parse_statement(text, &catalog, &[]);
                if let Ok(Statement::CreateTable(def)) = &r {
                    let _ = catalog.declare(def.clone());
                }
                outcome(&r)
            }
            ("create", keys) => {
                let keys: Vec<&str> = keys.split(',').filter(|k| !k.is_empty()).collect();
                let r = parse_statement(text, &catalog, &keys);
                if let Ok(Statement::CreateTable(def)) = &r {
                    let _ = catalog.declare(def.clone());
                }
                outcome(&r)
            }
            ("view", table) => match catalog.require(table) {
                Ok(schema) => outcome(&parse_view(text, schema)),
                Err(e) => outcome::<()>(&Err(e)),
            },
            ("cond", table) => match catalog.require(table) {
                Ok(schema) => outcome(&parse_condition(text, schema)),
                Err(e) => outcome::<()>(&Err(e)),
            },
            _ => "bad line".into(),
        };
        cases.push(CorpusCase { line: i + 1, text: text.into(), expected: expected.into(), got });
    }
    cases
}
