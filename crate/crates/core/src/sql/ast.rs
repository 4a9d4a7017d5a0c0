use std::fmt;

use serde::{Deserialize, Serialize};

use super::types::{canonical_ident, Value};
use super::SqlError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnRef {
    /// Table binding (alias or table name). Always set on resolved queries.
    pub qualifier: Option<String>,
    pub column: String,
}

impl ColumnRef {
    pub fn bare(column: &str) -> Self {
        ColumnRef { qualifier: None, column: canonical_ident(column) }
    }

    pub fn qualified(qualifier: &str, column: &str) -> Self {
        ColumnRef { qualifier: Some(canonical_ident(qualifier)), column: canonical_ident(column) }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.qualifier {
            Some(q) => write!(f, "{q}.{}", self.column),
            None => f.write_str(&self.column),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Ge => CmpOp::Lt,
        }
    }

    /// Operator with operands swapped: `a < b` is `b > a`.
    pub fn flip(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
            other => other,
        }
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "<>",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArithOp {
    Add,
    Sub,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expr {
    Column(ColumnRef),
    Literal(Value),
    Now,
    Arith { op: ArithOp, left: Box<Expr>, right: Box<Expr> },
}

impl Expr {
    pub fn column(name: &str) -> Expr {
        Expr::Column(ColumnRef::bare(name))
    }

    pub fn lit(v: Value) -> Expr {
        Expr::Literal(v)
    }

    fn visit_columns<'a>(&'a self, out: &mut Vec<&'a ColumnRef>) {
        match self {
            Expr::Column(c) => out.push(c),
            Expr::Arith { left, right, .. } => {
                left.visit_columns(out);
                right.visit_columns(out);
            }
            Expr::Literal(_) | Expr::Now => {}
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Column(c) => write!(f, "{c}"),
            Expr::Literal(v) => f.write_str(&v.to_sql()),
            Expr::Now => f.write_str("NOW"),
            Expr::Arith { op, left, right } => {
                let sym = match op {
                    ArithOp::Add => "+",
                    ArithOp::Sub => "-",
                };
                // left-associative: only a compound right operand needs grouping,
                // and the grammar has no expression parentheses, so the parser
                // never builds one.
                write!(f, "{left} {sym} {right}")
            }
        }
    }
}

/// Boolean expression over comparisons.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    Const(bool),
    Compare { left: Expr, op: CmpOp, right: Expr },
    And(Vec<Condition>),
    Or(Vec<Condition>),
    Not(Box<Condition>),
}

impl Condition {
    pub fn cmp(left: Expr, op: CmpOp, right: Expr) -> Condition {
        Condition::Compare { left, op, right }
    }

    /// `column op literal`
    pub fn atom(column: &str, op: CmpOp, v: Value) -> Condition {
        Condition::cmp(Expr::column(column), op, Expr::Literal(v))
    }

    pub fn and(items: Vec<Condition>) -> Condition {
        match items.len() {
            0 => Condition::Const(true),
            1 => items.into_iter().next().unwrap(),
            _ => Condition::And(items),
        }
    }

    pub fn or(items: Vec<Condition>) -> Condition {
        match items.len() {
            0 => Condition::Const(false),
            1 => items.into_iter().next().unwrap(),
            _ => Condition::Or(items),
        }
    }

    pub fn columns(&self) -> Vec<&ColumnRef> {
        let mut out = Vec::new();
        self.visit(&mut |c| {
            if let Condition::Compare { left, right, .. } = c {
                left.visit_columns(&mut out);
                right.visit_columns(&mut out);
            }
        });
        out
    }

    pub fn mentions_now(&self) -> bool {
        fn has_now(e: &Expr) -> bool {
            match e {
                Expr::Now => true,
                Expr::Arith { left, right, .. } => has_now(left) || has_now(right),
                _ => false,
            }
        }
        let mut found = false;
        self.visit(&mut |c| {
            if let Condition::Compare { left, right, .. } = c {
                found |= has_now(left) || has_now(right);
            }
        });
        found
    }

    fn visit<'a, F: FnMut(&'a Condition)>(&'a self, f: &mut F) {
        f(self);
        match self {
            Condition::And(items) | Condition::Or(items) => items.iter().for_each(|c| c.visit(f)),
            Condition::Not(inner) => inner.visit(f),
            _ => {}
        }
    }

    /// Rewrites every column reference.
    pub fn map_columns<F: Fn(&ColumnRef) -> ColumnRef + Copy>(&self, f: F) -> Condition {
        fn map_expr<F: Fn(&ColumnRef) -> ColumnRef + Copy>(e: &Expr, f: F) -> Expr {
            match e {
                Expr::Column(c) => Expr::Column(f(c)),
                Expr::Arith { op, left, right } => Expr::Arith {
                    op: *op,
                    left: Box::new(map_expr(left, f)),
                    right: Box::new(map_expr(right, f)),
                },
                other => other.clone(),
            }
        }
        match self {
            Condition::Const(b) => Condition::Const(*b),
            Condition::Compare { left, op, right } => {
                Condition::Compare { left: map_expr(left, f), op: *op, right: map_expr(right, f) }
            }
            Condition::And(items) => Condition::And(items.iter().map(|c| c.map_columns(f)).collect()),
            Condition::Or(items) => Condition::Or(items.iter().map(|c| c.map_columns(f)).collect()),
            Condition::Not(inner) => Condition::Not(Box::new(inner.map_columns(f))),
        }
    }

    /// Drops qualifiers, for evaluation against a single table's tuples.
    pub fn unqualified(&self) -> Condition {
        self.map_columns(|c| ColumnRef { qualifier: None, column: c.column.clone() })
    }
}

fn fmt_child(c: &Condition, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match c {
        Condition::And(_) | Condition::Or(_) => write!(f, "({c})"),
        _ => write!(f, "{c}"),
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Const(true) => f.write_str("TRUE"),
            Condition::Const(false) => f.write_str("FALSE"),
            Condition::Compare { left, op, right } => write!(f, "{left} {} {right}", op.symbol()),
            Condition::And(items) | Condition::Or(items) => {
                let sep = if matches!(self, Condition::And(_)) { " AND " } else { " OR " };
                for (i, c) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(sep)?;
                    }
                    fmt_child(c, f)?;
                }
                Ok(())
            }
            Condition::Not(inner) => {
                f.write_str("NOT ")?;
                match inner.as_ref() {
                    Condition::Compare { .. } | Condition::And(_) | Condition::Or(_) => write!(f, "({inner})"),
                    _ => write!(f, "{inner}"),
                }
            }
        }
    }
}

/// Conjunction of `column = literal` atoms that holds for every tuple a
/// producer publishes. The empty predicate covers the whole table.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ViewPredicate {
    atoms: Vec<(String, Value)>,
}

impl ViewPredicate {
    pub fn universal() -> Self {
        ViewPredicate::default()
    }

    pub fn new(atoms: Vec<(String, Value)>) -> Result<Self, SqlError> {
        let mut out: Vec<(String, Value)> = Vec::with_capacity(atoms.len());
        for (col, v) in atoms {
            let col = canonical_ident(&col);
            if out.iter().any(|(c, _)| *c == col) {
                return Err(SqlError::Schema(format!("view binds column '{col}' more than once")));
            }
            out.push((col, v));
        }
        Ok(ViewPredicate { atoms: out })
    }

    pub fn atoms(&self) -> &[(String, Value)] {
        &self.atoms
    }

    pub fn is_universal(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn binding(&self, column: &str) -> Option<&Value> {
        self.atoms.iter().find(|(c, _)| c == column).map(|(_, v)| v)
    }

    pub fn to_condition(&self) -> Condition {
        Condition::and(
            self.atoms.iter().map(|(c, v)| Condition::atom(c, CmpOp::Eq, v.clone())).collect(),
        )
    }
}

impl fmt::Display for ViewPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.atoms.is_empty() {
            return f.write_str("TRUE");
        }
        let parts: Vec<String> = self.atoms.iter().map(|(c, v)| format!("{c} = {}", v.to_sql())).collect();
        write!(f, "({})", parts.join(" AND "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRef {
    pub table: String,
    pub alias: Option<String>,
}

impl TableRef {
    /// Name other clauses use to refer to this table.
    pub fn binding(&self) -> &str {
        self.alias.as_deref().unwrap_or(&self.table)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Projection {
    All,
    Columns(Vec<ColumnRef>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub projection: Projection,
    pub tables: Vec<TableRef>,
    /// Residual condition, join equalities excluded.
    pub condition: Option<Condition>,
    pub join_equalities: Vec<(ColumnRef, ColumnRef)>,
}

impl Query {
    pub fn is_join(&self) -> bool {
        self.tables.len() > 1
    }

    pub fn binding_of(&self, table: &str) -> Option<&str> {
        self.tables.iter().find(|t| t.table == table).map(|t| t.binding())
    }

    /// Full WHERE clause: join equalities and residual condition.
    pub fn full_condition(&self) -> Option<Condition> {
        let mut items: Vec<Condition> = self
            .join_equalities
            .iter()
            .map(|(a, b)| Condition::cmp(Expr::Column(a.clone()), CmpOp::Eq, Expr::Column(b.clone())))
            .collect();
        if let Some(c) = &self.condition {
            match c {
                Condition::And(inner) => items.extend(inner.iter().cloned()),
                other => items.push(other.clone()),
            }
        }
        if items.is_empty() {
            None
        } else {
            Some(Condition::and(items))
        }
    }

    /// The residual condition restricted to columns of one binding, for
    /// single-table queries. Multi-table conditions are returned unchanged.
    pub fn single_table_condition(&self) -> Option<Condition> {
        self.condition.as_ref().map(|c| if self.is_join() { c.clone() } else { c.unqualified() })
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        match &self.projection {
            Projection::All => f.write_str("*")?,
            Projection::Columns(cols) => {
                let cols: Vec<String> = cols.iter().map(|c| c.to_string()).collect();
                f.write_str(&cols.join(", "))?;
            }
        }
        f.write_str(" FROM ")?;
        let tables: Vec<String> = self
            .tables
            .iter()
            .map(|t| match &t.alias {
                Some(a) => format!("{} {a}", t.table),
                None => t.table.clone(),
            })
            .collect();
        f.write_str(&tables.join(", "))?;
        if let Some(c) = self.full_condition() {
            write!(f, " WHERE {c}")?;
        }
        Ok(())
    }
}
