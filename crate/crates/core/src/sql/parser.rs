use std::collections::BTreeMap;

use super::ast::*;
use super::catalog::Catalog;
use super::lexer::{tokenize, Token};
use super::types::{canonical_ident, Column, ColumnType, TableDefinition, Value, NOW};
use super::SqlError;
use crate::model::Tuple;

/// Keywords outside the subset. Meeting one is reported as unsupported rather
/// than as a syntax error.
const UNSUPPORTED_KEYWORDS: &[&str] = &[
    "order", "group", "limit", "having", "distinct", "join", "inner", "left", "right", "outer", "on", "union",
    "null", "is", "like", "in", "between", "exists", "offset", "case", "update", "delete", "drop", "alter",
    "primary", "references", "unique", "default", "constraint", "check", "foreign", "intersect", "except",
];

const RESERVED: &[&str] = &[
    "select", "from", "where", "and", "or", "not", "insert", "into", "values", "create", "table", "as", "true",
    "false", "now",
];

/// A parsed and resolved statement.
#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    CreateTable(TableDefinition),
    Insert(Tuple),
    Select(Query),
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn new(text: &str) -> Result<Self, SqlError> {
        Ok(Parser { tokens: tokenize(text)?, pos: 0 })
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, n: usize) -> Option<&Token> {
        self.tokens.get(self.pos + n)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn at_kw(&self, kw: &str) -> bool {
        self.peek().is_some_and(|t| t.is_kw(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat(&mut self, tok: &Token) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn unexpected(&self, wanted: &str) -> SqlError {
        match self.peek() {
            Some(t) if is_unsupported_kw(t) => {
                SqlError::Unsupported(format!("'{}' is outside the supported SQL subset", t.describe()))
            }
            Some(t) => SqlError::Syntax(format!("expected {wanted}, found '{}'", t.describe())),
            None => SqlError::Syntax(format!("expected {wanted}, found end of input")),
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), SqlError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.unexpected(&kw.to_ascii_uppercase()))
        }
    }

    fn expect(&mut self, tok: Token, wanted: &str) -> Result<(), SqlError> {
        if self.eat(&tok) {
            Ok(())
        } else {
            Err(self.unexpected(wanted))
        }
    }

    fn ident(&mut self, wanted: &str) -> Result<String, SqlError> {
        match self.peek() {
            Some(Token::Ident(s)) if !is_reserved(s) && !is_unsupported_word(s) => {
                let s = canonical_ident(s);
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.unexpected(wanted)),
        }
    }

    fn finish(&mut self) -> Result<(), SqlError> {
        self.eat(&Token::Semicolon);
        match self.peek() {
            None => Ok(()),
            Some(_) => Err(self.unexpected("end of statement")),
        }
    }

    fn literal(&mut self) -> Result<Value, SqlError> {
        let start = self.pos;
        let negative = self.eat(&Token::Minus);
        let v = match self.peek() {
            Some(Token::Int(m)) => Value::Int(signed_int(*m, negative)?),
            Some(Token::Real(r)) => Value::Real(if negative { -r } else { *r }),
            Some(Token::Str(s)) if !negative => Value::Str(s.clone()),
            _ => {
                self.pos = start;
                return Err(self.unexpected("a literal"));
            }
        };
        self.pos += 1;
        Ok(v)
    }

    fn column_ref(&mut self) -> Result<ColumnRef, SqlError> {
        let first = self.ident("a column name")?;
        if self.eat(&Token::Dot) {
            if self.peek() == Some(&Token::Star) {
                return Err(SqlError::Unsupported("qualified '*' projection".into()));
            }
            let col = self.ident("a column name")?;
            Ok(ColumnRef { qualifier: Some(first), column: col })
        } else {
            Ok(ColumnRef { qualifier: None, column: first })
        }
    }

    fn reject_call(&self) -> Result<(), SqlError> {
        if let (Some(Token::Ident(name)), Some(Token::LParen)) = (self.peek(), self.peek_at(1)) {
            return Err(SqlError::Unsupported(format!("function call '{name}(...)'")));
        }
        Ok(())
    }

    // condition = conj { OR conj }
    fn condition(&mut self) -> Result<Condition, SqlError> {
        let mut items = vec![self.conjunction()?];
        while self.eat_kw("or") {
            items.push(self.conjunction()?);
        }
        Ok(Condition::or(items))
    }

    fn conjunction(&mut self) -> Result<Condition, SqlError> {
        let mut items = vec![self.negation()?];
        while self.eat_kw("and") {
            items.push(self.negation()?);
        }
        Ok(Condition::and(items))
    }

    fn negation(&mut self) -> Result<Condition, SqlError> {
        if self.eat_kw("not") {
            return Ok(Condition::Not(Box::new(self.negation()?)));
        }
        if self.eat(&Token::LParen) {
            if self.at_kw("select") {
                return Err(SqlError::Unsupported("subqueries".into()));
            }
            let c = self.condition()?;
            self.expect(Token::RParen, "')'")?;
            return Ok(c);
        }
        if self.eat_kw("true") {
            return Ok(Condition::Const(true));
        }
        if self.eat_kw("false") {
            return Ok(Condition::Const(false));
        }
        let left = self.expr()?;
        let op = match self.peek() {
            Some(Token::Op(o)) => match *o {
                "=" => CmpOp::Eq,
                "<>" => CmpOp::Ne,
                "<" => CmpOp::Lt,
                "<=" => CmpOp::Le,
                ">" => CmpOp::Gt,
                _ => CmpOp::Ge,
            },
            _ => return Err(self.unexpected("a comparison operator")),
        };
        self.pos += 1;
        let right = self.expr()?;
        Ok(Condition::Compare { left, op, right })
    }

    fn expr(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.term()?;
        loop {
            let op = if self.eat(&Token::Plus) {
                ArithOp::Add
            } else if self.eat(&Token::Minus) {
                ArithOp::Sub
            } else {
                return Ok(left);
            };
            let right = self.term()?;
            left = Expr::Arith { op, left: Box::new(left), right: Box::new(right) };
        }
    }

    fn term(&mut self) -> Result<Expr, SqlError> {
        self.reject_call()?;
        match self.peek() {
            Some(Token::Ident(s)) if s.eq_ignore_ascii_case(NOW) => {
                self.pos += 1;
                Ok(Expr::Now)
            }
            Some(Token::Ident(_)) => Ok(Expr::Column(self.column_ref()?)),
            Some(Token::Int(_) | Token::Real(_) | Token::Str(_) | Token::Minus) => Ok(Expr::Literal(self.literal()?)),
            Some(Token::LParen) => Err(SqlError::Unsupported("parenthesized arithmetic".into())),
            _ => Err(self.unexpected("a column, literal or NOW")),
        }
    }
}

fn signed_int(magnitude: u64, negative: bool) -> Result<i64, SqlError> {
    let v = if negative { -(magnitude as i128) } else { magnitude as i128 };
    i64::try_from(v).map_err(|_| SqlError::Syntax(format!("integer literal {v} out of range")))
}

fn is_reserved(s: &str) -> bool {
    RESERVED.iter().any(|k| s.eq_ignore_ascii_case(k))
}

fn is_unsupported_word(s: &str) -> bool {
    UNSUPPORTED_KEYWORDS.iter().any(|k| s.eq_ignore_ascii_case(k))
}

fn is_unsupported_kw(t: &Token) -> bool {
    matches!(t, Token::Ident(s) if is_unsupported_word(s))
}

fn column_type(p: &mut Parser) -> Result<ColumnType, SqlError> {
    let name = match p.peek() {
        Some(Token::Ident(s)) => s.to_ascii_lowercase(),
        _ => return Err(p.unexpected("a column type")),
    };
    p.pos += 1;
    let ty = match name.as_str() {
        "int" | "integer" | "bigint" => ColumnType::Int,
        "real" | "double" | "float" => ColumnType::Real,
        "string" | "text" | "varchar" | "char" => ColumnType::String,
        "timestamp" => ColumnType::Timestamp,
        other => return Err(SqlError::Syntax(format!("unknown column type '{other}'"))),
    };
    if ty == ColumnType::String && p.eat(&Token::LParen) {
        // VARCHAR(n): width is accepted and ignored
        match p.next() {
            Some(Token::Int(_)) => {}
            _ => return Err(SqlError::Syntax("expected a width in VARCHAR(n)".into())),
        }
        p.expect(Token::RParen, "')'")?;
    }
    Ok(ty)
}

/// Parses `CREATE TABLE name (col TYPE, ...)`. The defining key is supplied
/// separately; SQL key constraints are not part of the grammar.
pub fn parse_create_table(text: &str, defining_key: &[&str]) -> Result<TableDefinition, SqlError> {
    let mut p = Parser::new(text)?;
    p.expect_kw("create")?;
    p.expect_kw("table")?;
    let name = p.ident("a table name")?;
    p.expect(Token::LParen, "'('")?;
    let mut columns = Vec::new();
    loop {
        let col = p.ident("a column name")?;
        let ty = column_type(&mut p)?;
        columns.push(Column { name: col, ty });
        if p.eat(&Token::Comma) {
            continue;
        }
        p.expect(Token::RParen, "',' or ')'")?;
        break;
    }
    p.finish()?;
    TableDefinition::new(&name, columns, defining_key)
}

/// Parses `INSERT INTO t [(cols)] VALUES (literals)` against its table.
pub fn parse_insert(text: &str, schema: &TableDefinition) -> Result<Tuple, SqlError> {
    let mut p = Parser::new(text)?;
    p.expect_kw("insert")?;
    p.expect_kw("into")?;
    let table = p.ident("a table name")?;
    if table != schema.name {
        return Err(SqlError::Schema(format!("INSERT targets table {table}, expected {}", schema.name)));
    }
    let mut cols: Option<Vec<String>> = None;
    if p.eat(&Token::LParen) {
        let mut list = Vec::new();
        loop {
            list.push(p.ident("a column name")?);
            if p.eat(&Token::Comma) {
                continue;
            }
            p.expect(Token::RParen, "',' or ')'")?;
            break;
        }
        cols = Some(list);
    }
    p.expect_kw("values")?;
    p.expect(Token::LParen, "'('")?;
    let mut lits = Vec::new();
    loop {
        lits.push(p.literal()?);
        if p.eat(&Token::Comma) {
            continue;
        }
        p.expect(Token::RParen, "',' or ')'")?;
        break;
    }
    if p.at_kw("select") {
        return Err(SqlError::Unsupported("INSERT ... SELECT".into()));
    }
    p.finish()?;

    let cols = cols.unwrap_or_else(|| schema.columns.iter().map(|c| c.name.clone()).collect());
    if cols.len() != lits.len() {
        return Err(SqlError::Syntax(format!("{} columns but {} values", cols.len(), lits.len())));
    }
    let mut slots: Vec<Option<Value>> = vec![None; schema.columns.len()];
    for (col, lit) in cols.iter().zip(lits) {
        let idx = schema
            .column_index(col)
            .ok_or_else(|| SqlError::Schema(format!("unknown column '{col}' in table {}", schema.name)))?;
        if slots[idx].is_some() {
            return Err(SqlError::Schema(format!("column '{col}' assigned twice")));
        }
        slots[idx] = Some(lit.coerce_to(schema.columns[idx].ty)?);
    }
    let mut values = Vec::with_capacity(slots.len());
    for (slot, col) in slots.into_iter().zip(&schema.columns) {
        match slot {
            Some(v) => values.push(v),
            None if col.name == schema.timestamp_column => {
                return Err(SqlError::Schema(format!("timestamp column '{}' is not bound", col.name)))
            }
            None if schema.defining_key.contains(&col.name) => {
                return Err(SqlError::Schema(format!("defining-key column '{}' is not bound", col.name)))
            }
            None => return Err(SqlError::Schema(format!("column '{}' is not bound", col.name))),
        }
    }
    Tuple::new(schema, values)
}

/// Parses a SELECT against the catalog. With two or more tables, top-level
/// `a.x = b.y` conjuncts across different tables become join equalities.
pub fn parse_select(text: &str, catalog: &Catalog) -> Result<Query, SqlError> {
    let mut p = Parser::new(text)?;
    p.expect_kw("select")?;
    if p.at_kw("distinct") {
        return Err(SqlError::Unsupported("DISTINCT".into()));
    }
    let projection = if p.eat(&Token::Star) {
        Projection::All
    } else {
        let mut cols = Vec::new();
        loop {
            p.reject_call()?;
            cols.push(p.column_ref()?);
            if !p.eat(&Token::Comma) {
                break;
            }
        }
        Projection::Columns(cols)
    };
    p.expect_kw("from")?;
    let mut tables = Vec::new();
    loop {
        if p.peek() == Some(&Token::LParen) {
            return Err(SqlError::Unsupported("subqueries".into()));
        }
        let table = p.ident("a table name")?;
        let alias = if p.eat_kw("as") {
            Some(p.ident("an alias")?)
        } else if matches!(p.peek(), Some(Token::Ident(s)) if !is_reserved(s) && !is_unsupported_word(s)) {
            Some(p.ident("an alias")?)
        } else {
            None
        };
        tables.push(TableRef { table, alias });
        if !p.eat(&Token::Comma) {
            break;
        }
    }
    let condition = if p.eat_kw("where") { Some(p.condition()?) } else { None };
    p.finish()?;
    resolve_query(projection, tables, condition, catalog)
}

fn resolve_query(
    projection: Projection,
    tables: Vec<TableRef>,
    condition: Option<Condition>,
    catalog: &Catalog,
) -> Result<Query, SqlError> {
    let mut bindings: BTreeMap<String, &TableDefinition> = BTreeMap::new();
    for t in &tables {
        let def = catalog
            .get(&t.table)
            .ok_or_else(|| SqlError::Schema(format!("unknown table '{}'", t.table)))?;
        if bindings.insert(t.binding().to_string(), def).is_some() {
            return Err(SqlError::Schema(format!("table binding '{}' used twice", t.binding())));
        }
    }
    let resolver = Resolver { bindings: &bindings };

    let projection = match projection {
        Projection::All => Projection::All,
        Projection::Columns(cols) => {
            Projection::Columns(cols.iter().map(|c| resolver.resolve(c).map(|(r, _)| r)).collect::<Result<_, _>>()?)
        }
    };

    let mut join_equalities = Vec::new();
    let residual = match condition {
        None => None,
        Some(c) => {
            let c = resolver.resolve_condition(&c)?;
            if tables.len() > 1 {
                let conjuncts = match c {
                    Condition::And(items) => items,
                    other => vec![other],
                };
                let mut rest = Vec::new();
                for item in conjuncts {
                    match &item {
                        Condition::Compare { left: Expr::Column(a), op: CmpOp::Eq, right: Expr::Column(b) }
                            if a.qualifier != b.qualifier =>
                        {
                            join_equalities.push((a.clone(), b.clone()))
                        }
                        _ => rest.push(item),
                    }
                }
                if rest.is_empty() {
                    None
                } else {
                    Some(Condition::and(rest))
                }
            } else {
                Some(c)
            }
        }
    };
    Ok(Query { projection, tables, condition: residual, join_equalities })
}

/// Resolves column references against a set of table bindings and type
/// checks expressions.
pub(crate) struct Resolver<'a> {
    pub bindings: &'a BTreeMap<String, &'a TableDefinition>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Class {
    Numeric,
    Text,
}

impl Resolver<'_> {
    fn resolve(&self, c: &ColumnRef) -> Result<(ColumnRef, ColumnType), SqlError> {
        match &c.qualifier {
            Some(q) => {
                let def = self
                    .bindings
                    .get(q)
                    .ok_or_else(|| SqlError::Schema(format!("unknown table or alias '{q}'")))?;
                let col = def
                    .column(&c.column)
                    .ok_or_else(|| SqlError::Schema(format!("unknown column '{}.{}'", q, c.column)))?;
                Ok((c.clone(), col.ty))
            }
            None => {
                let mut found = None;
                for (b, def) in self.bindings {
                    if let Some(col) = def.column(&c.column) {
                        if found.is_some() {
                            return Err(SqlError::Schema(format!("column '{}' is ambiguous", c.column)));
                        }
                        found = Some((ColumnRef { qualifier: Some(b.clone()), column: c.column.clone() }, col.ty));
                    }
                }
                found.ok_or_else(|| SqlError::Schema(format!("unknown column '{}'", c.column)))
            }
        }
    }

    fn resolve_expr(&self, e: &Expr) -> Result<(Expr, Class), SqlError> {
        match e {
            Expr::Column(c) => {
                let (r, ty) = self.resolve(c)?;
                let class = if ty.is_numeric() { Class::Numeric } else { Class::Text };
                Ok((Expr::Column(r), class))
            }
            Expr::Literal(v) => Ok((e.clone(), if v.is_numeric() { Class::Numeric } else { Class::Text })),
            Expr::Now => Ok((Expr::Now, Class::Numeric)),
            Expr::Arith { op, left, right } => {
                let (l, lc) = self.resolve_expr(left)?;
                let (r, rc) = self.resolve_expr(right)?;
                if lc != Class::Numeric || rc != Class::Numeric {
                    return Err(SqlError::Type(format!("arithmetic on non-numeric operands in '{e}'")));
                }
                Ok((Expr::Arith { op: *op, left: Box::new(l), right: Box::new(r) }, Class::Numeric))
            }
        }
    }

    pub fn resolve_condition(&self, c: &Condition) -> Result<Condition, SqlError> {
        Ok(match c {
            Condition::Const(b) => Condition::Const(*b),
            Condition::Compare { left, op, right } => {
                let (l, lc) = self.resolve_expr(left)?;
                let (r, rc) = self.resolve_expr(right)?;
                if lc != rc {
                    return Err(SqlError::Type(format!("cannot compare '{left}' with '{right}'")));
                }
                Condition::Compare { left: l, op: *op, right: r }
            }
            Condition::And(items) => {
                Condition::And(items.iter().map(|i| self.resolve_condition(i)).collect::<Result<_, _>>()?)
            }
            Condition::Or(items) => {
                Condition::Or(items.iter().map(|i| self.resolve_condition(i)).collect::<Result<_, _>>()?)
            }
            Condition::Not(inner) => Condition::Not(Box::new(self.resolve_condition(inner)?)),
        })
    }
}

/// Parses a WHERE clause (the keyword itself is optional) over a single
/// table. Column references in the result are unqualified.
pub fn parse_condition(text: &str, schema: &TableDefinition) -> Result<Condition, SqlError> {
    let mut p = Parser::new(text)?;
    p.eat_kw("where");
    let c = p.condition()?;
    p.finish()?;
    let mut bindings = BTreeMap::new();
    bindings.insert(schema.name.clone(), schema);
    let resolver = Resolver { bindings: &bindings };
    let c = resolver.resolve_condition(&c.map_columns(|r| match &r.qualifier {
        Some(q) if *q != schema.name => r.clone(),
        _ => ColumnRef { qualifier: None, column: r.column.clone() },
    }))?;
    Ok(c.unqualified())
}

/// Parses a producer view: empty, `TRUE`, or `[WHERE] (c1 = v1 AND c2 = v2 ...)`.
pub fn parse_view(text: &str, schema: &TableDefinition) -> Result<ViewPredicate, SqlError> {
    if text.trim().is_empty() {
        return Ok(ViewPredicate::universal());
    }
    let cond = parse_condition(text, schema)?;
    let conjuncts = match cond {
        Condition::Const(true) => return Ok(ViewPredicate::universal()),
        Condition::And(items) => items,
        other => vec![other],
    };
    let mut atoms = Vec::new();
    for c in conjuncts {
        let (col, v) = match c {
            Condition::Compare { left: Expr::Column(c), op: CmpOp::Eq, right: Expr::Literal(v) }
            | Condition::Compare { left: Expr::Literal(v), op: CmpOp::Eq, right: Expr::Column(c) } => (c.column, v),
            other => {
                return Err(SqlError::Schema(format!(
                    "a view is a conjunction of column = value atoms, found '{other}'"
                )))
            }
        };
        let ty = schema.column(&col).map(|c| c.ty).expect("resolved column exists");
        atoms.push((col, v.coerce_to(ty)?));
    }
    ViewPredicate::new(atoms)
}

/// Parses any statement of the subset. CREATE TABLE gets the defining key
/// from `defining_key`; INSERT and SELECT resolve against the catalog.
pub fn parse_statement(text: &str, catalog: &Catalog, defining_key: &[&str]) -> Result<Statement, SqlError> {
    let mut p = Parser::new(text)?;
    match p.peek() {
        Some(t) if t.is_kw("create") => parse_create_table(text, defining_key).map(Statement::CreateTable),
        Some(t) if t.is_kw("insert") => {
            p.next();
            p.expect_kw("into")?;
            let table = p.ident("a table name")?;
            let schema = catalog.get(&table).ok_or_else(|| SqlError::Schema(format!("unknown table '{table}'")))?;
            parse_insert(text, schema).map(Statement::Insert)
        }
        Some(t) if t.is_kw("select") => parse_select(text, catalog).map(Statement::Select),
        Some(t) if is_unsupported_kw(t) => Err(SqlError::Unsupported(format!("{} statements", t.describe()))),
        _ => Err(p.unexpected("CREATE, INSERT or SELECT")),
    }
}
