//! View/query intersection.
//!
//! A producer is relevant to a query unless no tuple can satisfy both its
//! view and the query condition. View bindings are substituted into the
//! condition, which is then put into negation normal form and expanded to
//! disjunctive normal form. Each conjunct is checked column by column with
//! equality propagation plus interval reasoning (integer-aware for INT and
//! TIMESTAMP columns). Columns compared with each other are checked together
//! by a search over the constants and enough representatives of each gap
//! between them. Anything the checker cannot decide counts as satisfiable,
//! so exclusion is always sound.

use std::collections::BTreeSet;

use super::ast::{CmpOp, ColumnRef, Condition, Expr, Query, ViewPredicate};
use super::types::{ColumnType, TableDefinition, Value};
use super::SqlError;

/// Conjunct count beyond which the expansion is abandoned (and the answer is
/// "satisfiable").
const DNF_LIMIT: usize = 4096;

/// Replaces columns of `binding` fixed by the view with their values and
/// folds constants. The result equals the original condition on every tuple
/// consistent with the view.
pub fn substitute_view(condition: &Condition, binding: Option<&str>, view: &ViewPredicate) -> Condition {
    let replaced = replace(condition, &|c: &ColumnRef| {
        let ours = match (&c.qualifier, binding) {
            (Some(q), Some(b)) => q == b,
            _ => true,
        };
        if ours {
            view.binding(&c.column).cloned()
        } else {
            None
        }
    });
    simplify(&replaced)
}

fn replace(c: &Condition, f: &dyn Fn(&ColumnRef) -> Option<Value>) -> Condition {
    fn expr(e: &Expr, f: &dyn Fn(&ColumnRef) -> Option<Value>) -> Expr {
        match e {
            Expr::Column(c) => f(c).map(Expr::Literal).unwrap_or_else(|| e.clone()),
            Expr::Arith { op, left, right } => {
                Expr::Arith { op: *op, left: Box::new(expr(left, f)), right: Box::new(expr(right, f)) }
            }
            other => other.clone(),
        }
    }
    match c {
        Condition::Const(b) => Condition::Const(*b),
        Condition::Compare { left, op, right } => Condition::Compare { left: expr(left, f), op: *op, right: expr(right, f) },
        Condition::And(items) => Condition::And(items.iter().map(|i| replace(i, f)).collect()),
        Condition::Or(items) => Condition::Or(items.iter().map(|i| replace(i, f)).collect()),
        Condition::Not(inner) => Condition::Not(Box::new(replace(inner, f))),
    }
}

fn constant(e: &Expr) -> Option<Value> {
    match e {
        Expr::Literal(v) => Some(v.clone()),
        Expr::Arith { .. } => {
            struct NoRow;
            impl crate::model::RowContext for NoRow {
                fn value(&self, _: &ColumnRef) -> Option<&Value> {
                    None
                }
            }
            super::eval::eval_expr(e, &NoRow, None).ok()
        }
        _ => None,
    }
}

/// Constant folding over the boolean structure.
pub fn simplify(c: &Condition) -> Condition {
    match c {
        Condition::Const(b) => Condition::Const(*b),
        Condition::Compare { left, op, right } => match (constant(left), constant(right)) {
            (Some(l), Some(r)) => match l.sql_cmp(&r) {
                Some(ord) => Condition::Const(op.holds(ord)),
                None => c.clone(),
            },
            _ => match (left, right) {
                (Expr::Column(a), Expr::Column(b)) if a == b => Condition::Const(op.holds(std::cmp::Ordering::Equal)),
                _ => c.clone(),
            },
        },
        Condition::And(items) => {
            let mut out = Vec::new();
            for i in items {
                match simplify(i) {
                    Condition::Const(true) => {}
                    Condition::Const(false) => return Condition::Const(false),
                    other => out.push(other),
                }
            }
            Condition::and(out)
        }
        Condition::Or(items) => {
            let mut out = Vec::new();
            for i in items {
                match simplify(i) {
                    Condition::Const(false) => {}
                    Condition::Const(true) => return Condition::Const(true),
                    other => out.push(other),
                }
            }
            Condition::or(out)
        }
        Condition::Not(inner) => match simplify(inner) {
            Condition::Const(b) => Condition::Const(!b),
            other => Condition::Not(Box::new(other)),
        },
    }
}

#[derive(Debug, Clone)]
struct Atom {
    column: ColumnRef,
    op: CmpOp,
    value: Value,
}

/// `left op right` between two columns.
#[derive(Debug, Clone)]
struct Link {
    left: ColumnRef,
    op: CmpOp,
    right: ColumnRef,
}

#[derive(Debug, Clone, Default)]
struct Conj {
    atoms: Vec<Atom>,
    links: Vec<Link>,
}

impl Conj {
    fn join(&self, other: &Conj) -> Conj {
        let mut c = self.clone();
        c.atoms.extend(other.atoms.iter().cloned());
        c.links.extend(other.links.iter().cloned());
        c
    }
}

#[derive(Debug, Clone)]
enum Nnf {
    Const(bool),
    Atom(Atom),
    Link(Link),
    /// A comparison the checker does not reason about; treated as true.
    Opaque,
    And(Vec<Nnf>),
    Or(Vec<Nnf>),
}

fn to_nnf(c: &Condition, negate: bool) -> Nnf {
    match c {
        Condition::Const(b) => Nnf::Const(*b != negate),
        Condition::Compare { left, op, right } => {
            let op = if negate { op.negate() } else { *op };
            match (left, right) {
                (Expr::Column(col), r) if constant(r).is_some() => {
                    Nnf::Atom(Atom { column: col.clone(), op, value: constant(r).unwrap() })
                }
                (l, Expr::Column(col)) if constant(l).is_some() => {
                    Nnf::Atom(Atom { column: col.clone(), op: op.flip(), value: constant(l).unwrap() })
                }
                (Expr::Column(l), Expr::Column(r)) => Nnf::Link(Link { left: l.clone(), op, right: r.clone() }),
                _ => Nnf::Opaque,
            }
        }
        Condition::And(items) => {
            let parts = items.iter().map(|i| to_nnf(i, negate)).collect();
            if negate {
                Nnf::Or(parts)
            } else {
                Nnf::And(parts)
            }
        }
        Condition::Or(items) => {
            let parts = items.iter().map(|i| to_nnf(i, negate)).collect();
            if negate {
                Nnf::And(parts)
            } else {
                Nnf::Or(parts)
            }
        }
        Condition::Not(inner) => to_nnf(inner, !negate),
    }
}

/// Disjunctive normal form as a list of conjunctions; `None` when the
/// expansion would exceed the limit.
fn to_dnf(n: &Nnf) -> Option<Vec<Conj>> {
    match n {
        Nnf::Const(true) | Nnf::Opaque => Some(vec![Conj::default()]),
        Nnf::Const(false) => Some(vec![]),
        Nnf::Atom(a) => Some(vec![Conj { atoms: vec![a.clone()], links: vec![] }]),
        Nnf::Link(l) => Some(vec![Conj { atoms: vec![], links: vec![l.clone()] }]),
        Nnf::Or(items) => {
            let mut out = Vec::new();
            for i in items {
                out.extend(to_dnf(i)?);
                if out.len() > DNF_LIMIT {
                    return None;
                }
            }
            Some(out)
        }
        Nnf::And(items) => {
            let mut acc: Vec<Conj> = vec![Conj::default()];
            for i in items {
                let rhs = to_dnf(i)?;
                if acc.len().saturating_mul(rhs.len()) > DNF_LIMIT {
                    return None;
                }
                let mut next = Vec::with_capacity(acc.len() * rhs.len());
                for a in &acc {
                    for b in &rhs {
                        next.push(a.join(b));
                    }
                }
                acc = next;
            }
            Some(acc)
        }
    }
}

/// Conservative satisfiability: `false` only when no assignment of the
/// columns satisfies `condition`. `column_type` supplies each column's type;
/// atoms on columns it does not know are ignored.
pub fn satisfiable(condition: &Condition, column_type: &dyn Fn(&ColumnRef) -> Option<ColumnType>) -> bool {
    let nnf = to_nnf(&simplify(condition), false);
    let Some(dnf) = to_dnf(&nnf) else {
        return true;
    };
    dnf.iter().any(|conj| conjunct_satisfiable(conj, column_type))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Int,
    Real,
    Str,
}

fn family(ty: ColumnType) -> Family {
    match ty {
        ColumnType::Int | ColumnType::Timestamp => Family::Int,
        ColumnType::Real => Family::Real,
        ColumnType::String => Family::Str,
    }
}

fn conjunct_satisfiable(conj: &Conj, column_type: &dyn Fn(&ColumnRef) -> Option<ColumnType>) -> bool {
    // links between comparable columns; the rest say nothing checkable
    let links: Vec<&Link> = conj
        .links
        .iter()
        .filter(|l| match (column_type(&l.left), column_type(&l.right)) {
            (Some(a), Some(b)) => family(a) == family(b),
            _ => false,
        })
        .collect();
    let mut groups: Vec<Vec<&ColumnRef>> = Vec::new();
    for l in &links {
        let a = groups.iter().position(|g| g.contains(&&l.left));
        let b = groups.iter().position(|g| g.contains(&&l.right));
        match (a, b) {
            (Some(a), Some(b)) if a != b => {
                let moved = groups.remove(a.max(b));
                groups[a.min(b)].extend(moved);
            }
            (Some(_), Some(_)) => {}
            (Some(g), None) => groups[g].push(&l.right),
            (None, Some(g)) => groups[g].push(&l.left),
            (None, None) => {
                groups.push(if l.left == l.right { vec![&l.left] } else { vec![&l.left, &l.right] });
            }
        }
    }
    let mut columns: Vec<&ColumnRef> = conj.atoms.iter().map(|a| &a.column).collect();
    columns.sort();
    columns.dedup();
    let independent = columns.into_iter().filter(|c| !groups.iter().any(|g| g.contains(c))).all(|col| {
        let Some(ty) = column_type(col) else {
            return true;
        };
        let on_col: Vec<(CmpOp, &Value)> =
            conj.atoms.iter().filter(|a| a.column == *col).map(|a| (a.op, &a.value)).collect();
        match ty {
            ColumnType::Int | ColumnType::Timestamp => IntDomain::check(&on_col),
            ColumnType::Real => RealDomain::check(&on_col),
            ColumnType::String => StrDomain::check(&on_col),
        }
    });
    independent
        && groups.iter().all(|g| {
            let fam = family(column_type(g[0]).expect("linked columns are typed"));
            group_satisfiable(g, fam, &conj.atoms, &links)
        })
}

/// Searches assignments to columns linked by comparisons. Candidates are the
/// constants plus, in every gap around them, as many distinct values as
/// there are columns (fewer when the gap is smaller), so any solution maps
/// onto one with the same order relations.
fn group_satisfiable(cols: &[&ColumnRef], fam: Family, atoms: &[Atom], links: &[&Link]) -> bool {
    let consts: Vec<&Value> = atoms.iter().filter(|a| cols.contains(&&a.column)).map(|a| &a.value).collect();
    let base = candidates(fam, &consts, cols.len());
    let per_col: Vec<Vec<&Value>> = cols
        .iter()
        .map(|c| {
            base.iter()
                .filter(|v| {
                    atoms.iter().filter(|a| a.column == **c).all(|a| v.sql_cmp(&a.value).is_none_or(|o| a.op.holds(o)))
                })
                .collect()
        })
        .collect();
    let index = |c: &ColumnRef| cols.iter().position(|x| *x == c).expect("link column in group");
    let links: Vec<(usize, CmpOp, usize)> = links
        .iter()
        .filter(|l| cols.contains(&&l.left))
        .map(|l| (index(&l.left), l.op, index(&l.right)))
        .collect();
    fn search(i: usize, chosen: &mut Vec<usize>, per_col: &[Vec<&Value>], links: &[(usize, CmpOp, usize)]) -> bool {
        if i == per_col.len() {
            return true;
        }
        for k in 0..per_col[i].len() {
            chosen.push(k);
            let ok = links.iter().filter(|(l, _, r)| (*l).max(*r) == i).all(|(l, op, r)| {
                let (a, b) = (per_col[*l][chosen[*l]], per_col[*r][chosen[*r]]);
                a.sql_cmp(b).is_none_or(|o| op.holds(o))
            });
            if ok && search(i + 1, chosen, per_col, links) {
                return true;
            }
            chosen.pop();
        }
        false
    }
    search(0, &mut Vec::new(), &per_col, &links)
}

fn candidates(fam: Family, consts: &[&Value], n: usize) -> Vec<Value> {
    let n = n.max(1);
    match fam {
        Family::Int => {
            let mut points: Vec<i128> = Vec::new();
            for v in consts {
                match v {
                    Value::Int(x) | Value::Timestamp(x) => points.push(*x as i128),
                    Value::Real(r) if r.is_finite() && r.abs() < 9.0e18 => {
                        points.push(r.floor() as i128);
                        points.push(r.ceil() as i128);
                    }
                    _ => {}
                }
            }
            points.sort();
            points.dedup();
            let mut out = points.clone();
            match (points.first(), points.last()) {
                (Some(lo), Some(hi)) => {
                    out.extend((1..=n as i128).map(|j| lo - j));
                    out.extend((1..=n as i128).map(|j| hi + j));
                }
                _ => out.extend(0..n as i128),
            }
            for w in points.windows(2) {
                out.extend((1..=n as i128).map(|j| w[0] + j).filter(|x| *x < w[1]));
            }
            out.sort();
            out.dedup();
            out.into_iter().filter_map(|x| i64::try_from(x).ok()).map(Value::Int).collect()
        }
        Family::Real => {
            let mut points: Vec<f64> = consts.iter().filter_map(|v| v.as_f64()).filter(|x| x.is_finite()).collect();
            points.sort_by(f64::total_cmp);
            points.dedup();
            let mut out = points.clone();
            match (points.first(), points.last()) {
                (Some(lo), Some(hi)) => {
                    out.extend((1..=n).map(|j| lo - j as f64));
                    out.extend((1..=n).map(|j| hi + j as f64));
                }
                _ => out.extend((0..n).map(|j| j as f64)),
            }
            for w in points.windows(2) {
                out.extend((1..=n).map(|j| w[0] + (w[1] - w[0]) * j as f64 / (n + 1) as f64).filter(|x| *x > w[0] && *x < w[1]));
            }
            out.sort_by(f64::total_cmp);
            out.dedup();
            out.into_iter().map(Value::Real).collect()
        }
        Family::Str => {
            // s + "\0"*j enumerates the smallest strings above s in order
            let zeros = |j: usize| "\0".repeat(j);
            let mut points: Vec<&str> = consts.iter().filter_map(|v| v.as_str()).collect();
            points.sort_by(|a, b| a.as_bytes().cmp(b.as_bytes()));
            points.dedup();
            let mut out: Vec<String> = points.iter().map(|s| s.to_string()).collect();
            match (points.first(), points.last()) {
                (Some(lo), Some(hi)) => {
                    out.extend((0..n).map(zeros).filter(|s| s.as_bytes() < lo.as_bytes()));
                    out.extend((1..=n).map(|j| format!("{hi}{}", zeros(j))));
                }
                _ => out.extend((0..n).map(zeros)),
            }
            for w in points.windows(2) {
                out.extend((1..=n).map(|j| format!("{}{}", w[0], zeros(j))).filter(|s| s.as_bytes() < w[1].as_bytes()));
            }
            out.sort_by(|a, b| a.as_bytes().cmp(b.as_bytes()));
            out.dedup();
            out.into_iter().map(Value::Str).collect()
        }
    }
}

struct IntDomain;

impl IntDomain {
    fn check(atoms: &[(CmpOp, &Value)]) -> bool {
        let mut lo: i128 = i64::MIN as i128;
        let mut hi: i128 = i64::MAX as i128;
        let mut eq: Option<i128> = None;
        let mut neq: BTreeSet<i128> = BTreeSet::new();
        for (op, v) in atoms {
            let (exact, real) = match v {
                Value::Int(n) | Value::Timestamp(n) => (Some(*n as i128), *n as f64),
                Value::Real(r) => ((r.fract() == 0.0 && r.abs() < 1e30).then_some(*r as i128), *r),
                Value::Str(_) => continue,
            };
            match op {
                CmpOp::Eq => match exact {
                    Some(n) => {
                        if eq.is_some_and(|e| e != n) {
                            return false;
                        }
                        eq = Some(n);
                    }
                    None => return false,
                },
                CmpOp::Ne => {
                    if let Some(n) = exact {
                        neq.insert(n);
                    }
                }
                CmpOp::Lt => hi = hi.min(exact.map(|n| n - 1).unwrap_or_else(|| real.ceil() as i128 - 1)),
                CmpOp::Le => hi = hi.min(exact.unwrap_or_else(|| real.floor() as i128)),
                CmpOp::Gt => lo = lo.max(exact.map(|n| n + 1).unwrap_or_else(|| real.floor() as i128 + 1)),
                CmpOp::Ge => lo = lo.max(exact.unwrap_or_else(|| real.ceil() as i128)),
            }
        }
        match eq {
            Some(e) => lo <= e && e <= hi && !neq.contains(&e),
            None => lo <= hi && (hi - lo + 1) > neq.range(lo..=hi).count() as i128,
        }
    }
}

#[derive(Clone, Copy)]
struct Bound<T> {
    value: T,
    strict: bool,
}

struct RealDomain;

impl RealDomain {
    fn check(atoms: &[(CmpOp, &Value)]) -> bool {
        let mut lo: Option<Bound<f64>> = None;
        let mut hi: Option<Bound<f64>> = None;
        let mut eq: Option<f64> = None;
        let mut neq: Vec<f64> = Vec::new();
        for (op, v) in atoms {
            let Some(x) = v.as_f64() else { continue };
            match op {
                CmpOp::Eq => {
                    if eq.is_some_and(|e| e != x) {
                        return false;
                    }
                    eq = Some(x);
                }
                CmpOp::Ne => neq.push(x),
                CmpOp::Lt | CmpOp::Le => {
                    let b = Bound { value: x, strict: *op == CmpOp::Lt };
                    hi = Some(match hi {
                        Some(h) if h.value < x || (h.value == x && h.strict) => h,
                        _ => b,
                    });
                }
                CmpOp::Gt | CmpOp::Ge => {
                    let b = Bound { value: x, strict: *op == CmpOp::Gt };
                    lo = Some(match lo {
                        Some(l) if l.value > x || (l.value == x && l.strict) => l,
                        _ => b,
                    });
                }
            }
        }
        let above = |x: f64| lo.is_none_or(|l| x > l.value || (x == l.value && !l.strict));
        let below = |x: f64| hi.is_none_or(|h| x < h.value || (x == h.value && !h.strict));
        if let Some(e) = eq {
            return above(e) && below(e) && !neq.contains(&e);
        }
        match (lo, hi) {
            (Some(l), Some(h)) if l.value < h.value => true,
            (Some(l), Some(h)) if l.value == h.value => !l.strict && !h.strict && !neq.contains(&l.value),
            (Some(_), Some(_)) => false,
            _ => true,
        }
    }
}

struct StrDomain;

impl StrDomain {
    fn check(atoms: &[(CmpOp, &Value)]) -> bool {
        let mut lo: Option<Bound<&str>> = None;
        let mut hi: Option<Bound<&str>> = None;
        let mut eq: Option<&str> = None;
        let mut neq: BTreeSet<&str> = BTreeSet::new();
        for (op, v) in atoms {
            let Some(x) = v.as_str() else { continue };
            match op {
                CmpOp::Eq => {
                    if eq.is_some_and(|e| e != x) {
                        return false;
                    }
                    eq = Some(x);
                }
                CmpOp::Ne => {
                    neq.insert(x);
                }
                CmpOp::Lt | CmpOp::Le => {
                    let b = Bound { value: x, strict: *op == CmpOp::Lt };
                    hi = Some(match hi {
                        Some(h) if h.value.as_bytes() < x.as_bytes() || (h.value == x && h.strict) => h,
                        _ => b,
                    });
                }
                CmpOp::Gt | CmpOp::Ge => {
                    let b = Bound { value: x, strict: *op == CmpOp::Gt };
                    lo = Some(match lo {
                        Some(l) if l.value.as_bytes() > x.as_bytes() || (l.value == x && l.strict) => l,
                        _ => b,
                    });
                }
            }
        }
        // "" is the least string: `< ''` is empty and `<= ''` is the single point ''
        if let Some(h) = hi {
            if h.value.is_empty() {
                if h.strict {
                    return false;
                }
                eq = match eq {
                    Some(e) if !e.is_empty() => return false,
                    _ => Some(""),
                };
            }
        }
        let above = |x: &str| lo.is_none_or(|l| x.as_bytes() > l.value.as_bytes() || (x == l.value && !l.strict));
        let below = |x: &str| hi.is_none_or(|h| x.as_bytes() < h.value.as_bytes() || (x == h.value && !h.strict));
        if let Some(e) = eq {
            return above(e) && below(e) && !neq.contains(e);
        }
        match (lo, hi) {
            // a dense approximation: adjacent strings such as 'a' and 'a\0' are
            // treated as having room between them, which errs towards relevance
            (Some(l), Some(h)) if l.value.as_bytes() < h.value.as_bytes() => true,
            (Some(l), Some(h)) if l.value == h.value => !l.strict && !h.strict && !neq.contains(l.value),
            (Some(_), Some(_)) => false,
            _ => true,
        }
    }
}

/// Whether a producer with `view` on `table` may hold tuples answering
/// `query`. Returns `false` only when the view and the query condition
/// cannot both hold.
pub fn relevant(view: &ViewPredicate, query: &Query, table: &TableDefinition) -> Result<bool, SqlError> {
    let binding = query
        .binding_of(&table.name)
        .ok_or_else(|| SqlError::Schema(format!("table {} is not part of the query", table.name)))?;
    for (col, v) in view.atoms() {
        let c = table
            .column(col)
            .ok_or_else(|| SqlError::Schema(format!("view column '{col}' is not a column of {}", table.name)))?;
        if v.clone().coerce_to(c.ty).is_err() {
            return Err(SqlError::Schema(format!("view value for '{col}' does not fit {}", c.ty)));
        }
    }
    let Some(condition) = &query.condition else {
        return Ok(true);
    };
    let residual = substitute_view(condition, Some(binding), view);
    // only this binding's columns are typed; other tables' columns stay free
    let column_type = |c: &ColumnRef| -> Option<ColumnType> {
        match &c.qualifier {
            Some(q) if q != binding => None,
            _ => table.column(&c.column).map(|col| col.ty),
        }
    };
    Ok(satisfiable(&residual, &column_type))
}
