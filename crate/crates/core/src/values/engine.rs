//! In-memory evaluator for the supported SELECT dialect. Semantics follow
//! SQLite where the two can be compared: three-valued logic, integer
//! division, storage-class ordering, ASC sorts put NULL first.

use std::cmp::Ordering;

use sqlparser::ast::{
    BinaryOperator, CastKind, DataType, Expr, FunctionArg, FunctionArgExpr, FunctionArguments,
    GroupByExpr, Join, JoinConstraint, JoinOperator, ObjectName, OrderByExpr, Query, Select,
    SelectItem, SetExpr, SetOperator, SetQuantifier, Statement, TableFactor, TableWithJoins,
    UnaryOperator, Value as AstValue,
};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;
use thiserror::Error;

use super::{Database, ResultSet, Value};
use crate::schema::ci;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("SQL syntax error: {0}")]
    Syntax(String),
    #[error("execution error: {0}")]
    Runtime(String),
}

fn rt(msg: impl Into<String>) -> ExecError {
    ExecError::Runtime(msg.into())
}

/// Execute a SELECT statement over an in-memory database.
pub fn execute(sql: &str, db: &Database) -> Result<ResultSet, ExecError> {
    let mut statements = Parser::parse_sql(&SQLiteDialect {}, sql)
        .map_err(|e| ExecError::Syntax(e.to_string()))?;
    if statements.len() != 1 {
        return Err(ExecError::Syntax("expected exactly one statement".into()));
    }
    let query = match statements.remove(0) {
        Statement::Query(q) => *q,
        other => return Err(ExecError::Syntax(format!("not a query: {other}"))),
    };
    eval_query(&query, db, None)
}

/// Whether the query sorts its top-level output (result comparison must
/// then be ordered).
pub fn has_top_level_order_by(sql: &str) -> bool {
    let Ok(statements) = Parser::parse_sql(&SQLiteDialect {}, sql) else {
        return false;
    };
    match statements.first() {
        Some(Statement::Query(q)) => q
            .order_by
            .as_ref()
            .map(|o| !o.exprs.is_empty())
            .unwrap_or(false),
        _ => false,
    }
}

#[derive(Debug, Clone)]
struct RelMeta {
    /// Matching key for qualified references.
    qualifier: String,
    /// Unaliased relations also answer to their bare name (same value).
    columns: Vec<String>,
    offset: usize,
}

#[derive(Debug, Clone)]
struct Relation {
    metas: Vec<RelMeta>,
    width: usize,
    rows: Vec<Vec<Value>>,
}

/// Evaluation context: the current joined row plus any outer rows for
/// correlated subqueries.
struct RowCtx<'a> {
    metas: &'a [RelMeta],
    row: &'a [Value],
    outer: Option<&'a RowCtx<'a>>,
}

struct GroupCtx<'a> {
    metas: &'a [RelMeta],
    rows: &'a [Vec<Value>],
    outer: Option<&'a RowCtx<'a>>,
}

fn eval_query(query: &Query, db: &Database, outer: Option<&RowCtx>) -> Result<ResultSet, ExecError> {
    if query.with.is_some() {
        return Err(rt("WITH is not supported by the embedded engine"));
    }
    let mut result = eval_set_expr(&query.body, db, outer, query)?;

    if let Some(limit) = &query.limit {
        let n = match eval_expr(limit, None, db, None)? {
            Value::Int(n) if n >= 0 => n as usize,
            v => return Err(rt(format!("bad LIMIT value {v}"))),
        };
        let offset = match &query.offset {
            Some(o) => match eval_expr(&o.value, None, db, None)? {
                Value::Int(n) if n >= 0 => n as usize,
                v => return Err(rt(format!("bad OFFSET value {v}"))),
            },
            None => 0,
        };
        result.rows = result.rows.into_iter().skip(offset).take(n).collect();
    }
    Ok(result)
}

fn eval_set_expr(
    body: &SetExpr,
    db: &Database,
    outer: Option<&RowCtx>,
    query: &Query,
) -> Result<ResultSet, ExecError> {
    match body {
        SetExpr::Select(select) => eval_select(select, db, outer, query.order_by.as_ref()),
        SetExpr::Query(inner) => eval_query(inner, db, outer),
        SetExpr::SetOperation {
            op,
            set_quantifier,
            left,
            right,
        } => {
            let l = eval_set_expr(left, db, outer, query)?;
            let r = eval_set_expr(right, db, outer, query)?;
            if !l.rows.is_empty() && !r.rows.is_empty() && l.rows[0].len() != r.rows[0].len() {
                return Err(rt("set operation arity mismatch"));
            }
            let mut rows = match (op, set_quantifier) {
                (SetOperator::Union, SetQuantifier::All) => {
                    let mut rows = l.rows;
                    rows.extend(r.rows);
                    rows
                }
                (SetOperator::Union, _) => {
                    let mut rows = l.rows;
                    rows.extend(r.rows);
                    dedupe(rows)
                }
                (SetOperator::Intersect, _) => {
                    let rset: std::collections::BTreeSet<Vec<Value>> = r.rows.into_iter().collect();
                    dedupe(l.rows.into_iter().filter(|row| rset.contains(row)).collect())
                }
                (SetOperator::Except, _) => {
                    let rset: std::collections::BTreeSet<Vec<Value>> = r.rows.into_iter().collect();
                    dedupe(l.rows.into_iter().filter(|row| !rset.contains(row)).collect())
                }
            };
            // ORDER BY over a set operation sorts by output position of the
            // left arm's labels or ordinals.
            if let Some(order) = &query.order_by {
                let keys: Vec<(usize, bool, Option<bool>)> = order
                    .exprs
                    .iter()
                    .map(|o| set_op_sort_key(o, &l.column_labels))
                    .collect::<Result<_, _>>()?;
                rows.sort_by(|a, b| {
                    for (idx, asc, nulls_first) in &keys {
                        let ord = order_values(&a[*idx], &b[*idx], *asc, *nulls_first);
                        if ord != Ordering::Equal {
                            return ord;
                        }
                    }
                    Ordering::Equal
                });
            }
            Ok(ResultSet {
                column_labels: l.column_labels,
                rows,
            })
        }
        other => Err(rt(format!("unsupported query body: {other}"))),
    }
}

fn set_op_sort_key(
    item: &OrderByExpr,
    labels: &[String],
) -> Result<(usize, bool, Option<bool>), ExecError> {
    let idx = match &item.expr {
        Expr::Value(AstValue::Number(n, _)) => n
            .parse::<usize>()
            .ok()
            .and_then(|n| n.checked_sub(1))
            .ok_or_else(|| rt("bad ORDER BY ordinal"))?,
        Expr::Identifier(ident) => labels
            .iter()
            .position(|l| ci(l) == ci(&ident.value))
            .ok_or_else(|| rt(format!("unknown ORDER BY label `{}`", ident.value)))?,
        other => return Err(rt(format!("unsupported set-op ORDER BY expr {other}"))),
    };
    Ok((idx, item.asc.unwrap_or(true), item.nulls_first))
}

fn dedupe(rows: Vec<Vec<Value>>) -> Vec<Vec<Value>> {
    let mut seen = std::collections::BTreeSet::new();
    rows.into_iter().filter(|r| seen.insert(r.clone())).collect()
}

fn eval_select(
    select: &Select,
    db: &Database,
    outer: Option<&RowCtx>,
    order_by: Option<&sqlparser::ast::OrderBy>,
) -> Result<ResultSet, ExecError> {
    // FROM
    let relation = eval_from(&select.from, db, outer)?;
    let metas = relation.metas;

    // WHERE
    let mut rows = Vec::new();
    for row in relation.rows {
        let keep = match &select.selection {
            Some(pred) => {
                let ctx = RowCtx { metas: &metas, row: &row, outer };
                truth(&eval_expr(pred, Some(&ctx), db, None)?) == Some(true)
            }
            None => true,
        };
        if keep {
            rows.push(row);
        }
    }

    let group_exprs: Vec<Expr> = match &select.group_by {
        GroupByExpr::Expressions(exprs, _) => exprs.clone(),
        _ => Vec::new(),
    };
    let has_aggregates = select.projection.iter().any(|item| match item {
        SelectItem::UnnamedExpr(e) | SelectItem::ExprWithAlias { expr: e, .. } => {
            contains_aggregate(e)
        }
        _ => false,
    }) || select.having.as_ref().map(|h| contains_aggregate(h)).unwrap_or(false);

    let aliases: Vec<(String, Expr)> = select
        .projection
        .iter()
        .filter_map(|item| match item {
            SelectItem::ExprWithAlias { expr, alias } => {
                Some((ci(&alias.value), expr.clone()))
            }
            _ => None,
        })
        .collect();

    // Each output unit: projected values + sort keys.
    let mut output: Vec<(Vec<Value>, Vec<Value>)> = Vec::new();
    let mut labels: Vec<String> = Vec::new();

    let order_exprs: Vec<&OrderByExpr> = order_by.map(|o| o.exprs.iter().collect()).unwrap_or_default();

    if !group_exprs.is_empty() || has_aggregates {
        // Grouped path. GROUP BY keys may be ordinals or aliases.
        let mut groups: Vec<(Vec<Value>, Vec<Vec<Value>>)> = Vec::new();
        let mut index: std::collections::BTreeMap<Vec<Value>, usize> = Default::default();
        for row in rows {
            let ctx = RowCtx { metas: &metas, row: &row, outer };
            let mut key = Vec::new();
            for g in &group_exprs {
                let resolved = resolve_ordinal_or_alias(g, &select.projection, &aliases);
                key.push(eval_expr(&resolved, Some(&ctx), db, None)?);
            }
            match index.get(&key) {
                Some(i) => groups[*i].1.push(row),
                None => {
                    index.insert(key.clone(), groups.len());
                    groups.push((key, vec![row]));
                }
            }
        }
        if group_exprs.is_empty() && groups.is_empty() {
            // Aggregate over an empty input still yields one row.
            groups.push((Vec::new(), Vec::new()));
        }

        for (_, group_rows) in groups {
            let group = GroupCtx { metas: &metas, rows: &group_rows, outer };
            if let Some(having) = &select.having {
                if truth(&eval_group_expr(having, &group, db)?) != Some(true) {
                    continue;
                }
            }
            let (projected, item_labels) =
                project_group(&select.projection, &group, db)?;
            if labels.is_empty() {
                labels = item_labels;
            }
            let mut keys = Vec::new();
            for o in &order_exprs {
                let resolved = resolve_ordinal_or_alias(&o.expr, &select.projection, &aliases);
                keys.push(eval_group_expr(&resolved, &group, db)?);
            }
            output.push((projected, keys));
        }
    } else {
        for row in &rows {
            let ctx = RowCtx { metas: &metas, row, outer };
            let (projected, item_labels) = project_row(&select.projection, &ctx, db)?;
            if labels.is_empty() {
                labels = item_labels;
            }
            let mut keys = Vec::new();
            for o in &order_exprs {
                let resolved = resolve_ordinal_or_alias(&o.expr, &select.projection, &aliases);
                keys.push(eval_expr(&resolved, Some(&ctx), db, None)?);
            }
            output.push((projected, keys));
        }
        if output.is_empty() {
            labels = projection_labels(&select.projection, &metas);
        }
    }

    if select.distinct.is_some() {
        let mut seen = std::collections::BTreeSet::new();
        output.retain(|(projected, _)| seen.insert(projected.clone()));
    }

    if !order_exprs.is_empty() {
        let specs: Vec<(bool, Option<bool>)> = order_exprs
            .iter()
            .map(|o| (o.asc.unwrap_or(true), o.nulls_first))
            .collect();
        output.sort_by(|a, b| {
            for (i, (asc, nulls_first)) in specs.iter().enumerate() {
                let ord = order_values(&a.1[i], &b.1[i], *asc, *nulls_first);
                if ord != Ordering::Equal {
                    return ord;
                }
            }
            Ordering::Equal
        });
    }

    Ok(ResultSet {
        column_labels: labels,
        rows: output.into_iter().map(|(p, _)| p).collect(),
    })
}

/// SQLite ordering: ASC puts NULL first, DESC puts NULL last, unless the
/// query says otherwise.
fn order_values(a: &Value, b: &Value, asc: bool, nulls_first: Option<bool>) -> Ordering {
    let nulls_first = nulls_first.unwrap_or(asc);
    match (a.is_null(), b.is_null()) {
        (true, true) => Ordering::Equal,
        (true, false) => {
            if nulls_first {
                Ordering::Less
            } else {
                Ordering::Greater
            }
        }
        (false, true) => {
            if nulls_first {
                Ordering::Greater
            } else {
                Ordering::Less
            }
        }
        (false, false) => {
            let ord = a.cmp(b);
            if asc {
                ord
            } else {
                ord.reverse()
            }
        }
    }
}

fn resolve_ordinal_or_alias(
    expr: &Expr,
    projection: &[SelectItem],
    aliases: &[(String, Expr)],
) -> Expr {
    match expr {
        Expr::Value(AstValue::Number(n, _)) => {
            if let Ok(i) = n.parse::<usize>() {
                if i >= 1 {
                    if let Some(item) = projection.get(i - 1) {
                        match item {
                            SelectItem::UnnamedExpr(e)
                            | SelectItem::ExprWithAlias { expr: e, .. } => return e.clone(),
                            _ => {}
                        }
                    }
                }
            }
            expr.clone()
        }
        Expr::Identifier(ident) => {
            for (alias, aliased) in aliases {
                if *alias == ci(&ident.value) {
                    return aliased.clone();
                }
            }
            expr.clone()
        }
        other => other.clone(),
    }
}

fn projection_labels(projection: &[SelectItem], metas: &[RelMeta]) -> Vec<String> {
    let mut labels = Vec::new();
    for item in projection {
        match item {
            SelectItem::UnnamedExpr(Expr::Identifier(i)) => labels.push(i.value.clone()),
            SelectItem::UnnamedExpr(Expr::CompoundIdentifier(parts)) => {
                labels.push(parts.last().map(|i| i.value.clone()).unwrap_or_default())
            }
            SelectItem::UnnamedExpr(e) => labels.push(e.to_string()),
            SelectItem::ExprWithAlias { alias, .. } => labels.push(alias.value.clone()),
            SelectItem::Wildcard(_) => {
                for meta in metas {
                    labels.extend(meta.columns.iter().cloned());
                }
            }
            SelectItem::QualifiedWildcard(name, _) => {
                let key = ci(&object_tail(name));
                for meta in metas {
                    if meta.qualifier == key {
                        labels.extend(meta.columns.iter().cloned());
                    }
                }
            }
        }
    }
    labels
}

fn project_row(
    projection: &[SelectItem],
    ctx: &RowCtx,
    db: &Database,
) -> Result<(Vec<Value>, Vec<String>), ExecError> {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for item in projection {
        match item {
            SelectItem::UnnamedExpr(e) => {
                values.push(eval_expr(e, Some(ctx), db, None)?);
                labels.push(label_of(e));
            }
            SelectItem::ExprWithAlias { expr, alias } => {
                values.push(eval_expr(expr, Some(ctx), db, None)?);
                labels.push(alias.value.clone());
            }
            SelectItem::Wildcard(_) => {
                for meta in ctx.metas {
                    for (i, c) in meta.columns.iter().enumerate() {
                        values.push(ctx.row[meta.offset + i].clone());
                        labels.push(c.clone());
                    }
                }
            }
            SelectItem::QualifiedWildcard(name, _) => {
                let key = ci(&object_tail(name));
                let mut hit = false;
                for meta in ctx.metas {
                    if meta.qualifier == key {
                        hit = true;
                        for (i, c) in meta.columns.iter().enumerate() {
                            values.push(ctx.row[meta.offset + i].clone());
                            labels.push(c.clone());
                        }
                    }
                }
                if !hit {
                    return Err(rt(format!("unknown wildcard qualifier `{key}`")));
                }
            }
        }
    }
    Ok((values, labels))
}

fn project_group(
    projection: &[SelectItem],
    group: &GroupCtx,
    db: &Database,
) -> Result<(Vec<Value>, Vec<String>), ExecError> {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for item in projection {
        match item {
            SelectItem::UnnamedExpr(e) => {
                values.push(eval_group_expr(e, group, db)?);
                labels.push(label_of(e));
            }
            SelectItem::ExprWithAlias { expr, alias } => {
                values.push(eval_group_expr(expr, group, db)?);
                labels.push(alias.value.clone());
            }
            other => {
                return Err(rt(format!(
                    "wildcards are not valid in grouped projections: {other}"
                )))
            }
        }
    }
    Ok((values, labels))
}

fn label_of(e: &Expr) -> String {
    match e {
        Expr::Identifier(i) => i.value.clone(),
        Expr::CompoundIdentifier(parts) => {
            parts.last().map(|i| i.value.clone()).unwrap_or_default()
        }
        other => other.to_string(),
    }
}

/// Evaluate with aggregates computed over the group; bare columns take
/// their value from the group's first row.
fn eval_group_expr(expr: &Expr, group: &GroupCtx, db: &Database) -> Result<Value, ExecError> {
    if let Expr::Function(f) = expr {
        if let Some(agg) = aggregate_name(f) {
            return eval_aggregate(&agg, f, group, db);
        }
    }
    match expr {
        Expr::BinaryOp { left, op, right } => {
            let l = eval_group_expr(left, group, db)?;
            let r = eval_group_expr(right, group, db)?;
            binary_op(&l, op, &r)
        }
        Expr::UnaryOp { op, expr } => {
            let v = eval_group_expr(expr, group, db)?;
            unary_op(op, &v)
        }
        Expr::Nested(inner) => eval_group_expr(inner, group, db),
        _ => match group.rows.first() {
            Some(row) => {
                let ctx = RowCtx {
                    metas: group.metas,
                    row,
                    outer: group.outer,
                };
                eval_expr(expr, Some(&ctx), db, None)
            }
            None => match expr {
                // No rows: only literals have a value.
                Expr::Value(_) => eval_expr(expr, None, db, None),
                _ => Ok(Value::Null),
            },
        },
    }
}

fn aggregate_name(f: &sqlparser::ast::Function) -> Option<String> {
    let name = ci(&object_tail(&f.name));
    if ["count", "sum", "avg", "min", "max", "total"].contains(&name.as_str()) {
        Some(name)
    } else {
        None
    }
}

fn contains_aggregate(e: &Expr) -> bool {
    match e {
        Expr::Function(f) => {
            if aggregate_name(f).is_some() {
                return true;
            }
            if let FunctionArguments::List(list) = &f.args {
                list.args.iter().any(|a| match a {
                    FunctionArg::Unnamed(FunctionArgExpr::Expr(e))
                    | FunctionArg::Named {
                        arg: FunctionArgExpr::Expr(e),
                        ..
                    } => contains_aggregate(e),
                    _ => false,
                })
            } else {
                false
            }
        }
        Expr::BinaryOp { left, right, .. } => contains_aggregate(left) || contains_aggregate(right),
        Expr::UnaryOp { expr, .. } | Expr::Nested(expr) | Expr::Cast { expr, .. } => {
            contains_aggregate(expr)
        }
        Expr::Case {
            operand,
            conditions,
            results,
            else_result,
        } => {
            operand.as_deref().map(contains_aggregate).unwrap_or(false)
                || conditions.iter().any(contains_aggregate)
                || results.iter().any(contains_aggregate)
                || else_result.as_deref().map(contains_aggregate).unwrap_or(false)
        }
        _ => false,
    }
}

fn eval_aggregate(
    name: &str,
    f: &sqlparser::ast::Function,
    group: &GroupCtx,
    db: &Database,
) -> Result<Value, ExecError> {
    let FunctionArguments::List(list) = &f.args else {
        return Err(rt(format!("aggregate {name} needs arguments")));
    };
    let distinct = matches!(
        list.duplicate_treatment,
        Some(sqlparser::ast::DuplicateTreatment::Distinct)
    );

    // COUNT(*)
    if name == "count" {
        if matches!(
            list.args.first(),
            Some(FunctionArg::Unnamed(FunctionArgExpr::Wildcard))
        ) {
            return Ok(Value::Int(group.rows.len() as i64));
        }
    }

    let arg = match list.args.first() {
        Some(FunctionArg::Unnamed(FunctionArgExpr::Expr(e))) => e,
        _ => return Err(rt(format!("aggregate {name} needs an expression argument"))),
    };

    let mut values: Vec<Value> = Vec::new();
    for row in group.rows {
        let ctx = RowCtx {
            metas: group.metas,
            row,
            outer: group.outer,
        };
        let v = eval_expr(arg, Some(&ctx), db, None)?;
        if !v.is_null() {
            values.push(v);
        }
    }
    if distinct {
        let mut seen = std::collections::BTreeSet::new();
        values.retain(|v| seen.insert(v.clone()));
    }

    match name {
        "count" => Ok(Value::Int(values.len() as i64)),
        "sum" | "total" => {
            if values.is_empty() {
                return Ok(if name == "total" {
                    Value::Real(0.0)
                } else {
                    Value::Null
                });
            }
            let any_real = values.iter().any(|v| matches!(v, Value::Real(_)));
            if any_real || name == "total" {
                let mut acc = 0.0;
                for v in &values {
                    acc += as_f64(v)?;
                }
                Ok(Value::Real(acc))
            } else {
                let mut acc: i64 = 0;
                for v in &values {
                    if let Value::Int(i) = v {
                        acc = acc.wrapping_add(*i);
                    }
                }
                Ok(Value::Int(acc))
            }
        }
        "avg" => {
            if values.is_empty() {
                return Ok(Value::Null);
            }
            let mut acc = 0.0;
            for v in &values {
                acc += as_f64(v)?;
            }
            Ok(Value::Real(acc / values.len() as f64))
        }
        "min" => Ok(values.into_iter().min().unwrap_or(Value::Null)),
        "max" => Ok(values.into_iter().max().unwrap_or(Value::Null)),
        other => Err(rt(format!("unknown aggregate {other}"))),
    }
}

fn as_f64(v: &Value) -> Result<f64, ExecError> {
    match v {
        Value::Int(i) => Ok(*i as f64),
        Value::Real(r) => Ok(*r),
        Value::Text(s) => Ok(s.trim().parse::<f64>().unwrap_or(0.0)),
        Value::Null => Err(rt("NULL in numeric aggregate")),
    }
}

fn eval_from(
    from: &[TableWithJoins],
    db: &Database,
    outer: Option<&RowCtx>,
) -> Result<Relation, ExecError> {
    if from.is_empty() {
        return Ok(Relation {
            metas: Vec::new(),
            width: 0,
            rows: vec![Vec::new()],
        });
    }
    let mut acc: Option<Relation> = None;
    for twj in from {
        let rel = eval_table_with_joins(twj, db, outer)?;
        acc = Some(match acc {
            None => rel,
            Some(left) => cross_join(left, rel),
        });
    }
    Ok(acc.unwrap())
}

fn eval_table_with_joins(
    twj: &TableWithJoins,
    db: &Database,
    outer: Option<&RowCtx>,
) -> Result<Relation, ExecError> {
    let mut acc = eval_factor(&twj.relation, db, outer)?;
    for join in &twj.joins {
        acc = apply_join(acc, join, db, outer)?;
    }
    Ok(acc)
}

fn apply_join(
    left: Relation,
    join: &Join,
    db: &Database,
    outer: Option<&RowCtx>,
) -> Result<Relation, ExecError> {
    let right = eval_factor(&join.relation, db, outer)?;
    match &join.join_operator {
        JoinOperator::CrossJoin => Ok(cross_join(left, right)),
        JoinOperator::Inner(constraint) => {
            join_on(left, right, constraint, db, outer, false)
        }
        JoinOperator::LeftOuter(constraint) => {
            join_on(left, right, constraint, db, outer, true)
        }
        other => Err(rt(format!("unsupported join operator {other:?}"))),
    }
}

fn join_on(
    left: Relation,
    right: Relation,
    constraint: &JoinConstraint,
    db: &Database,
    outer: Option<&RowCtx>,
    left_outer: bool,
) -> Result<Relation, ExecError> {
    let pred = match constraint {
        JoinConstraint::On(e) => Some(e),
        JoinConstraint::None => None,
        other => return Err(rt(format!("unsupported join constraint {other:?}"))),
    };
    let mut metas = left.metas.clone();
    for m in &right.metas {
        let mut m = m.clone();
        m.offset += left.width;
        metas.push(m);
    }
    let width = left.width + right.width;
    let mut rows = Vec::new();
    for lrow in &left.rows {
        let mut matched = false;
        for rrow in &right.rows {
            let mut combined = lrow.clone();
            combined.extend(rrow.iter().cloned());
            let ok = match pred {
                Some(p) => {
                    let ctx = RowCtx {
                        metas: &metas,
                        row: &combined,
                        outer,
                    };
                    truth(&eval_expr(p, Some(&ctx), db, None)?) == Some(true)
                }
                None => true,
            };
            if ok {
                matched = true;
                rows.push(combined);
            }
        }
        if left_outer && !matched {
            let mut combined = lrow.clone();
            combined.extend(std::iter::repeat(Value::Null).take(right.width));
            rows.push(combined);
        }
    }
    Ok(Relation { metas, width, rows })
}

fn cross_join(left: Relation, right: Relation) -> Relation {
    let mut metas = left.metas.clone();
    for m in &right.metas {
        let mut m = m.clone();
        m.offset += left.width;
        metas.push(m);
    }
    let mut rows = Vec::new();
    for lrow in &left.rows {
        for rrow in &right.rows {
            let mut combined = lrow.clone();
            combined.extend(rrow.iter().cloned());
            rows.push(combined);
        }
    }
    Relation {
        metas,
        width: left.width + right.width,
        rows,
    }
}

fn eval_factor(
    factor: &TableFactor,
    db: &Database,
    outer: Option<&RowCtx>,
) -> Result<Relation, ExecError> {
    match factor {
        TableFactor::Table { name, alias, .. } => {
            let table_name = object_tail(name);
            let table = db
                .schema
                .table(&table_name)
                .ok_or_else(|| rt(format!("no such table: {table_name}")))?;
            let rows = db
                .rows(&table.name)
                .cloned()
                .ok_or_else(|| rt(format!("no rows stored for {table_name}")))?;
            let qualifier = alias
                .as_ref()
                .map(|a| ci(&a.name.value))
                .unwrap_or_else(|| ci(&table_name));
            Ok(Relation {
                metas: vec![RelMeta {
                    qualifier,
                    columns: table.columns.iter().map(|c| ci(&c.name)).collect(),
                    offset: 0,
                }],
                width: table.columns.len(),
                rows,
            })
        }
        TableFactor::Derived {
            subquery, alias, ..
        } => {
            let result = eval_query(subquery, db, outer)?;
            let alias = alias
                .as_ref()
                .map(|a| ci(&a.name.value))
                .ok_or_else(|| rt("derived tables need an alias"))?;
            let width = result.column_labels.len();
            Ok(Relation {
                metas: vec![RelMeta {
                    qualifier: alias,
                    columns: result.column_labels.iter().map(|l| ci(l)).collect(),
                    offset: 0,
                }],
                width,
                rows: result.rows,
            })
        }
        TableFactor::NestedJoin {
            table_with_joins, ..
        } => eval_table_with_joins(table_with_joins, db, outer),
        other => Err(rt(format!("unsupported table factor {other}"))),
    }
}

fn object_tail(name: &ObjectName) -> String {
    name.0.last().map(|i| i.value.clone()).unwrap_or_default()
}

fn lookup(ctx: &RowCtx, qualifier: Option<&str>, column: &str) -> Option<Value> {
    let ckey = ci(column);
    match qualifier {
        Some(q) => {
            let qkey = ci(q);
            for meta in ctx.metas {
                if meta.qualifier == qkey {
                    if let Some(i) = meta.columns.iter().position(|c| *c == ckey) {
                        return Some(ctx.row[meta.offset + i].clone());
                    }
                }
            }
        }
        None => {
            for meta in ctx.metas {
                if let Some(i) = meta.columns.iter().position(|c| *c == ckey) {
                    return Some(ctx.row[meta.offset + i].clone());
                }
            }
        }
    }
    ctx.outer.and_then(|o| lookup(o, qualifier, column))
}

fn eval_expr(
    expr: &Expr,
    ctx: Option<&RowCtx>,
    db: &Database,
    group: Option<&GroupCtx>,
) -> Result<Value, ExecError> {
    if let Some(group) = group {
        return eval_group_expr(expr, group, db);
    }
    match expr {
        Expr::Value(v) => literal(v),
        Expr::Identifier(ident) => {
            if ident.quote_style.is_none() && ident.value.eq_ignore_ascii_case("null") {
                return Ok(Value::Null);
            }
            let ctx = ctx.ok_or_else(|| rt(format!("no row context for `{}`", ident.value)))?;
            lookup(ctx, None, &ident.value)
                .ok_or_else(|| rt(format!("no such column: {}", ident.value)))
        }
        Expr::CompoundIdentifier(parts) => {
            if parts.len() < 2 {
                return Err(rt("bad compound identifier"));
            }
            let q = &parts[parts.len() - 2].value;
            let c = &parts[parts.len() - 1].value;
            let ctx = ctx.ok_or_else(|| rt(format!("no row context for `{q}.{c}`")))?;
            lookup(ctx, Some(q), c).ok_or_else(|| rt(format!("no such column: {q}.{c}")))
        }
        Expr::BinaryOp { left, op, right } => {
            // AND/OR need lazy-ish 3VL handling.
            match op {
                BinaryOperator::And => {
                    let l = truth(&eval_expr(left, ctx, db, None)?);
                    let r = truth(&eval_expr(right, ctx, db, None)?);
                    Ok(truth_value(and3(l, r)))
                }
                BinaryOperator::Or => {
                    let l = truth(&eval_expr(left, ctx, db, None)?);
                    let r = truth(&eval_expr(right, ctx, db, None)?);
                    Ok(truth_value(or3(l, r)))
                }
                _ => {
                    let l = eval_expr(left, ctx, db, None)?;
                    let r = eval_expr(right, ctx, db, None)?;
                    binary_op(&l, op, &r)
                }
            }
        }
        Expr::UnaryOp { op, expr } => {
            let v = eval_expr(expr, ctx, db, None)?;
            unary_op(op, &v)
        }
        Expr::Nested(inner) => eval_expr(inner, ctx, db, None),
        Expr::IsNull(inner) => Ok(Value::Int(
            eval_expr(inner, ctx, db, None)?.is_null() as i64
        )),
        Expr::IsNotNull(inner) => Ok(Value::Int(
            !eval_expr(inner, ctx, db, None)?.is_null() as i64
        )),
        Expr::Between {
            expr,
            negated,
            low,
            high,
        } => {
            let v = eval_expr(expr, ctx, db, None)?;
            let lo = eval_expr(low, ctx, db, None)?;
            let hi = eval_expr(high, ctx, db, None)?;
            let ge = compare(&v, &lo).map(|o| o != Ordering::Less);
            let le = compare(&v, &hi).map(|o| o != Ordering::Greater);
            let t = and3(ge, le);
            Ok(truth_value(if *negated { not3(t) } else { t }))
        }
        Expr::InList {
            expr,
            list,
            negated,
        } => {
            let v = eval_expr(expr, ctx, db, None)?;
            let mut any_null = false;
            let mut found = false;
            for item in list {
                let w = eval_expr(item, ctx, db, None)?;
                match compare(&v, &w) {
                    None => any_null = true,
                    Some(Ordering::Equal) => {
                        found = true;
                        break;
                    }
                    _ => {}
                }
            }
            let t = if found {
                Some(true)
            } else if any_null || v.is_null() {
                None
            } else {
                Some(false)
            };
            Ok(truth_value(if *negated { not3(t) } else { t }))
        }
        Expr::InSubquery {
            expr,
            subquery,
            negated,
        } => {
            let v = eval_expr(expr, ctx, db, None)?;
            let result = eval_query(subquery, db, ctx)?;
            let mut any_null = false;
            let mut found = false;
            for row in &result.rows {
                let w = row.first().cloned().unwrap_or(Value::Null);
                match compare(&v, &w) {
                    None => any_null = true,
                    Some(Ordering::Equal) => {
                        found = true;
                        break;
                    }
                    _ => {}
                }
            }
            let t = if found {
                Some(true)
            } else if any_null || v.is_null() {
                None
            } else {
                Some(false)
            };
            Ok(truth_value(if *negated { not3(t) } else { t }))
        }
        Expr::Exists { subquery, negated } => {
            let result = eval_query(subquery, db, ctx)?;
            let exists = !result.rows.is_empty();
            Ok(Value::Int((exists ^ negated) as i64))
        }
        Expr::Subquery(subquery) => {
            let result = eval_query(subquery, db, ctx)?;
            Ok(result
                .rows
                .first()
                .and_then(|r| r.first().cloned())
                .unwrap_or(Value::Null))
        }
        Expr::Like {
            negated,
            expr,
            pattern,
            escape_char,
            ..
        } => {
            let v = eval_expr(expr, ctx, db, None)?;
            let p = eval_expr(pattern, ctx, db, None)?;
            if v.is_null() || p.is_null() {
                return Ok(Value::Null);
            }
            let escape = escape_char
                .as_ref()
                .and_then(|s| s.chars().next());
            let m = like_match(&v.render_text(), &p.render_text(), escape);
            Ok(Value::Int((m ^ negated) as i64))
        }
        Expr::Case {
            operand,
            conditions,
            results,
            else_result,
        } => {
            match operand {
                Some(op) => {
                    let base = eval_expr(op, ctx, db, None)?;
                    for (cond, res) in conditions.iter().zip(results) {
                        let w = eval_expr(cond, ctx, db, None)?;
                        if compare(&base, &w) == Some(Ordering::Equal) {
                            return eval_expr(res, ctx, db, None);
                        }
                    }
                }
                None => {
                    for (cond, res) in conditions.iter().zip(results) {
                        if truth(&eval_expr(cond, ctx, db, None)?) == Some(true) {
                            return eval_expr(res, ctx, db, None);
                        }
                    }
                }
            }
            match else_result {
                Some(e) => eval_expr(e, ctx, db, None),
                None => Ok(Value::Null),
            }
        }
        Expr::Cast {
            kind: CastKind::Cast | CastKind::DoubleColon,
            expr,
            data_type,
            ..
        } => {
            let v = eval_expr(expr, ctx, db, None)?;
            Ok(cast(&v, data_type))
        }
        Expr::Function(f) => eval_function(f, ctx, db),
        Expr::Tuple(items) if items.len() == 1 => eval_expr(&items[0], ctx, db, None),
        other => Err(rt(format!("unsupported expression: {other}"))),
    }
}

fn literal(v: &AstValue) -> Result<Value, ExecError> {
    match v {
        AstValue::Number(n, _) => {
            if let Ok(i) = n.parse::<i64>() {
                Ok(Value::Int(i))
            } else {
                n.parse::<f64>()
                    .map(Value::Real)
                    .map_err(|_| rt(format!("bad numeric literal {n}")))
            }
        }
        AstValue::SingleQuotedString(s) | AstValue::DoubleQuotedString(s) => {
            Ok(Value::Text(s.clone()))
        }
        AstValue::Null => Ok(Value::Null),
        AstValue::Boolean(b) => Ok(Value::Int(*b as i64)),
        other => Err(rt(format!("unsupported literal {other}"))),
    }
}

fn truth(v: &Value) -> Option<bool> {
    match v {
        Value::Null => None,
        Value::Int(i) => Some(*i != 0),
        Value::Real(r) => Some(*r != 0.0),
        Value::Text(s) => Some(s.trim().parse::<f64>().map(|f| f != 0.0).unwrap_or(false)),
    }
}

fn truth_value(t: Option<bool>) -> Value {
    match t {
        Some(b) => Value::Int(b as i64),
        None => Value::Null,
    }
}

fn and3(a: Option<bool>, b: Option<bool>) -> Option<bool> {
    match (a, b) {
        (Some(false), _) | (_, Some(false)) => Some(false),
        (Some(true), Some(true)) => Some(true),
        _ => None,
    }
}

fn or3(a: Option<bool>, b: Option<bool>) -> Option<bool> {
    match (a, b) {
        (Some(true), _) | (_, Some(true)) => Some(true),
        (Some(false), Some(false)) => Some(false),
        _ => None,
    }
}

fn not3(a: Option<bool>) -> Option<bool> {
    a.map(|b| !b)
}

/// NULL-propagating comparison; mixed numeric classes compare numerically,
/// otherwise storage classes order.
fn compare(a: &Value, b: &Value) -> Option<Ordering> {
    if a.is_null() || b.is_null() {
        return None;
    }
    Some(a.cmp(b))
}

fn binary_op(l: &Value, op: &BinaryOperator, r: &Value) -> Result<Value, ExecError> {
    use BinaryOperator::*;
    match op {
        Eq => Ok(truth_value(compare(l, r).map(|o| o == Ordering::Equal))),
        NotEq => Ok(truth_value(compare(l, r).map(|o| o != Ordering::Equal))),
        Lt => Ok(truth_value(compare(l, r).map(|o| o == Ordering::Less))),
        LtEq => Ok(truth_value(compare(l, r).map(|o| o != Ordering::Greater))),
        Gt => Ok(truth_value(compare(l, r).map(|o| o == Ordering::Greater))),
        GtEq => Ok(truth_value(compare(l, r).map(|o| o != Ordering::Less))),
        Plus | Minus | Multiply | Divide | Modulo => arith(l, op, r),
        StringConcat => {
            if l.is_null() || r.is_null() {
                Ok(Value::Null)
            } else {
                Ok(Value::Text(format!("{}{}", l.render_text(), r.render_text())))
            }
        }
        And | Or => unreachable!("handled lazily"),
        other => Err(rt(format!("unsupported operator {other}"))),
    }
}

fn arith(l: &Value, op: &BinaryOperator, r: &Value) -> Result<Value, ExecError> {
    use BinaryOperator::*;
    if l.is_null() || r.is_null() {
        return Ok(Value::Null);
    }
    let both_int = matches!((l, r), (Value::Int(_), Value::Int(_)));
    if both_int {
        let (a, b) = match (l, r) {
            (Value::Int(a), Value::Int(b)) => (*a, *b),
            _ => unreachable!(),
        };
        return Ok(match op {
            Plus => Value::Int(a.wrapping_add(b)),
            Minus => Value::Int(a.wrapping_sub(b)),
            Multiply => Value::Int(a.wrapping_mul(b)),
            Divide => {
                if b == 0 {
                    Value::Null
                } else {
                    Value::Int(a.wrapping_div(b))
                }
            }
            Modulo => {
                if b == 0 {
                    Value::Null
                } else {
                    Value::Int(a.wrapping_rem(b))
                }
            }
            _ => unreachable!(),
        });
    }
    let a = numeric(l);
    let b = numeric(r);
    Ok(match op {
        Plus => Value::Real(a + b),
        Minus => Value::Real(a - b),
        Multiply => Value::Real(a * b),
        Divide => {
            if b == 0.0 {
                Value::Null
            } else {
                Value::Real(a / b)
            }
        }
        Modulo => {
            if b == 0.0 {
                Value::Null
            } else {
                Value::Real(a % b)
            }
        }
        _ => unreachable!(),
    })
}

fn numeric(v: &Value) -> f64 {
    match v {
        Value::Int(i) => *i as f64,
        Value::Real(r) => *r,
        Value::Text(s) => s.trim().parse::<f64>().unwrap_or(0.0),
        Value::Null => 0.0,
    }
}

fn unary_op(op: &UnaryOperator, v: &Value) -> Result<Value, ExecError> {
    match op {
        UnaryOperator::Minus => match v {
            Value::Null => Ok(Value::Null),
            Value::Int(i) => Ok(Value::Int(-i)),
            Value::Real(r) => Ok(Value::Real(-r)),
            Value::Text(s) => Ok(Value::Real(-s.trim().parse::<f64>().unwrap_or(0.0))),
        },
        UnaryOperator::Plus => Ok(v.clone()),
        UnaryOperator::Not => Ok(truth_value(not3(truth(v)))),
        other => Err(rt(format!("unsupported unary operator {other}"))),
    }
}

fn cast(v: &Value, data_type: &DataType) -> Value {
    let ty = data_type.to_string().to_uppercase();
    if v.is_null() {
        return Value::Null;
    }
    if ty.starts_with("INT") {
        match v {
            Value::Int(i) => Value::Int(*i),
            Value::Real(r) => Value::Int(*r as i64),
            Value::Text(s) => Value::Int(parse_prefix_f64(s) as i64),
            Value::Null => Value::Null,
        }
    } else if ty.starts_with("REAL") || ty.starts_with("FLOAT") || ty.starts_with("DOUBLE") || ty.starts_with("NUM") {
        match v {
            Value::Int(i) => Value::Real(*i as f64),
            Value::Real(r) => Value::Real(*r),
            Value::Text(s) => Value::Real(parse_prefix_f64(s)),
            Value::Null => Value::Null,
        }
    } else {
        Value::Text(v.render_text())
    }
}

/// Longest numeric prefix, like SQLite text-to-number casts.
fn parse_prefix_f64(s: &str) -> f64 {
    let s = s.trim();
    let mut end = 0;
    let bytes = s.as_bytes();
    let mut seen_dot = false;
    let mut seen_digit = false;
    for (i, b) in bytes.iter().enumerate() {
        match b {
            b'-' | b'+' if i == 0 => end = i + 1,
            b'0'..=b'9' => {
                end = i + 1;
                seen_digit = true;
            }
            b'.' if !seen_dot => {
                seen_dot = true;
                end = i + 1;
            }
            _ => break,
        }
    }
    if !seen_digit {
        return 0.0;
    }
    s[..end].parse().unwrap_or(0.0)
}

fn like_match(text: &str, pattern: &str, escape: Option<char>) -> bool {
    // Case-insensitive for ASCII, like SQLite's default LIKE.
    let t: Vec<char> = text.chars().map(|c| c.to_ascii_lowercase()).collect();
    let p: Vec<char> = pattern.chars().map(|c| c.to_ascii_lowercase()).collect();
    like_rec(&t, &p, escape.map(|c| c.to_ascii_lowercase()))
}

fn like_rec(t: &[char], p: &[char], escape: Option<char>) -> bool {
    if p.is_empty() {
        return t.is_empty();
    }
    if Some(p[0]) == escape && p.len() >= 2 {
        return !t.is_empty() && t[0] == p[1] && like_rec(&t[1..], &p[2..], escape);
    }
    match p[0] {
        '%' => {
            for skip in 0..=t.len() {
                if like_rec(&t[skip..], &p[1..], escape) {
                    return true;
                }
            }
            false
        }
        '_' => !t.is_empty() && like_rec(&t[1..], &p[1..], escape),
        c => !t.is_empty() && t[0] == c && like_rec(&t[1..], &p[1..], escape),
    }
}

fn eval_function(
    f: &sqlparser::ast::Function,
    ctx: Option<&RowCtx>,
    db: &Database,
) -> Result<Value, ExecError> {
    let name = ci(&object_tail(&f.name));
    if aggregate_name(f).is_some() {
        return Err(rt(format!("aggregate `{name}` outside a grouped context")));
    }
    let mut args: Vec<Value> = Vec::new();
    if let FunctionArguments::List(list) = &f.args {
        for arg in &list.args {
            match arg {
                FunctionArg::Unnamed(FunctionArgExpr::Expr(e))
                | FunctionArg::Named {
                    arg: FunctionArgExpr::Expr(e),
                    ..
                } => args.push(eval_expr(e, ctx, db, None)?),
                _ => return Err(rt(format!("unsupported argument in {name}"))),
            }
        }
    }
    let arg = |i: usize| -> Result<&Value, ExecError> {
        args.get(i).ok_or_else(|| rt(format!("{name} missing argument {i}")))
    };
    match name.as_str() {
        "length" => Ok(match arg(0)? {
            Value::Null => Value::Null,
            v => Value::Int(v.render_text().chars().count() as i64),
        }),
        "upper" => Ok(match arg(0)? {
            Value::Null => Value::Null,
            v => Value::Text(v.render_text().to_uppercase()),
        }),
        "lower" => Ok(match arg(0)? {
            Value::Null => Value::Null,
            v => Value::Text(v.render_text().to_lowercase()),
        }),
        "abs" => Ok(match arg(0)? {
            Value::Null => Value::Null,
            Value::Int(i) => Value::Int(i.wrapping_abs()),
            Value::Real(r) => Value::Real(r.abs()),
            Value::Text(s) => Value::Real(s.trim().parse::<f64>().unwrap_or(0.0).abs()),
        }),
        "round" => {
            let v = arg(0)?;
            if v.is_null() {
                return Ok(Value::Null);
            }
            let digits = match args.get(1) {
                Some(Value::Int(d)) => *d,
                _ => 0,
            };
            let factor = 10f64.powi(digits as i32);
            Ok(Value::Real((numeric(v) * factor).round() / factor))
        }
        "substr" | "substring" => {
            let v = arg(0)?;
            if v.is_null() {
                return Ok(Value::Null);
            }
            let text: Vec<char> = v.render_text().chars().collect();
            let start = match arg(1)? {
                Value::Int(i) => *i,
                other => numeric(other) as i64,
            };
            // 1-based; negative counts from the end, like SQLite.
            let begin = if start > 0 {
                (start - 1) as usize
            } else if start < 0 {
                text.len().saturating_sub((-start) as usize)
            } else {
                0
            };
            let len = match args.get(2) {
                Some(Value::Int(l)) if *l >= 0 => *l as usize,
                Some(Value::Null) => return Ok(Value::Null),
                Some(other) => numeric(other).max(0.0) as usize,
                None => text.len().saturating_sub(begin),
            };
            let end = (begin + len).min(text.len());
            let begin = begin.min(text.len());
            Ok(Value::Text(text[begin..end].iter().collect()))
        }
        "instr" => {
            let a = arg(0)?;
            let b = arg(1)?;
            if a.is_null() || b.is_null() {
                return Ok(Value::Null);
            }
            let hay = a.render_text();
            let needle = b.render_text();
            let pos = if needle.is_empty() {
                0
            } else {
                hay.find(&needle)
                    .map(|byte| hay[..byte].chars().count() + 1)
                    .unwrap_or(0)
            };
            Ok(Value::Int(pos as i64))
        }
        "coalesce" | "ifnull" => {
            for v in &args {
                if !v.is_null() {
                    return Ok(v.clone());
                }
            }
            Ok(Value::Null)
        }
        "nullif" => {
            let a = arg(0)?;
            let b = arg(1)?;
            if compare(a, b) == Some(Ordering::Equal) {
                Ok(Value::Null)
            } else {
                Ok(a.clone())
            }
        }
        "iif" => {
            let cond = arg(0)?;
            if truth(cond) == Some(true) {
                Ok(arg(1)?.clone())
            } else {
                Ok(arg(2)?.clone())
            }
        }
        "trim" => Ok(match arg(0)? {
            Value::Null => Value::Null,
            v => Value::Text(v.render_text().trim().to_string()),
        }),
        other => Err(rt(format!("unsupported function `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{clinic_schema, CLINIC_GOLD};
    use crate::values::{populate, PopulateOptions};

    fn clinic_db(seed: u64) -> Database {
        populate(&clinic_schema(), &PopulateOptions { rows_per_table: 16, seed }).unwrap()
    }

    #[test]
    fn select_one_on_empty_database() {
        let db = Database::new(crate::schema::Schema::new("x"));
        let r = execute("SELECT 1", &db).unwrap();
        assert_eq!(r.rows, vec![vec![Value::Int(1)]]);
    }

    #[test]
    fn clinic_gold_matches_brute_force() {
        let db = clinic_db(1);
        let got = execute(CLINIC_GOLD, &db).unwrap();

        // Independent brute force over the raw rows.
        let patient = db.schema.table("patient").unwrap();
        let diagnosis = db.schema.table("diagnosis").unwrap();
        let p_id = patient.column_index("patient_id").unwrap();
        let d_pid = diagnosis.column_index("patient_id").unwrap();
        let d_sev = diagnosis.column_index("severity").unwrap();
        let mut ids = std::collections::BTreeSet::new();
        for p in db.rows("patient").unwrap() {
            for d in db.rows("diagnosis").unwrap() {
                let sev_ok = matches!(&d[d_sev], Value::Int(s) if *s > 3);
                if p[p_id] == d[d_pid] && sev_ok {
                    ids.insert(p[p_id].clone());
                }
            }
        }
        assert_eq!(got.rows, vec![vec![Value::Int(ids.len() as i64)]]);
    }

    #[test]
    fn referencing_dropped_table_errors() {
        let db = clinic_db(1);
        let err = execute("SELECT x FROM billing", &db).unwrap_err();
        assert!(matches!(err, ExecError::Runtime(_)));
    }

    #[test]
    fn integer_division_truncates() {
        let db = Database::new(crate::schema::Schema::new("x"));
        let r = execute("SELECT 7 / 2, 7.0 / 2, 7 % 3, 1 / 0", &db).unwrap();
        assert_eq!(
            r.rows,
            vec![vec![
                Value::Int(3),
                Value::Real(3.5),
                Value::Int(1),
                Value::Null
            ]]
        );
    }

    #[test]
    fn null_semantics_in_where() {
        let db = Database::new(crate::schema::Schema::new("x"));
        let r = execute("SELECT IIF(NULL = NULL, 1, 0), COALESCE(NULL, 5)", &db).unwrap();
        assert_eq!(r.rows, vec![vec![Value::Int(0), Value::Int(5)]]);
    }

    #[test]
    fn group_by_and_having() {
        let db = clinic_db(3);
        let r = execute(
            "SELECT severity, COUNT(*) FROM diagnosis GROUP BY severity HAVING COUNT(*) > 1",
            &db,
        )
        .unwrap();
        for row in &r.rows {
            assert!(matches!(&row[1], Value::Int(n) if *n > 1));
        }
    }

    #[test]
    fn order_by_puts_nulls_first_ascending() {
        let db = clinic_db(5);
        let r = execute("SELECT city FROM patient ORDER BY city", &db).unwrap();
        let first_non_null = r.rows.iter().position(|r| !r[0].is_null());
        if let Some(at) = first_non_null {
            assert!(r.rows[..at].iter().all(|r| r[0].is_null()));
        }
    }

    #[test]
    fn like_is_ascii_case_insensitive() {
        let db = Database::new(crate::schema::Schema::new("x"));
        let r = execute("SELECT 'Alice' LIKE 'al%', 'Alice' LIKE 'z%'", &db).unwrap();
        assert_eq!(r.rows, vec![vec![Value::Int(1), Value::Int(0)]]);
    }

    #[test]
    fn correlated_subquery() {
        let db = clinic_db(7);
        let r = execute(
            "SELECT full_name FROM patient AS P WHERE EXISTS (SELECT 1 FROM diagnosis AS D WHERE D.patient_id = P.patient_id AND D.severity > 2)",
            &db,
        )
        .unwrap();
        let all = execute("SELECT full_name FROM patient", &db).unwrap();
        assert!(r.rows.len() <= all.rows.len());
    }

    #[test]
    fn concat_and_substr_roundtrip() {
        let db = clinic_db(9);
        let a = execute("SELECT birth_date FROM patient", &db).unwrap();
        let b = execute(
            "SELECT SUBSTR(birth_date, 1, 4) || '-' || SUBSTR(birth_date, 6, 2) || '-' || SUBSTR(birth_date, 9, 2) FROM patient",
            &db,
        )
        .unwrap();
        assert!(a.multiset_eq(&b));
    }

    #[test]
    fn union_dedupes_and_union_all_keeps() {
        let db = clinic_db(11);
        let u = execute("SELECT city FROM patient UNION SELECT city FROM patient", &db).unwrap();
        let ua = execute(
            "SELECT city FROM patient UNION ALL SELECT city FROM patient",
            &db,
        )
        .unwrap();
        assert_eq!(ua.rows.len(), 32);
        assert!(u.rows.len() <= 17);
    }

    #[test]
    fn top_level_order_by_detection() {
        assert!(has_top_level_order_by("SELECT city FROM patient ORDER BY city"));
        assert!(!has_top_level_order_by("SELECT city FROM patient"));
        assert!(!has_top_level_order_by(
            "SELECT city FROM patient WHERE patient_id IN (SELECT patient_id FROM diagnosis ORDER BY severity)"
        ));
    }
}
