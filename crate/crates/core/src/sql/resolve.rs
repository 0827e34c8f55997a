//! Scope-aware traversal of SELECT ASTs. One walker drives both analysis
//! (reference extraction) and mutation (rewrites): handlers get each base
//! table occurrence, each resolved column reference site, and each FROM
//! list after its occurrences are enumerated, in a fixed traversal order
//! so a planning pass and an edit pass number sites identically.

use sqlparser::ast::{
    Expr, FunctionArg, FunctionArgExpr, FunctionArguments, GroupByExpr, Join, JoinConstraint,
    JoinOperator, ObjectName, Query, Select, SelectItem, SetExpr, TableFactor, TableWithJoins,
};

use super::SqlError;
use crate::schema::{ci, Schema};

/// One base-table reference in a FROM/JOIN clause.
#[derive(Debug, Clone)]
pub(crate) struct Occurrence {
    pub id: usize,
    /// Canonical table name as spelled in the schema.
    pub table: String,
    /// Name as written in the query (last segment, quoting stripped).
    pub as_written: String,
    pub alias: Option<String>,
    pub select_id: usize,
    pub position: FactorPosition,
}

impl Occurrence {
    /// The qualifier column references use for this occurrence.
    pub fn qualifier(&self) -> &str {
        self.alias.as_deref().unwrap_or(&self.as_written)
    }
}

/// Where a factor sits inside its select's FROM list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FactorPosition {
    /// The leading relation of a FROM entry.
    Lead,
    /// The relation of an INNER/CROSS join node.
    InnerJoin,
    /// The relation of an outer join node.
    OuterJoin,
}

/// Path to a table factor within one FROM list: entry index, then a step
/// per nesting level (0 = the lead relation, k>0 = joins[k-1]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct FactorPath {
    pub entry: usize,
    pub steps: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct Relation {
    pub as_written: String,
    pub alias: Option<String>,
    /// (occurrence id, canonical schema table) for base tables.
    pub base: Option<(usize, String)>,
    /// Output column names for derived tables and CTE references.
    pub output_cols: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Scope {
    pub relations: Vec<Relation>,
    pub select_aliases: Vec<String>,
}

/// Which clause an expression is being walked in. GROUP BY / HAVING /
/// ORDER BY may reference projection aliases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Clause {
    Projection,
    Where,
    JoinOn,
    GroupBy,
    Having,
    OrderBy,
}

impl Clause {
    fn aliases_visible(self) -> bool {
        matches!(self, Clause::GroupBy | Clause::Having | Clause::OrderBy)
    }
}

/// Resolution of one column reference.
#[derive(Debug, Clone)]
pub(crate) enum Resolution {
    /// Base table column; the column name is the schema's spelling.
    Base { occurrence: usize, column: String },
    /// Derived table / CTE output or projection alias: no base column.
    Synthetic,
}

/// What the walker should do with an expression after the handler saw it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ExprAction {
    Descend,
    /// The handler replaced the node; the walker must not descend into it.
    Replaced,
}

/// Resolution service handed to handlers that rewrite whole expressions.
pub(crate) struct ResolveCtx<'a> {
    scopes: &'a [Scope],
    schema: &'a Schema,
    synthetic: &'a [(String, String)],
    aliases_visible: bool,
}

impl ResolveCtx<'_> {
    /// Resolve an Identifier / CompoundIdentifier expression, if it is one.
    pub fn resolve(&self, e: &Expr) -> Option<Resolution> {
        match e {
            Expr::Identifier(ident) => {
                if ident.quote_style.is_none() && ident.value.eq_ignore_ascii_case("null") {
                    return None;
                }
                resolve_unqualified(
                    self.scopes,
                    self.schema,
                    self.synthetic,
                    &ident.value,
                    self.aliases_visible,
                )
            }
            Expr::CompoundIdentifier(parts) if parts.len() >= 2 => {
                let qualifier = &parts[parts.len() - 2].value;
                let column = &parts[parts.len() - 1].value;
                let rel = resolve_qualifier(self.scopes, qualifier)?;
                match &rel.base {
                    Some((occ, table)) => {
                        if let Some(col) =
                            self.schema.table(table).and_then(|t| t.column(column))
                        {
                            Some(Resolution::Base {
                                occurrence: *occ,
                                column: col.name.clone(),
                            })
                        } else if is_synthetic(self.synthetic, table, column) {
                            Some(Resolution::Synthetic)
                        } else {
                            None
                        }
                    }
                    None => Some(Resolution::Synthetic),
                }
            }
            _ => None,
        }
    }

    /// Qualifier string of the occurrence, if the expression is a qualified
    /// reference.
    pub fn qualifier_of(&self, e: &Expr) -> Option<String> {
        match e {
            Expr::CompoundIdentifier(parts) if parts.len() >= 2 => {
                Some(parts[parts.len() - 2].value.clone())
            }
            _ => None,
        }
    }
}

fn is_synthetic(synthetic: &[(String, String)], table: &str, column: &str) -> bool {
    let (t, c) = (ci(table), ci(column));
    synthetic.iter().any(|(st, sc)| *st == t && *sc == c)
}

pub(crate) trait Handler {
    /// A base table factor, called before any of its edits. The factor may
    /// be renamed/re-aliased in place.
    fn table_factor(
        &mut self,
        _occ: &Occurrence,
        _factor: &mut TableFactor,
    ) -> Result<(), SqlError> {
        Ok(())
    }

    /// A resolved column reference site. `expr` is the Identifier or
    /// CompoundIdentifier node and may be replaced wholesale.
    fn column_site(
        &mut self,
        _site: usize,
        _resolution: &Resolution,
        _expr: &mut Expr,
        _clause: Clause,
    ) -> Result<(), SqlError> {
        Ok(())
    }

    /// A qualified wildcard (`T.*`). The object name may be edited.
    fn qualified_wildcard(
        &mut self,
        _occ: Option<&Occurrence>,
        _name: &mut ObjectName,
    ) -> Result<(), SqlError> {
        Ok(())
    }

    /// An unqualified `*` in the projection of a select whose scope holds
    /// the given relations.
    fn bare_wildcard(&mut self, _select_id: usize, _scope: &Scope) -> Result<(), SqlError> {
        Ok(())
    }

    /// A select's WHERE slot, after `from_list` and before the selection is
    /// walked; handlers may AND extra predicates in and have their column
    /// references resolved by the subsequent walk.
    fn where_clause(
        &mut self,
        _select_id: usize,
        _selection: &mut Option<Expr>,
    ) -> Result<(), SqlError> {
        Ok(())
    }

    /// A select's FROM list, after occurrence enumeration and ON-clause
    /// walking; structural rewrites happen here. `paths` maps occurrence id
    /// to its factor location at this level (occurrences inside derived
    /// subqueries are not listed).
    fn from_list(
        &mut self,
        _select_id: usize,
        _from: &mut Vec<TableWithJoins>,
        _paths: &[(usize, FactorPath)],
    ) -> Result<(), SqlError> {
        Ok(())
    }

    /// The query contains a set operation (UNION/INTERSECT/EXCEPT).
    fn set_operation(&mut self) -> Result<(), SqlError> {
        Ok(())
    }

    /// Every expression node, pre-order, with a resolver for the current
    /// scope. Returning [`ExprAction::Replaced`] stops descent.
    fn expr_node(
        &mut self,
        _expr: &mut Expr,
        _clause: Clause,
        _ctx: &ResolveCtx<'_>,
    ) -> Result<ExprAction, SqlError> {
        Ok(ExprAction::Descend)
    }

    /// Each projection item before it is walked. Return true to take it
    /// over (the walker will not descend into it).
    fn projection_item(
        &mut self,
        _item: &mut SelectItem,
        _ctx: &ResolveCtx<'_>,
    ) -> Result<bool, SqlError> {
        Ok(false)
    }

    /// An identifier that resolves to nothing in any scope.
    fn unresolved(&mut self, ident: &str) -> Result<(), SqlError> {
        Err(SqlError::Unresolved(ident.to_string()))
    }
}

pub(crate) struct Walker<'s, H> {
    schema: &'s Schema,
    handler: &'s mut H,
    occ_count: usize,
    site_count: usize,
    select_count: usize,
    /// CTE names visible to table factors, innermost last.
    ctes: Vec<(String, Vec<String>)>,
    /// (table, column) pairs (lowercase) treated as resolvable even though
    /// the schema does not hold them; rewriters introducing new columns
    /// register them here.
    synthetic: Vec<(String, String)>,
}

pub(crate) fn walk_query<H: Handler>(
    query: &mut Query,
    schema: &Schema,
    handler: &mut H,
) -> Result<(), SqlError> {
    walk_query_with(query, schema, handler, &[])
}

pub(crate) fn walk_query_with<H: Handler>(
    query: &mut Query,
    schema: &Schema,
    handler: &mut H,
    synthetic: &[(String, String)],
) -> Result<(), SqlError> {
    let mut walker = Walker {
        schema,
        handler,
        occ_count: 0,
        site_count: 0,
        select_count: 0,
        ctes: Vec::new(),
        synthetic: synthetic
            .iter()
            .map(|(t, c)| (ci(t), ci(c)))
            .collect(),
    };
    walker.query(query, &[])?;
    Ok(())
}

impl<'s, H: Handler> Walker<'s, H> {
    fn query(&mut self, query: &mut Query, outer: &[Scope]) -> Result<Scope, SqlError> {
        let cte_depth = self.ctes.len();
        if let Some(with) = query.with.as_mut() {
            for cte in &mut with.cte_tables {
                let scope = self.query(&mut cte.query, outer)?;
                let cols = projection_names(&cte.query, &scope, self.schema);
                self.ctes.push((cte.alias.name.value.clone(), cols));
            }
        }

        let scope = self.set_expr(&mut query.body, outer)?;

        if let Some(order_by) = query.order_by.as_mut() {
            let mut scopes: Vec<Scope> = outer.to_vec();
            scopes.push(scope.clone());
            for item in &mut order_by.exprs {
                self.expr(&mut item.expr, &scopes, Clause::OrderBy)?;
            }
        }
        if let Some(limit) = query.limit.as_mut() {
            let scopes: Vec<Scope> = outer.to_vec();
            self.expr(limit, &scopes, Clause::OrderBy)?;
        }

        self.ctes.truncate(cte_depth);
        Ok(scope)
    }

    fn set_expr(&mut self, body: &mut SetExpr, outer: &[Scope]) -> Result<Scope, SqlError> {
        match body {
            SetExpr::Select(select) => self.select(select, outer),
            SetExpr::Query(query) => self.query(query, outer),
            SetExpr::SetOperation { left, right, .. } => {
                self.handler.set_operation()?;
                let scope = self.set_expr(left, outer)?;
                self.set_expr(right, outer)?;
                Ok(scope)
            }
            _ => Ok(Scope::default()),
        }
    }

    fn select(&mut self, select: &mut Select, outer: &[Scope]) -> Result<Scope, SqlError> {
        let select_id = self.select_count;
        self.select_count += 1;

        let mut scope = Scope::default();
        for item in &select.projection {
            if let SelectItem::ExprWithAlias { alias, .. } = item {
                scope.select_aliases.push(alias.value.clone());
            }
        }

        let mut paths: Vec<(usize, FactorPath)> = Vec::new();
        for (entry, twj) in select.from.iter_mut().enumerate() {
            let mut path = FactorPath { entry, steps: vec![0] };
            self.factor(
                &mut twj.relation,
                FactorPosition::Lead,
                select_id,
                &mut scope,
                outer,
                &mut paths,
                &mut path,
            )?;
            for (j, join) in twj.joins.iter_mut().enumerate() {
                let position = match join.join_operator {
                    JoinOperator::Inner(_) | JoinOperator::CrossJoin => FactorPosition::InnerJoin,
                    _ => FactorPosition::OuterJoin,
                };
                let mut path = FactorPath { entry, steps: vec![j + 1] };
                self.factor(
                    &mut join.relation,
                    position,
                    select_id,
                    &mut scope,
                    outer,
                    &mut paths,
                    &mut path,
                )?;
            }
        }

        // ON clauses see the full select scope.
        let mut scopes: Vec<Scope> = outer.to_vec();
        scopes.push(scope);
        for twj in select.from.iter_mut() {
            for join in twj.joins.iter_mut() {
                self.join_constraint(&mut join.join_operator, &scopes)?;
            }
        }
        let mut scope = scopes.pop().unwrap();

        self.handler.from_list(select_id, &mut select.from, &paths)?;
        self.handler.where_clause(select_id, &mut select.selection)?;

        scopes.push(scope);
        for item in &mut select.projection {
            if matches!(
                item,
                SelectItem::UnnamedExpr(_) | SelectItem::ExprWithAlias { .. }
            ) {
                let ctx = ResolveCtx {
                    scopes: &scopes,
                    schema: self.schema,
                    synthetic: &self.synthetic,
                    aliases_visible: false,
                };
                if self.handler.projection_item(item, &ctx)? {
                    continue;
                }
            }
            match item {
                SelectItem::UnnamedExpr(e) => self.expr(e, &scopes, Clause::Projection)?,
                SelectItem::ExprWithAlias { expr, .. } => {
                    self.expr(expr, &scopes, Clause::Projection)?
                }
                SelectItem::QualifiedWildcard(name, _) => {
                    let occ = resolve_qualifier(&scopes, &object_tail(name))
                        .and_then(|r| r.base.clone());
                    let occ_info = occ.map(|(id, table)| Occurrence {
                        id,
                        table,
                        as_written: object_tail(name),
                        alias: None,
                        select_id,
                        position: FactorPosition::Lead,
                    });
                    self.handler.qualified_wildcard(occ_info.as_ref(), name)?;
                }
                SelectItem::Wildcard(_) => {
                    let scope = scopes.last().unwrap();
                    self.handler.bare_wildcard(select_id, scope)?;
                }
            }
        }
        if let Some(selection) = select.selection.as_mut() {
            self.expr(selection, &scopes, Clause::Where)?;
        }
        if let GroupByExpr::Expressions(exprs, _) = &mut select.group_by {
            for e in exprs {
                self.expr(e, &scopes, Clause::GroupBy)?;
            }
        }
        if let Some(having) = select.having.as_mut() {
            self.expr(having, &scopes, Clause::Having)?;
        }

        scope = scopes.pop().unwrap();
        Ok(scope)
    }

    #[allow(clippy::too_many_arguments)]
    fn factor(
        &mut self,
        factor: &mut TableFactor,
        position: FactorPosition,
        select_id: usize,
        scope: &mut Scope,
        outer: &[Scope],
        paths: &mut Vec<(usize, FactorPath)>,
        path: &mut FactorPath,
    ) -> Result<(), SqlError> {
        match factor {
            TableFactor::Table { name, alias, .. } => {
                let as_written = object_tail(name);
                let alias_name = alias.as_ref().map(|a| a.name.value.clone());
                if let Some((_, cols)) = self
                    .ctes
                    .iter()
                    .rev()
                    .find(|(n, _)| ci(n) == ci(&as_written))
                {
                    scope.relations.push(Relation {
                        as_written,
                        alias: alias_name,
                        base: None,
                        output_cols: Some(cols.clone()),
                    });
                    return Ok(());
                }
                let Some(table) = self.schema.table(&as_written) else {
                    return self.handler.unresolved(&as_written);
                };
                let occ = Occurrence {
                    id: self.occ_count,
                    table: table.name.clone(),
                    as_written: as_written.clone(),
                    alias: alias_name.clone(),
                    select_id,
                    position,
                };
                self.occ_count += 1;
                paths.push((occ.id, path.clone()));
                self.handler.table_factor(&occ, factor)?;
                scope.relations.push(Relation {
                    as_written,
                    alias: alias_name,
                    base: Some((occ.id, occ.table)),
                    output_cols: None,
                });
            }
            TableFactor::Derived { subquery, alias, .. } => {
                let sub_scope = self.query(subquery, outer)?;
                let cols = projection_names(subquery, &sub_scope, self.schema);
                if let Some(alias) = alias {
                    scope.relations.push(Relation {
                        as_written: alias.name.value.clone(),
                        alias: Some(alias.name.value.clone()),
                        base: None,
                        output_cols: Some(cols),
                    });
                }
            }
            TableFactor::NestedJoin {
                table_with_joins, ..
            } => {
                let mut inner_path = path.clone();
                inner_path.steps.push(0);
                self.factor(
                    &mut table_with_joins.relation,
                    position,
                    select_id,
                    scope,
                    outer,
                    paths,
                    &mut inner_path,
                )?;
                for (j, join) in table_with_joins.joins.iter_mut().enumerate() {
                    let inner_position = match join.join_operator {
                        JoinOperator::Inner(_) | JoinOperator::CrossJoin => {
                            FactorPosition::InnerJoin
                        }
                        _ => FactorPosition::OuterJoin,
                    };
                    let mut inner_path = path.clone();
                    inner_path.steps.push(j + 1);
                    self.factor(
                        &mut join.relation,
                        inner_position,
                        select_id,
                        scope,
                        outer,
                        paths,
                        &mut inner_path,
                    )?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn join_constraint(
        &mut self,
        op: &mut JoinOperator,
        scopes: &[Scope],
    ) -> Result<(), SqlError> {
        let constraint = match op {
            JoinOperator::Inner(c)
            | JoinOperator::LeftOuter(c)
            | JoinOperator::RightOuter(c)
            | JoinOperator::FullOuter(c)
            | JoinOperator::Semi(c)
            | JoinOperator::Anti(c) => c,
            _ => return Ok(()),
        };
        if let JoinConstraint::On(expr) = constraint {
            self.expr(expr, scopes, Clause::JoinOn)?;
        }
        Ok(())
    }

    fn expr(&mut self, e: &mut Expr, scopes: &[Scope], clause: Clause) -> Result<(), SqlError> {
        {
            let ctx = ResolveCtx {
                scopes,
                schema: self.schema,
                synthetic: &self.synthetic,
                aliases_visible: clause.aliases_visible(),
            };
            let handler = &mut *self.handler;
            if handler.expr_node(e, clause, &ctx)? == ExprAction::Replaced {
                return Ok(());
            }
        }
        match e {
            Expr::Identifier(ident) => {
                if ident.quote_style.is_none() && ident.value.eq_ignore_ascii_case("null") {
                    return Ok(());
                }
                let resolution = resolve_unqualified(
                    scopes,
                    self.schema,
                    &self.synthetic,
                    &ident.value,
                    clause.aliases_visible(),
                );
                match resolution {
                    Some(r) => {
                        let site = self.site();
                        self.handler.column_site(site, &r, e, clause)
                    }
                    None => self.handler.unresolved(&ident.value),
                }
            }
            Expr::CompoundIdentifier(parts) => {
                if parts.len() < 2 {
                    return Ok(());
                }
                let qualifier = parts[parts.len() - 2].value.clone();
                let column = parts[parts.len() - 1].value.clone();
                match resolve_qualifier(scopes, &qualifier) {
                    Some(rel) => {
                        let resolution = match &rel.base {
                            Some((occ, table)) => {
                                let canonical = self
                                    .schema
                                    .table(table)
                                    .and_then(|t| t.column(&column))
                                    .map(|c| c.name.clone());
                                match canonical {
                                    Some(col) => Resolution::Base {
                                        occurrence: *occ,
                                        column: col,
                                    },
                                    None if is_synthetic(&self.synthetic, table, &column) => {
                                        Resolution::Synthetic
                                    }
                                    None => return self.handler.unresolved(&column),
                                }
                            }
                            None => {
                                let known = rel
                                    .output_cols
                                    .as_ref()
                                    .is_some_and(|cols| cols.iter().any(|c| ci(c) == ci(&column)));
                                if known {
                                    Resolution::Synthetic
                                } else {
                                    return self.handler.unresolved(&column);
                                }
                            }
                        };
                        let site = self.site();
                        self.handler.column_site(site, &resolution, e, clause)
                    }
                    None => self.handler.unresolved(&qualifier),
                }
            }
            Expr::BinaryOp { left, right, .. } => {
                self.expr(left, scopes, clause)?;
                self.expr(right, scopes, clause)
            }
            Expr::UnaryOp { expr, .. }
            | Expr::Nested(expr)
            | Expr::Cast { expr, .. }
            | Expr::Collate { expr, .. }
            | Expr::IsNull(expr)
            | Expr::IsNotNull(expr)
            | Expr::IsTrue(expr)
            | Expr::IsNotTrue(expr)
            | Expr::IsFalse(expr)
            | Expr::IsNotFalse(expr) => self.expr(expr, scopes, clause),
            Expr::IsDistinctFrom(a, b) | Expr::IsNotDistinctFrom(a, b) => {
                self.expr(a, scopes, clause)?;
                self.expr(b, scopes, clause)
            }
            Expr::InList { expr, list, .. } => {
                self.expr(expr, scopes, clause)?;
                for item in list {
                    self.expr(item, scopes, clause)?;
                }
                Ok(())
            }
            Expr::InSubquery { expr, subquery, .. } => {
                self.expr(expr, scopes, clause)?;
                self.query(subquery, scopes)?;
                Ok(())
            }
            Expr::Between {
                expr, low, high, ..
            } => {
                self.expr(expr, scopes, clause)?;
                self.expr(low, scopes, clause)?;
                self.expr(high, scopes, clause)
            }
            Expr::Like { expr, pattern, .. }
            | Expr::ILike { expr, pattern, .. }
            | Expr::SimilarTo { expr, pattern, .. } => {
                self.expr(expr, scopes, clause)?;
                self.expr(pattern, scopes, clause)
            }
            Expr::Case {
                operand,
                conditions,
                results,
                else_result,
            } => {
                if let Some(op) = operand {
                    self.expr(op, scopes, clause)?;
                }
                for c in conditions {
                    self.expr(c, scopes, clause)?;
                }
                for r in results {
                    self.expr(r, scopes, clause)?;
                }
                if let Some(er) = else_result {
                    self.expr(er, scopes, clause)?;
                }
                Ok(())
            }
            Expr::Function(f) => {
                if let FunctionArguments::List(list) = &mut f.args {
                    for arg in &mut list.args {
                        if let FunctionArg::Unnamed(FunctionArgExpr::Expr(e))
                        | FunctionArg::Named {
                            arg: FunctionArgExpr::Expr(e),
                            ..
                        } = arg
                        {
                            self.expr(e, scopes, clause)?;
                        }
                    }
                }
                Ok(())
            }
            Expr::Exists { subquery, .. } | Expr::Subquery(subquery) => {
                self.query(subquery, scopes)?;
                Ok(())
            }
            Expr::Tuple(items) => {
                for item in items {
                    self.expr(item, scopes, clause)?;
                }
                Ok(())
            }
            Expr::Substring {
                expr,
                substring_from,
                substring_for,
                ..
            } => {
                self.expr(expr, scopes, clause)?;
                if let Some(f) = substring_from {
                    self.expr(f, scopes, clause)?;
                }
                if let Some(f) = substring_for {
                    self.expr(f, scopes, clause)?;
                }
                Ok(())
            }
            Expr::Trim { expr, .. } => self.expr(expr, scopes, clause),
            Expr::Extract { expr, .. } | Expr::Ceil { expr, .. } | Expr::Floor { expr, .. } => {
                self.expr(expr, scopes, clause)
            }
            Expr::Position { expr, r#in } => {
                self.expr(expr, scopes, clause)?;
                self.expr(r#in, scopes, clause)
            }
            _ => Ok(()),
        }
    }

    fn site(&mut self) -> usize {
        let s = self.site_count;
        self.site_count += 1;
        s
    }
}

/// First relation (inner scope outward, FROM order) matching `qualifier`.
pub(crate) fn resolve_qualifier<'a>(scopes: &'a [Scope], qualifier: &str) -> Option<&'a Relation> {
    let key = ci(qualifier);
    for scope in scopes.iter().rev() {
        for rel in &scope.relations {
            let hit = match &rel.alias {
                Some(alias) => ci(alias) == key,
                None => ci(&rel.as_written) == key,
            };
            if hit {
                return Some(rel);
            }
        }
    }
    None
}

/// Resolve an unqualified column name: projection aliases first when the
/// clause allows them, then the first FROM-listed relation owning the name,
/// inner scope outward.
pub(crate) fn resolve_unqualified(
    scopes: &[Scope],
    schema: &Schema,
    synthetic: &[(String, String)],
    column: &str,
    aliases_visible: bool,
) -> Option<Resolution> {
    let key = ci(column);
    if aliases_visible {
        if let Some(scope) = scopes.last() {
            if scope.select_aliases.iter().any(|a| ci(a) == key) {
                return Some(Resolution::Synthetic);
            }
        }
    }
    for scope in scopes.iter().rev() {
        for rel in &scope.relations {
            if let Some((occ, table)) = &rel.base {
                if let Some(col) = schema.table(table).and_then(|t| t.column(column)) {
                    return Some(Resolution::Base {
                        occurrence: *occ,
                        column: col.name.clone(),
                    });
                }
                if is_synthetic(synthetic, table, column) {
                    return Some(Resolution::Synthetic);
                }
            } else if let Some(cols) = &rel.output_cols {
                if cols.iter().any(|c| ci(c) == key) {
                    return Some(Resolution::Synthetic);
                }
            }
        }
    }
    None
}

/// Output column names of a query, for derived tables and CTEs.
pub(crate) fn projection_names(query: &Query, scope: &Scope, schema: &Schema) -> Vec<String> {
    let mut out = Vec::new();
    if let SetExpr::Select(select) = &query.body {
        for item in &select.projection {
            match item {
                SelectItem::UnnamedExpr(Expr::Identifier(i)) => out.push(i.value.clone()),
                SelectItem::UnnamedExpr(Expr::CompoundIdentifier(parts)) => {
                    if let Some(last) = parts.last() {
                        out.push(last.value.clone());
                    }
                }
                SelectItem::ExprWithAlias { alias, .. } => out.push(alias.value.clone()),
                SelectItem::Wildcard(_) => {
                    for rel in &scope.relations {
                        if let Some((_, table)) = &rel.base {
                            if let Some(t) = schema.table(table) {
                                out.extend(t.columns.iter().map(|c| c.name.clone()));
                            }
                        } else if let Some(cols) = &rel.output_cols {
                            out.extend(cols.iter().cloned());
                        }
                    }
                }
                SelectItem::QualifiedWildcard(name, _) => {
                    let tail = object_tail(name);
                    if let Some(rel) = scope
                        .relations
                        .iter()
                        .find(|r| ci(r.alias.as_deref().unwrap_or(&r.as_written)) == ci(&tail))
                    {
                        if let Some((_, table)) = &rel.base {
                            if let Some(t) = schema.table(table) {
                                out.extend(t.columns.iter().map(|c| c.name.clone()));
                            }
                        } else if let Some(cols) = &rel.output_cols {
                            out.extend(cols.iter().cloned());
                        }
                    }
                }
                _ => {}
            }
        }
    }
    out
}

pub(crate) fn object_tail(name: &ObjectName) -> String {
    name.0.last().map(|i| i.value.clone()).unwrap_or_default()
}

/// Navigate to the factor a path points at.
pub(crate) fn factor_at<'a>(
    from: &'a mut [TableWithJoins],
    path: &FactorPath,
) -> Option<&'a mut TableFactor> {
    let twj = from.get_mut(path.entry)?;
    let mut relation: &mut TableFactor = if path.steps[0] == 0 {
        &mut twj.relation
    } else {
        &mut twj.joins.get_mut(path.steps[0] - 1)?.relation
    };
    for step in &path.steps[1..] {
        let TableFactor::NestedJoin {
            table_with_joins, ..
        } = relation
        else {
            return None;
        };
        relation = if *step == 0 {
            &mut table_with_joins.relation
        } else {
            &mut table_with_joins.joins.get_mut(step - 1)?.relation
        };
    }
    Some(relation)
}

/// Insert joins immediately after the factor at `path`, inside the joins
/// list that owns it.
pub(crate) fn splice_joins_after(
    from: &mut [TableWithJoins],
    path: &FactorPath,
    new_joins: Vec<Join>,
) -> bool {
    let Some(twj) = from.get_mut(path.entry) else {
        return false;
    };
    // Walk to the TableWithJoins owning the final step.
    let mut owner: &mut TableWithJoins = twj;
    for step in &path.steps[..path.steps.len() - 1] {
        let relation = if *step == 0 {
            &mut owner.relation
        } else {
            match owner.joins.get_mut(step - 1) {
                Some(j) => &mut j.relation,
                None => return false,
            }
        };
        let TableFactor::NestedJoin {
            table_with_joins, ..
        } = relation
        else {
            return false;
        };
        owner = table_with_joins;
    }
    let last = *path.steps.last().unwrap();
    let at = if last == 0 { 0 } else { last };
    for (i, j) in new_joins.into_iter().enumerate() {
        owner.joins.insert(at + i, j);
    }
    true
}

/// Remove the join node a path points at. Only valid for paths whose final
/// step is a join (> 0).
pub(crate) fn remove_join_at(from: &mut [TableWithJoins], path: &FactorPath) -> bool {
    let Some(twj) = from.get_mut(path.entry) else {
        return false;
    };
    let mut owner: &mut TableWithJoins = twj;
    for step in &path.steps[..path.steps.len() - 1] {
        let relation = if *step == 0 {
            &mut owner.relation
        } else {
            match owner.joins.get_mut(step - 1) {
                Some(j) => &mut j.relation,
                None => return false,
            }
        };
        let TableFactor::NestedJoin {
            table_with_joins, ..
        } = relation
        else {
            return false;
        };
        owner = table_with_joins;
    }
    let last = *path.steps.last().unwrap();
    if last == 0 {
        return false;
    }
    owner.joins.remove(last - 1);
    true
}
